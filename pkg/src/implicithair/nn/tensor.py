"""A small reverse-mode autodiff tape over numpy arrays.

Only the operations the networks in this package need are provided. Every op
returns a new :class:`Tensor` holding a closure that maps the output gradient
to the gradients of its parents; :meth:`Tensor.backward` replays the closures
in reverse topological order.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DimensionError
from ..interp import trilinear_corners

DEBUG_FINITE = False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf that requires grad."""
        if grad is None:
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    return Tensor(arr)


def _result(data, parents, backward):
    if DEBUG_FINITE and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced in forward pass")
    rg = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=rg, parents=parents if rg else (), backward=backward if rg else None)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b):
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    out = a.data + b.data
    return _result(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    out = a.data - b.data
    return _result(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    out = a.data * b.data

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), backward)


def matmul(a, b):
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} and {b.shape} are incompatible")
    out = a.data @ b.data

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), backward)


def linear(x, w, b=None):
    """``x @ w + b`` for ``x`` of shape (N, in)."""
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"linear input {x.shape} does not match weight {w.shape}")
    out = x.data @ w.data
    if b is not None:
        out = out + b.data
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gx = g @ w.data.T if x.requires_grad else None
        gw = x.data.T @ g if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return _result(out, parents, backward)


def relu(x):
    mask = x.data > 0
    return _result(x.data * mask, (x,), lambda g: (g * mask,))


def sigmoid(x):
    out = 0.5 * (np.tanh(0.5 * x.data) + 1.0)
    return _result(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x):
    out = np.tanh(x.data)
    return _result(out, (x,), lambda g: (g * (1.0 - out * out),))


def absolute(x):
    sign = np.sign(x.data)
    return _result(np.abs(x.data), (x,), lambda g: (g * sign,))


def log(x):
    return _result(np.log(x.data), (x,), lambda g: (g / x.data,))


def clamp(x, lo, hi):
    inside = (x.data >= lo) & (x.data <= hi)
    return _result(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


def activation(x, kind):
    if kind in (None, "linear"):
        return x
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    raise ValueError(f"unknown activation {kind!r}")


def sum_(x, axis=None, keepdims=False):
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype, copy=True),)

    return _result(out, (x,), backward)


def mean(x, axis=None, keepdims=False):
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(x, shape):
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes):
    inv = np.argsort(axes)
    return _result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def getitem(x, idx):
    out = x.data[idx]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _result(out, (x,), backward)


def take_rows(x, index):
    """Gather rows ``x[index]`` with a scatter-add backward."""
    index = np.asarray(index)
    out = x.data[index]

    def backward(g):
        gx = np.zeros_like(x.data)
        flat = g.reshape(-1, *x.shape[1:])
        np.add.at(gx, index.reshape(-1), flat)
        return (gx,)

    return _result(out, (x,), backward)


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(out, tuple(tensors), backward)


def expand(x, axis, n):
    """Insert a new axis of length ``n`` by duplication."""
    out = np.repeat(np.expand_dims(x.data, axis), n, axis=axis)
    return _result(out, (x,), lambda g: (g.sum(axis=axis),))


def _axis_matrix(n_in, n_out):
    src = np.minimum((np.arange(n_out) * n_in) // n_out, n_in - 1)
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), src] = 1.0
    return m


def resize_nearest(x, size):
    """Nearest-neighbour resize of the trailing spatial axes of (B, C, *S) to ``size``."""
    size = tuple(int(s) for s in size)
    nd = len(size)
    spatial = x.shape[2:]
    if len(spatial) != nd:
        raise DimensionError(f"resize target {size} does not match input spatial dims {spatial}")
    mats = [_axis_matrix(n_in, n_out).astype(x.dtype) for n_in, n_out in zip(spatial, size)]
    out = x.data
    for k, m in enumerate(mats):
        ax = 2 + k
        out = np.moveaxis(np.tensordot(out, m, axes=([ax], [1])), -1, ax)

    def backward(g):
        for k, m in enumerate(mats):
            ax = 2 + k
            g = np.moveaxis(np.tensordot(g, m, axes=([ax], [0])), -1, ax)
        return (g,)

    return _result(np.ascontiguousarray(out), (x,), backward)


def _conv_out_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def conv_forward_naive(x, w, b, stride, pad):
    """Direct loop convolution over output positions; reference for the fast path."""
    B, C = x.shape[:2]
    O = w.shape[0]
    ks = w.shape[2:]
    nd = len(ks)
    xp = np.pad(x, [(0, 0), (0, 0)] + [(pad, pad)] * nd)
    osz = tuple(_conv_out_size(n, k, stride, pad) for n, k in zip(x.shape[2:], ks))
    out = np.zeros((B, O) + osz, dtype=x.dtype)
    for pos in np.ndindex(*osz):
        sl = tuple(slice(p * stride, p * stride + k) for p, k in zip(pos, ks))
        patch = xp[(slice(None), slice(None)) + sl]
        for o in range(O):
            out[(slice(None), o) + pos] = np.sum(patch * w[o], axis=tuple(range(1, 2 + nd)))
    if b is not None:
        out += b.reshape((1, O) + (1,) * nd)
    return out


def _zero_pad(x, pad, nd):
    """Zero padding of the trailing ``nd`` axes (cheaper than np.pad for constant zeros)."""
    xp = np.zeros(x.shape[:-nd] + tuple(n + 2 * pad for n in x.shape[-nd:]), dtype=x.dtype)
    xp[(Ellipsis,) + (slice(pad, -pad),) * nd] = x
    return xp


def _im2col(x, ks, stride, pad):
    """Column matrix (B * prod(S'), C * prod(K)) of x (B, C, *S) plus padded input and output size."""
    nd = len(ks)
    spatial_axes = tuple(range(2, 2 + nd))
    xp = _zero_pad(x, pad, nd) if pad else x
    win = sliding_window_view(xp, ks, axis=spatial_axes)
    if stride != 1:
        win = win[(slice(None), slice(None)) + (slice(None, None, stride),) * nd]
    # win: (B, C, *S', *K) -> (B, *S', C, *K)
    osz = win.shape[2:2 + nd]
    win = np.moveaxis(win, 1, 1 + nd)
    cols = win.reshape(x.shape[0] * int(np.prod(osz)), -1)
    return cols, xp.shape, osz


def _conv_forward_fast(x, w, stride, pad):
    nd = w.ndim - 2
    cols, xp_shape, osz = _im2col(x, w.shape[2:], stride, pad)
    out = cols @ w.reshape(w.shape[0], -1).T
    out = out.reshape((x.shape[0],) + osz + (w.shape[0],))
    return np.ascontiguousarray(np.moveaxis(out, -1, 1)), cols, xp_shape


def conv(x, w, b=None, stride=1, pad=0):
    """N-d cross-correlation of x (B, C, *S) with w (O, C, *K)."""
    x = as_tensor(x)
    nd = w.ndim - 2
    if x.ndim != nd + 2 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"conv input {x.shape} does not match weight {w.shape}")
    out, cols, xp_shape = _conv_forward_fast(x.data, w.data, stride, pad)
    if b is not None:
        out += b.data.reshape((1, -1) + (1,) * nd)
    osz = out.shape[2:]
    ks = w.shape[2:]
    B, C, O = x.shape[0], x.shape[1], w.shape[0]
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gx = gw = gb = None
        g2 = np.moveaxis(g, 1, -1).reshape(-1, O)
        if w.requires_grad:
            gw = (g2.T @ cols).reshape(w.shape)
        if x.requires_grad:
            # (C, *K, B, *S'): each kernel offset is a contiguous (B, *S') block per channel
            gq = np.tensordot(w.data.reshape(O, -1), g.reshape(B, O, -1), axes=([0], [1]))
            gq = gq.reshape((C,) + ks + (B,) + osz)
            gxp = np.zeros(xp_shape, dtype=x.dtype)
            for koff in np.ndindex(*ks):
                sl = tuple(slice(k, k + stride * (n - 1) + 1, stride) for k, n in zip(koff, osz))
                gxp[(slice(None), slice(None)) + sl] += gq[(slice(None),) + koff].swapaxes(0, 1)
            if pad:
                gxp = gxp[(slice(None), slice(None)) + (slice(pad, -pad),) * nd]
            gx = gxp
        if b is not None:
            gb = g.sum(axis=(0,) + tuple(range(2, 2 + nd)))
            return gx, gw, gb
        return gx, gw

    return _result(out, parents, backward)


def grid_sample3d(vol, coords, batch=None):
    """Trilinear lookup of vol (B, C, D, H, W) at voxel coords (N, 3) ordered (x, y, z).

    Integer coordinates hit voxel centers exactly. Coordinates are clamped to the
    grid; ``batch`` selects the volume per point (defaults to 0).
    """
    B, C, D, H, W = vol.shape
    n = coords.shape[0]
    batch = np.zeros(n, dtype=np.int64) if batch is None else np.asarray(batch, dtype=np.int64)
    idx, wts = trilinear_corners(np.asarray(coords, dtype=np.float64), (D, H, W))
    idx = idx + (batch * (D * H * W))[:, None]
    wts = wts.astype(vol.dtype)
    flat = vol.data.transpose(0, 2, 3, 4, 1).reshape(-1, C)
    out = np.einsum("nk,nkc->nc", wts, flat[idx])

    def backward(g):
        gflat = np.zeros_like(flat)
        np.add.at(gflat, idx.reshape(-1), (wts[:, :, None] * g[:, None, :]).reshape(-1, C))
        return (gflat.reshape(B, D, H, W, C).transpose(0, 4, 1, 2, 3),)

    return _result(out, (vol,), backward)


def grid_sample2d(img, coords, batch=None):
    """Bilinear lookup of img (B, C, H, W) at pixel coords (N, 2) ordered (x, y), centers at integers."""
    B, C, H, W = img.shape
    c3 = np.zeros((coords.shape[0], 3))
    c3[:, :2] = coords
    vol = reshape(img, (B, C, 1, H, W))
    return grid_sample3d(vol, c3, batch)
