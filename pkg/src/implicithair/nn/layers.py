"""Parameterised layers, layer descriptors and network digests."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Iterator

import numpy as np

from ..errors import DimensionError
from . import tensor as T
from .tensor import Tensor


@dataclass(frozen=True)
class LayerSpec:
    """Descriptor of one layer: used to check shape compatibility and to digest a network."""

    name: str
    kind: str  # "dense" | "conv2d" | "conv3d"
    in_ch: int
    out_ch: int
    kernel: int = 1
    stride: int = 1
    activation: str = "linear"


def check_chain(specs):
    """Raise if consecutive layers in a sequential chain disagree on channel counts."""
    for a, b in zip(specs, specs[1:]):
        if a.out_ch != b.in_ch:
            raise ValueError(f"layer {b.name!r} expects {b.in_ch} inputs but {a.name!r} gives {a.out_ch}")


def spec_digest(specs, extra=None) -> str:
    payload = {"layers": [asdict(s) for s in specs], "extra": extra or {}}
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def he_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Container that discovers parameters from its attributes, in definition order."""

    def named_parameters(self, prefix="") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def layer_specs(self) -> list[LayerSpec]:
        out = []
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(val, Module):
                out.extend(val.layer_specs())
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        out.extend(item.layer_specs())
        return out

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"parameter {name!r} has shape {p.shape}, checkpoint has {arr.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def astype(self, dtype):
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
        return self


class Dense(Module):
    def __init__(self, in_features, out_features, activation="linear", rng=None, dtype=np.float32, name="dense"):
        rng = np.random.default_rng(0) if rng is None else rng
        self.w = Tensor(he_uniform(rng, (in_features, out_features), in_features, dtype), requires_grad=True)
        self.b = Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True)
        self._spec = LayerSpec(name, "dense", in_features, out_features, activation=activation)

    def __call__(self, x):
        try:
            y = T.linear(x, self.w, self.b)
        except DimensionError as e:
            raise DimensionError(f"layer {self._spec.name!r}: {e}") from None
        return T.activation(y, self._spec.activation)

    def layer_specs(self):
        return [self._spec]


class Conv(Module):
    """Convolution over 2 or 3 spatial axes, 'same' padding for odd kernels."""

    def __init__(self, ndim, in_ch, out_ch, kernel=3, stride=1, activation="relu", rng=None,
                 dtype=np.float32, name="conv"):
        rng = np.random.default_rng(0) if rng is None else rng
        fan_in = in_ch * kernel ** ndim
        self.w = Tensor(he_uniform(rng, (out_ch, in_ch) + (kernel,) * ndim, fan_in, dtype), requires_grad=True)
        self.b = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True)
        self._pad = kernel // 2
        self._spec = LayerSpec(name, f"conv{ndim}d", in_ch, out_ch, kernel, stride, activation)

    def __call__(self, x):
        try:
            y = T.conv(x, self.w, self.b, stride=self._spec.stride, pad=self._pad)
        except DimensionError as e:
            raise DimensionError(f"layer {self._spec.name!r}: {e}") from None
        return T.activation(y, self._spec.activation)

    def layer_specs(self):
        return [self._spec]


class MLP(Module):
    """Fully connected stack; hidden layers use ``hidden_act``, the last layer ``out_act``."""

    def __init__(self, widths, hidden_act="relu", out_act="linear", rng=None, dtype=np.float32, name="mlp"):
        rng = np.random.default_rng(0) if rng is None else rng
        self.widths = tuple(int(w) for w in widths)
        n = len(self.widths) - 1
        self.layers = [
            Dense(self.widths[i], self.widths[i + 1], hidden_act if i < n - 1 else out_act, rng, dtype,
                  name=f"{name}.{i}")
            for i in range(n)
        ]
        check_chain(self.layer_specs())

    def __call__(self, x, upto=None):
        """Run the stack; with ``upto=k`` return the activation after the k-th layer."""
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if upto is not None and i + 1 == upto:
                return x
        return x

    def tail(self, h, start):
        for layer in self.layers[start:]:
            h = layer(h)
        return h

    def zero_last(self):
        last = self.layers[-1]
        last.w.data[...] = 0
        last.b.data[...] = 0
