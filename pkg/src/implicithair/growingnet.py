"""Patch-local implicit strand growth.

The orientation volume is covered by cubic patches of side ``d`` voxels whose
centers sit on a lattice of spacing ``d/2``, so neighbouring patches overlap by
half their size. An encoder maps each patch to a latent code. A decoder G
maps (latent, local coordinate in [-1, 1]^3) to the next strand point, and
G_inv to the previous one. At a query point the decoder outputs of the eight
patches whose centers enclose it are blended with trilinear hat weights, which
makes the growth map continuous across patch borders. Growth advances
all strands in lockstep batches.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DimensionError, DivergenceError, EscapedError
from .fields import GridSpec, OccupancyField, OrientationField
from .nn import MLP, Adam, AdamConfig, Conv, Module, Tensor, make_checkpoint, ops, spec_digest
from .strands import HairModel, Strand

log = logging.getLogger(__name__)

BLOCK_ROWS = 64


# --- lattice ------------------------------------------------------------------------------------

@dataclass(frozen=True)
class PatchLattice:
    spec: GridSpec
    d: int = 8

    def __post_init__(self):
        if self.d < 2 or self.d % 2:
            raise ConfigError("patch size d must be an even number of voxels")

    @property
    def half(self):
        """Lattice spacing in voxels (d / 2)."""
        return self.d // 2

    @property
    def spacing(self):
        return self.half * self.spec.voxel_size

    @property
    def counts_xyz(self):
        W, H, D = (int(v) for v in self.spec.size_xyz)
        return np.array([math.ceil(n / self.half) + 1 for n in (W, H, D)], dtype=np.int64)

    @property
    def shape(self):
        """Lattice shape (nz, ny, nx)."""
        nx, ny, nz = self.counts_xyz
        return int(nz), int(ny), int(nx)

    @property
    def n_patches(self):
        return int(np.prod(self.counts_xyz))

    def flat_index(self, kxyz):
        k = np.asarray(kxyz, dtype=np.int64)
        nx, ny, _ = self.counts_xyz
        return (k[..., 2] * ny + k[..., 1]) * nx + k[..., 0]

    def lattice_coords(self, flat):
        flat = np.asarray(flat, dtype=np.int64)
        nx, ny, _ = self.counts_xyz
        return np.stack([flat % nx, (flat // nx) % ny, flat // (nx * ny)], axis=-1)

    def center(self, kxyz):
        return self.spec.box_min + self.spacing * np.asarray(kxyz, dtype=np.float64)

    def centers(self):
        """(n_patches, 3) world centers in flat-index order."""
        return self.center(self.lattice_coords(np.arange(self.n_patches)))

    def cell(self, x):
        """Lower lattice corner (N, 3) and fractional position (N, 3) of world points."""
        q = (np.asarray(x, dtype=np.float64) - self.spec.box_min) / self.spacing
        base = np.clip(np.floor(q).astype(np.int64), 0, self.counts_xyz - 2)
        return base, q - base

    def nearest(self, x):
        q = (np.asarray(x, dtype=np.float64) - self.spec.box_min) / self.spacing
        k = np.clip(np.floor(q + 0.5).astype(np.int64), 0, self.counts_xyz - 1)
        return self.flat_index(k)


def local_coords(x, center, d, voxel_size=1.0, check=True):
    """Patch-local coordinates (2 / d)(x - x_i) with d in world units ``d * voxel_size``."""
    x = np.asarray(x, dtype=np.float64)
    u = (x - np.asarray(center, dtype=np.float64)) * (2.0 / (d * voxel_size))
    if check and np.any(np.abs(u) > 1.0 + 1e-9):
        raise ValueError("point lies outside the patch support")
    return u


def hat(t):
    return np.maximum(0.0, 1.0 - np.abs(t))


CORNER_OFFSETS = np.array([[dx, dy, dz] for dz in (0, 1) for dy in (0, 1) for dx in (0, 1)], dtype=np.int64)


def _overlap(x, lattice: PatchLattice):
    base, frac = lattice.cell(x)
    n = lattice.counts_xyz
    idx = np.empty((len(x), 8), dtype=np.int64)
    w = np.empty((len(x), 8))
    for k, off in enumerate(CORNER_OFFSETS):
        kk = base + off
        valid = np.all(kk < n, axis=1)
        wk = hat(frac[:, 0] - off[0]) * hat(frac[:, 1] - off[1]) * hat(frac[:, 2] - off[2])
        w[:, k] = np.where(valid, wk, 0.0)
        idx[:, k] = lattice.flat_index(np.minimum(kk, n - 1))
    return idx, w / w.sum(axis=1, keepdims=True), frac


def overlap_weights(x, lattice: PatchLattice):
    """(indices (N, 8), weights (N, 8)) of the patches whose centers enclose each point.

    Weights are products of 1D hat functions of the offset to each center in
    lattice units. Corners past the lattice edge get weight zero and the rest
    are renormalised, so every row sums to one.
    """
    idx, w, _ = _overlap(np.atleast_2d(np.asarray(x, dtype=np.float64)), lattice)
    return idx, w


# --- networks -----------------------------------------------------------------------------------

@dataclass
class GrowthNetConfig:
    d: int = 8
    latent: int = 128
    enc_channels: tuple = (16, 32, 64, 128)
    hidden: tuple = (128, 64, 32)
    residual: bool = True
    step: float = 0.5
    offset_bound: float = 1.0  # residual offsets are step * offset_bound * tanh(.)

    def __post_init__(self):
        self.enc_channels = tuple(self.enc_channels)
        self.hidden = tuple(self.hidden)
        if self.enc_channels[-1] != self.latent:
            raise ConfigError("last encoder channel count must equal the latent size")
        if self.d < 2 or self.d & (self.d - 1):
            raise ConfigError(f"patch size {self.d} must be a power of two")
        if self.step <= 0 or self.offset_bound <= 0:
            raise ConfigError("step and offset bound must be positive")

    @property
    def decoder_widths(self):
        return (self.latent + 3,) + self.hidden + (3,)

    def encoder_plan(self):
        """(in, out, stride) per encoder layer: log2(d) stride-2 layers, padded with stride-1 ones."""
        n_down = int(round(math.log2(self.d)))
        chans = list(self.enc_channels)
        while len(chans) < n_down:
            chans.append(chans[-1])
        strides = [2] * n_down + [1] * (len(chans) - n_down)
        plan = []
        cin = 3
        for c, s in zip(chans, strides):
            plan.append((cin, c, s))
            cin = c
        return plan

    def to_dict(self):
        return asdict(self)


class PatchEncoder(Module):
    def __init__(self, cfg: GrowthNetConfig, rng, dtype=np.float32):
        plan = cfg.encoder_plan()
        self.layers = [Conv(3, ci, co, 3, s, "relu" if i < len(plan) - 1 else "linear", rng, dtype,
                            name=f"enc{i}") for i, (ci, co, s) in enumerate(plan)]
        self._d = cfg.d

    def __call__(self, x):
        """(B, 3, d, d, d) patches -> (B, latent)."""
        x = ops.as_tensor(x)
        if x.shape[1:] != (3, self._d, self._d, self._d):
            raise DimensionError(f"patch batch {x.shape[1:]} expected {(3,) + (self._d,) * 3}")
        for layer in self.layers:
            x = layer(x)
        return ops.reshape(x, (x.shape[0], -1))


class GrowingNet(Module):
    def __init__(self, cfg: GrowthNetConfig | None = None, seed=0, dtype=np.float32):
        self._cfg = cfg or GrowthNetConfig()
        self._seed = seed
        rng = np.random.default_rng(seed)
        self.encoder = PatchEncoder(self._cfg, rng, dtype)
        self.G = MLP(self._cfg.decoder_widths, out_act="tanh" if self._cfg.residual else "linear", rng=rng,
                     dtype=dtype, name="G")
        self.G_inv = MLP(self._cfg.decoder_widths, out_act="tanh" if self._cfg.residual else "linear", rng=rng,
                         dtype=dtype, name="G_inv")

    @property
    def cfg(self):
        return self._cfg

    def digest(self):
        return spec_digest(self.layer_specs(), {"cfg": self._cfg.to_dict()})

    def decoder(self, direction):
        if direction == "fwd":
            return self.G
        if direction == "inv":
            return self.G_inv
        raise ValueError(f"direction must be 'fwd' or 'inv', got {direction!r}")


@dataclass
class LatentGrid:
    lattice: PatchLattice
    z: np.ndarray  # (n_patches, latent), flat lattice order

    @property
    def grid(self):
        return self.z.reshape(self.lattice.shape + (self.z.shape[1],))

    def projection(self, mlp: MLP):
        """First decoder layer (with its bias) applied to the latent part of the input, per patch.

        Cached per decoder.
        """
        cache = self.__dict__.setdefault("_proj", {})
        key = id(mlp.layers[0].w.data)
        if key not in cache:
            L = self.z.shape[1]
            cache[key] = _blocked_matmul(self.z, mlp.layers[0].w.data[:L]) + mlp.layers[0].b.data
        return cache[key]

    def to_bytes(self):
        from .formats import latents_to_bytes

        return latents_to_bytes(self.grid, self.lattice.d, self.lattice.spec)


def _padded_field(field: OrientationField, d):
    """(3, D', H', W') channel-first orientation data padded by d/2 below and d above."""
    data = np.moveaxis(np.asarray(field.data, dtype=np.float32), -1, 0)
    lo, hi = d // 2, d
    return np.pad(data, [(0, 0), (lo, hi), (lo, hi), (lo, hi)])


def patch_windows(field: OrientationField, lattice: PatchLattice):
    """View (nz, ny, nx, 3, d, d, d) of every patch crop, zero padded at the borders."""
    d, h = lattice.d, lattice.half
    pad = _padded_field(field, d)
    win = sliding_window_view(pad, (d, d, d), axis=(1, 2, 3))[:, ::h, ::h, ::h]
    nz, ny, nx = lattice.shape
    win = win[:, :nz, :ny, :nx]
    return np.moveaxis(win, 0, 3)


def encode_patches(field: OrientationField, lattice: PatchLattice, net: GrowingNet, chunk=2048,
                   indices=None) -> LatentGrid | np.ndarray:
    """Latent code of every patch (or of the flat ``indices`` only, returned as an array)."""
    if lattice.d != net.cfg.d:
        raise DimensionError(f"lattice d={lattice.d} does not match encoder d={net.cfg.d}")
    win = patch_windows(field, lattice).reshape((-1, 3) + (lattice.d,) * 3)
    sel = np.arange(len(win)) if indices is None else np.asarray(indices)
    out = np.empty((len(sel), net.cfg.latent), dtype=np.float32)
    for s in range(0, len(sel), chunk):
        block = np.ascontiguousarray(win[sel[s:s + chunk]])
        out[s:s + chunk] = net.encoder(block).data
    return LatentGrid(lattice, out) if indices is None else out


# --- decoding -----------------------------------------------------------------------------------

def _blocks(x, dtype):
    n = len(x)
    nb = -(-n // BLOCK_ROWS)
    h = np.zeros((nb * BLOCK_ROWS, x.shape[1]), dtype=dtype)
    h[:n] = x
    return h.reshape(nb, BLOCK_ROWS, -1)


def _blocked_matmul(x, w):
    return (_blocks(x, w.dtype) @ w).reshape(-1, w.shape[1])[:len(x)]


def _act(h, act):
    if act == "relu":
        np.maximum(h, 0, out=h)
    elif act == "tanh":
        np.tanh(h, out=h)
    elif act == "sigmoid":
        h = 1.0 / (1.0 + np.exp(-h))
    return h


def _run_blocks(layers, h, out):
    """Apply ``layers`` to (nb, BLOCK_ROWS, k) blocks ``h`` and write the first len(out) rows to ``out``."""
    for layer in layers:
        h = h @ layer.w.data
        h += layer.b.data
        h = _act(h, layer._spec.activation)
    out[:] = h.reshape(-1, h.shape[-1])[:len(out)]


def _corners(x, lattice, overlap):
    if overlap:
        return overlap_weights(x, lattice)
    return lattice.nearest(x)[:, None], np.ones((len(x), 1))


def _decode_corners(mlp: MLP, proj, idx, frac, offsets, chunk_rows=1024):
    """Decoder outputs (N, k, 3) at local coordinates ``frac - offsets[j]`` of patches ``idx`` (N, k).

    The first layer is split: the latent part comes from the cached per-patch
    projection ``proj`` (bias included) and the coordinate part is formed once
    per point plus a constant per corner, since local coordinates of the k
    corners differ by the fixed lattice ``offsets``.
    """
    layers = mlp.layers
    w0 = layers[0].w.data
    dtype = w0.dtype
    tail = w0[w0.shape[0] - 3:]
    per_corner = (np.asarray(offsets, dtype=dtype) @ tail)[None]  # (1, k, width)
    n, k = idx.shape
    # visit points in patch order so gathers from the projection table stay local
    order = np.argsort(idx[:, 0], kind="stable")
    idx = idx[order]
    fr = np.asarray(frac, dtype=dtype)[order]
    out = np.empty((n * k, layers[-1].w.shape[1]), dtype=dtype)
    chunk = max(1, chunk_rows // k)
    for s in range(0, n, chunk):
        e = min(s + chunk, n)
        m = (e - s) * k
        nb = -(-m // BLOCK_ROWS)
        h = np.empty((nb * BLOCK_ROWS, w0.shape[1]), dtype=dtype)
        h[m:] = 0
        hv = h[:m].reshape(e - s, k, -1)
        np.take(proj, idx[s:e], axis=0, out=hv)
        pt = fr[s:e, 0, None] * tail[0]
        pt += fr[s:e, 1, None] * tail[1]
        pt += fr[s:e, 2, None] * tail[2]
        hv += pt[:, None, :]
        hv -= per_corner
        h = _act(h, layers[0]._spec.activation).reshape(nb, BLOCK_ROWS, -1)
        _run_blocks(layers[1:], h, out[s * k:e * k])
    res = np.empty_like(out.reshape(n, k, -1))
    res[order] = out.reshape(n, k, -1)
    return res


def step(x, latents: LatentGrid, net: GrowingNet, direction="fwd", overlap=True, check=True):
    """Next (``fwd``) or previous (``inv``) point for each row of ``x`` (N, 3)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    lat = latents.lattice
    if check and not np.all(lat.spec.contains(x)):
        raise EscapedError("escaped: query point outside the volume")
    cfg = net.cfg
    if overlap:
        idx, w, frac = _overlap(x, lat)
        offsets = CORNER_OFFSETS
    else:
        idx = lat.nearest(x)[:, None]
        w = np.ones((len(x), 1))
        frac = (x - lat.center(lat.lattice_coords(idx[:, 0]))) / lat.spacing
        offsets = np.zeros((1, 3))
    mlp = net.decoder(direction)
    g = _decode_corners(mlp, latents.projection(mlp), idx, frac, offsets).astype(np.float64)
    k = idx.shape[1]
    acc = np.zeros_like(x)
    if cfg.residual:
        for j in range(k):
            acc += w[:, j, None] * g[:, j]
        return x + (cfg.step * cfg.offset_bound) * acc
    centers = lat.center(lat.lattice_coords(idx))
    half = 0.5 * cfg.d * lat.spec.voxel_size
    for j in range(k):
        acc += w[:, j, None] * (centers[:, j] + half * g[:, j])
    return acc


# --- growth -------------------------------------------------------------------------------------

@dataclass
class GrowthConfig:
    max_steps: int = 400
    threshold: float = 0.5
    grace: int = 3
    min_length: int = 10
    overlap: bool = True
    fixed_steps: bool = False  # benchmarking: ignore termination, clamp into the volume

    def __post_init__(self):
        if not 0 <= self.threshold <= 1:
            raise ConfigError("threshold must lie in [0, 1]")
        if self.max_steps < 1 or self.grace < 0 or self.min_length < 2:
            raise ConfigError("invalid growth limits")


def occupancy_at(occ: OccupancyField, x):
    """Occupancy of the voxel containing each point."""
    ijk = occ.spec.voxel_of(x)
    return occ.data[ijk[:, 2], ijk[:, 1], ijk[:, 0]]


def sample_seeds(occ: OccupancyField, n, seed=0, threshold=0.5):
    """``n`` points uniform inside voxels with occupancy >= threshold (empty array if none)."""
    rng = np.random.default_rng(seed)
    vox = np.argwhere(occ.data >= threshold)
    if len(vox) == 0:
        return np.zeros((0, 3))
    pick = vox[rng.integers(len(vox), size=n)]
    xyz = pick[:, ::-1].astype(np.float64) + rng.uniform(size=(n, 3))
    return occ.spec.box_min + occ.spec.voxel_size * xyz


def grow_direction(seeds, advance, occ: OccupancyField, cfg: GrowthConfig):
    """Lockstep one-sided growth. ``advance(x) -> next`` acts on (M, 3) batches.

    Returns a list of (n_i, 3) trajectories starting at each seed. A strand
    stops when it leaves the volume, stalls, reaches ``max_steps``, or spends
    more than ``grace`` consecutive steps below the occupancy threshold; the
    trailing below-threshold points are trimmed.
    """
    seeds = np.atleast_2d(np.asarray(seeds, dtype=np.float64))
    n = len(seeds)
    spec = occ.spec
    traj = np.full((cfg.max_steps + 1, n, 3), np.nan)
    traj[0] = seeds
    length = np.ones(n, dtype=np.int64)
    misses = np.zeros(n, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    x = seeds.copy()
    lo, hi = spec.box_min, spec.box_max
    for t in range(1, cfg.max_steps + 1):
        ids = np.flatnonzero(alive)
        if len(ids) == 0:
            break
        nxt = advance(x[ids])
        if cfg.fixed_steps:
            nxt = np.clip(nxt, lo, hi - 1e-9 * spec.voxel_size)
            traj[t, ids] = nxt
            x[ids] = nxt
            length[ids] += 1
            continue
        moved = np.linalg.norm(nxt - x[ids], axis=1) > 1e-9
        inside = spec.contains(nxt) & np.all(np.isfinite(nxt), axis=1)
        ok = moved & inside
        stop = ids[~ok]
        alive[stop] = False
        go = ids[ok]
        nxt = nxt[ok]
        o = occupancy_at(occ, nxt) if len(go) else np.zeros(0)
        low = o < cfg.threshold
        misses[go] = np.where(low, misses[go] + 1, 0)
        traj[t, go] = nxt
        x[go] = nxt
        length[go] += 1
        over = go[misses[go] > cfg.grace]
        alive[over] = False
    out = []
    for i in range(n):
        k = length[i] - misses[i] if not cfg.fixed_steps else length[i]
        out.append(traj[:max(k, 1), i].copy())
    return out


def join_halves(fwd, inv):
    """Backward half reversed, then forward half; the shared seed appears once."""
    return np.concatenate([inv[::-1], fwd[1:]], axis=0)


def grow(seeds, latents: LatentGrid, net: GrowingNet, occ: OccupancyField, cfg: GrowthConfig | None = None,
         return_halves=False):
    """Bidirectional growth of every seed; strands shorter than ``min_length`` points are dropped."""
    cfg = cfg or GrowthConfig()
    seeds = np.atleast_2d(np.asarray(seeds, dtype=np.float64)).reshape(-1, 3)
    bbox = np.stack([occ.spec.box_min, occ.spec.box_max])
    if not np.any(occ.data >= cfg.threshold):
        log.warning("occupancy has no voxel above %.2f; returning an empty model", cfg.threshold)
        empty = HairModel([], bbox, {"source": "growingnet"})
        return (empty, [], []) if return_halves else empty
    adv_f = lambda x: step(x, latents, net, "fwd", cfg.overlap, check=False)  # noqa: E731
    adv_b = lambda x: step(x, latents, net, "inv", cfg.overlap, check=False)  # noqa: E731
    fwd = grow_direction(seeds, adv_f, occ, cfg)
    inv = grow_direction(seeds, adv_b, occ, cfg)
    strands = []
    for f, b in zip(fwd, inv):
        pts = join_halves(f, b)
        if len(pts) >= cfg.min_length:
            strands.append(Strand(pts))
    model = HairModel(strands, bbox, {"source": "growingnet", "seeds": int(len(seeds))})
    return (model, fwd, inv) if return_halves else model


def grow_sequential(seeds, latents, net, occ, cfg=None):
    """Reference: grow each seed on its own. Equal to :func:`grow` strand for strand."""
    cfg = cfg or GrowthConfig()
    strands = []
    for s in np.atleast_2d(seeds):
        m = grow(s[None], latents, net, occ, cfg)
        strands.extend(m.strands)
    bbox = np.stack([occ.spec.box_min, occ.spec.box_max])
    return HairModel(strands, bbox, {"source": "growingnet", "seeds": int(len(np.atleast_2d(seeds)))})


# --- training -----------------------------------------------------------------------------------

@dataclass
class GrowthSamples:
    """Interior strand points and their true neighbours; ``field_id`` indexes the training fields."""

    x: np.ndarray
    nxt: np.ndarray
    prev: np.ndarray
    field_id: np.ndarray
    skipped: int = 0


def growth_samples(strands_per_field, min_points=3):
    """Collect (x_n, x_n+1, x_n-1) triples from every strand; roots and tips are never centers."""
    xs, ns, ps, fs = [], [], [], []
    skipped = 0
    for fid, strands in enumerate(strands_per_field):
        for s in strands:
            p = np.asarray(getattr(s, "points", s), dtype=np.float64)
            if len(p) < min_points:
                skipped += 1
                continue
            xs.append(p[1:-1])
            ns.append(p[2:])
            ps.append(p[:-2])
            fs.append(np.full(len(p) - 2, fid))
    if not xs:
        return GrowthSamples(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, np.int64), skipped)
    return GrowthSamples(np.concatenate(xs), np.concatenate(ns), np.concatenate(ps), np.concatenate(fs), skipped)


def _decode_tape(net, direction, z_rows, u, w, x, centers, k, voxel_size=1.0):
    """Differentiable blended step for training (rows grouped as N x k)."""
    cfg = net.cfg
    n = len(x)
    inp = ops.concat([z_rows, Tensor(u.reshape(n * k, 3).astype(np.float32))], axis=1)
    g = ops.reshape(net.decoder(direction)(inp), (n, k, 3))
    wt = Tensor(w.reshape(n, k, 1).astype(np.float32))
    if cfg.residual:
        blend = ops.sum_(ops.mul(g, wt), axis=1)
        return ops.mul(blend, cfg.step * cfg.offset_bound) + Tensor(x.astype(np.float32))
    half = 0.5 * cfg.d * voxel_size
    pos = ops.mul(g, half) + Tensor(centers.astype(np.float32))
    return ops.sum_(ops.mul(pos, wt), axis=1)


def growth_loss(net, fields, lat: PatchLattice, samples: GrowthSamples, rows, overlap=True):
    """Bidirectional L1 loss (summed over axes, averaged over rows) through encoder and both decoders.

    Only the patches the batch touches are cropped and encoded, so gradients
    reach the encoder.
    """
    x = samples.x[rows]
    fid = samples.field_id[rows]
    n = len(x)
    idx, w = _corners(x, lat, overlap)
    k = idx.shape[1]
    key = fid[:, None] * lat.n_patches + idx
    uniq, inverse = np.unique(key.reshape(-1), return_inverse=True)
    crops = []
    for ukey in uniq:
        f, p = divmod(int(ukey), lat.n_patches)
        crops.append(_crop(fields[f], lat, p))
    z_u = net.encoder(np.stack(crops))
    z_rows = ops.take_rows(z_u, inverse)
    centers = lat.center(lat.lattice_coords(idx))
    vs = lat.spec.voxel_size
    u = (x[:, None, :] - centers) * (2.0 / (net.cfg.d * vs))
    t_f = _decode_tape(net, "fwd", z_rows, u, w, x, centers, k, vs)
    t_b = _decode_tape(net, "inv", z_rows, u, w, x, centers, k, vs)
    lf = ops.sum_(ops.absolute(t_f - Tensor(samples.nxt[rows].astype(np.float32))))
    lb = ops.sum_(ops.absolute(t_b - Tensor(samples.prev[rows].astype(np.float32))))
    return (lf + lb) / float(n)


_PAD_CACHE: dict = {}


def _crop(field, lattice, flat):
    key = (id(field), lattice.d)
    pad = _PAD_CACHE.get(key)
    if pad is None or pad[0] is not field:
        pad = (field, _padded_field(field, lattice.d))
        _PAD_CACHE[key] = pad
    kx, ky, kz = (int(v) for v in lattice.lattice_coords(flat))
    h, d = lattice.half, lattice.d
    return pad[1][:, kz * h:kz * h + d, ky * h:ky * h + d, kx * h:kx * h + d]


@dataclass
class GrowthTrainConfig:
    epochs: int = 40
    batch: int = 512
    batches_per_epoch: int = 20
    lr: float = 1e-3
    decay_every: int = 20
    decay_factor: float = 0.5
    overlap: bool = True
    seed: int = 0
    n_val: int = 512

    def adam(self):
        return AdamConfig(lr=self.lr, decay_every=self.decay_every, decay_factor=self.decay_factor)


@dataclass
class GrowthHistory:
    train: list = field(default_factory=list)
    val: list = field(default_factory=list)
    skipped: int = 0


def train_growingnet(fields, strands_per_field, cfg: GrowthTrainConfig | None = None, net: GrowingNet | None = None,
                     net_cfg: GrowthNetConfig | None = None):
    """Jointly train encoder, G and G_inv. Returns (net, history, checkpoint).

    ``fields`` share one GridSpec; ``strands_per_field[i]`` are strands in
    field ``i`` already resampled to the decoder step.
    """
    cfg = cfg or GrowthTrainConfig()
    net = net or GrowingNet(net_cfg, seed=cfg.seed)
    specs = {f.spec for f in fields}
    if len(specs) != 1:
        raise DimensionError("all training fields must share one grid")
    lattice = PatchLattice(fields[0].spec, net.cfg.d)
    samples = growth_samples(strands_per_field)
    if len(samples.x) == 0:
        raise ValueError("no usable training strands (need >= 3 points)")
    rng = np.random.default_rng(cfg.seed)
    val_rows = rng.choice(len(samples.x), size=min(cfg.n_val, len(samples.x)), replace=False)
    opt = Adam(list(net.named_parameters()), cfg.adam())
    hist = GrowthHistory(skipped=samples.skipped)
    hist.val.append((-1, float(growth_loss(net, fields, lattice, samples, val_rows, cfg.overlap).data)))
    for epoch in range(cfg.epochs):
        opt.epoch = epoch
        losses = []
        for _ in range(cfg.batches_per_epoch):
            rows = rng.choice(len(samples.x), size=min(cfg.batch, len(samples.x)), replace=False)
            opt.zero_grad()
            loss = growth_loss(net, fields, lattice, samples, rows, cfg.overlap)
            v = float(loss.data)
            if not np.isfinite(v):
                raise DivergenceError(f"growth loss became {v} at epoch {epoch}")
            losses.append(v)
            loss.backward()
            opt.step()
        hist.train.append((epoch, float(np.mean(losses))))
        hist.val.append((epoch, float(growth_loss(net, fields, lattice, samples, val_rows, cfg.overlap).data)))
        log.info("growth epoch %d loss %.5f val %.5f", epoch, hist.train[-1][1], hist.val[-1][1])
    ck = make_checkpoint(net, net.digest(), opt, seed=cfg.seed, meta={"net": net.cfg.to_dict(), "train": asdict(cfg)})
    return net, hist, ck


def load_growingnet(ck, cfg: GrowthNetConfig | None = None) -> GrowingNet:
    if cfg is None:
        cfg = GrowthNetConfig(**ck.meta["net"]) if "net" in ck.meta else GrowthNetConfig()
    net = GrowingNet(cfg, seed=ck.seed)
    ck.check_digest(net.digest())
    net.load_state_dict(ck.params)
    return net
