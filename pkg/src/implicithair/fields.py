"""Voxel grids for hair orientation and occupancy.

Arrays are stored depth-major: ``data[z, y, x]`` (plus a trailing 3-vector
axis for orientation). Voxel ``(x, y, z)`` has its center at
``origin + voxel_size * (x + 0.5, y + 0.5, z + 0.5)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .interp import trilinear_corners

UNIT_TOL = 1e-4


@dataclass(frozen=True)
class GridSpec:
    dims: tuple  # (D, H, W)
    origin: tuple = (0.0, 0.0, 0.0)
    voxel_size: float = 1.0

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError(f"grid dims must be three positive ints, got {self.dims}")
        if self.voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        object.__setattr__(self, "voxel_size", float(self.voxel_size))

    @property
    def size_xyz(self):
        D, H, W = self.dims
        return np.array([W, H, D], dtype=np.float64)

    @property
    def box_min(self):
        return np.asarray(self.origin)

    @property
    def box_max(self):
        return np.asarray(self.origin) + self.voxel_size * self.size_xyz

    def to_voxel(self, p):
        """Continuous voxel coordinates (x, y, z), with voxel centers at integers."""
        return (np.asarray(p, dtype=np.float64) - self.box_min) / self.voxel_size - 0.5

    def voxel_of(self, p):
        """Integer (x, y, z) index of the voxel containing ``p`` (clamped into the grid)."""
        idx = np.floor((np.asarray(p, dtype=np.float64) - self.box_min) / self.voxel_size).astype(np.int64)
        return np.clip(idx, 0, (self.size_xyz - 1).astype(np.int64))

    def contains(self, p, tol=0.0):
        p = np.asarray(p, dtype=np.float64)
        return np.all((p >= self.box_min - tol) & (p <= self.box_max + tol), axis=-1)

    def centers(self):
        D, H, W = self.dims
        z, y, x = np.meshgrid(np.arange(D), np.arange(H), np.arange(W), indexing="ij")
        ijk = np.stack([x, y, z], axis=-1).astype(np.float64)
        return self.box_min + self.voxel_size * (ijk + 0.5)

    def depth_of(self, p):
        """Depth of ``p`` in voxel units along the grid depth axis."""
        return (np.asarray(p, dtype=np.float64)[..., 2] - self.origin[2]) / self.voxel_size

    def scaled(self, k: int) -> "GridSpec":
        """The same box sampled ``k`` times finer along every axis."""
        D, H, W = self.dims
        return GridSpec((D * k, H * k, W * k), self.origin, self.voxel_size / k)


@dataclass
class OrientationField:
    spec: GridSpec
    data: np.ndarray  # (D, H, W, 3) float32

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.shape != tuple(self.spec.dims) + (3,):
            raise ValueError(f"orientation data {self.data.shape} does not match dims {self.spec.dims}")

    @property
    def occupied(self):
        return np.any(self.data != 0, axis=-1)

    def check_unit(self):
        n = np.linalg.norm(self.data, axis=-1)
        occ = self.occupied
        return bool(np.all(np.abs(n[occ] - 1.0) <= UNIT_TOL) and np.all(n[~occ] == 0))


@dataclass
class OccupancyField:
    spec: GridSpec
    data: np.ndarray  # (D, H, W) float32 in [0, 1]

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.shape != tuple(self.spec.dims):
            raise ValueError(f"occupancy data {self.data.shape} does not match dims {self.spec.dims}")

    def binary(self, threshold=0.5):
        return self.data >= threshold


def _segments(model):
    starts, ends = [], []
    for s in model.strands:
        starts.append(s.points[:-1])
        ends.append(s.points[1:])
    if not starts:
        return np.zeros((0, 3)), np.zeros((0, 3))
    return np.concatenate(starts), np.concatenate(ends)


def _traverse(spec, a, b, substep):
    """(voxel flat index, segment index) pairs for segments a->b sampled at ``substep`` spacing."""
    seg_len = np.linalg.norm(b - a, axis=1)
    n = np.maximum(np.ceil(seg_len / substep).astype(np.int64), 1) + 1
    seg_id = np.repeat(np.arange(len(a)), n)
    offs = np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n)
    t = offs / np.repeat(n - 1, n)
    pts = a[seg_id] + t[:, None] * (b - a)[seg_id]
    ijk = spec.voxel_of(pts)
    D, H, W = spec.dims
    flat = (ijk[:, 2] * H + ijk[:, 1]) * W + ijk[:, 0]
    pairs = np.unique(flat * len(a) + seg_id)
    return pairs // len(a), pairs % len(a)


def voxelize(model, spec: GridSpec, substep_frac=0.25):
    """Rasterise strand segments onto the grid.

    A voxel is occupied when any segment sample (spacing ``voxel_size *
    substep_frac``) falls in it. Its orientation is the normalised sum of the unit
    directions of the segments crossing it, each segment counted once. When the
    sum nearly cancels (norm below 1e-3 of the count), the direction of the
    lowest-indexed crossing segment is kept.
    """
    D, H, W = spec.dims
    nvox = D * H * W
    a, b = _segments(model)
    ori = np.zeros((nvox, 3))
    occ = np.zeros(nvox, dtype=np.float32)
    if len(a):
        d = b - a
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        vox, seg = _traverse(spec, a, b, spec.voxel_size * substep_frac)
        np.add.at(ori, vox, d[seg])
        count = np.bincount(vox, minlength=nvox)
        first = np.full(nvox, np.iinfo(np.int64).max)
        np.minimum.at(first, vox, seg)
        hit = count > 0
        norm = np.linalg.norm(ori, axis=1)
        mean_norm = np.where(hit, norm / np.maximum(count, 1), 0.0)
        tie = hit & (mean_norm < 1e-3)
        ok = hit & ~tie
        ori[ok] /= norm[ok, None]
        ori[tie] = d[first[tie]]
        occ[hit] = 1.0
    return (OrientationField(spec, ori.reshape(D, H, W, 3)), OccupancyField(spec, occ.reshape(D, H, W)))


def sample_trilinear(field, points, spec=None):
    """Trilinear blend of voxel-center values at world ``points``.

    Accepts a single point (3,) or an array (N, 3). Points outside the grid box
    are clamped to the boundary; the returned ``clamped`` flag marks them.
    Returns ``(values, clamped)``.
    """
    spec = field.spec if spec is None else spec
    data = np.asarray(field) if isinstance(field, np.ndarray) else field.data
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    clamped = ~spec.contains(pts)
    idx, wts = trilinear_corners(spec.to_voxel(pts), spec.dims)
    flat = data.reshape(int(np.prod(spec.dims)), -1).astype(np.float64)
    vals = np.einsum("nk,nkc->nc", wts, flat[idx])
    if data.ndim == 3:
        vals = vals[:, 0]
    if single:
        return vals[0], bool(clamped[0])
    return vals, clamped


_NEIGHBOURS = ((0, 0, -1), (0, 0, 1), (0, -1, 0), (0, 1, 0), (-1, 0, 0), (1, 0, 0))  # (dz, dy, dx): -x +x -y +y -z +z


def _shift(a, dz, dy, dx):
    """Value of the neighbour at offset (dz, dy, dx) for every voxel, zero outside."""
    out = np.zeros_like(a)
    D, H, W = a.shape[:3]
    src = (slice(max(dz, 0), D + min(dz, 0)), slice(max(dy, 0), H + min(dy, 0)), slice(max(dx, 0), W + min(dx, 0)))
    dst = (slice(max(-dz, 0), D + min(-dz, 0)), slice(max(-dy, 0), H + min(-dy, 0)), slice(max(-dx, 0), W + min(-dx, 0)))
    out[dst] = a[src]
    return out


def fill_holes(f: OrientationField, max_passes=8, min_neighbours=2) -> OrientationField:
    """Fill empty voxels that sit between occupied 6-neighbours.

    Each pass gives every empty voxel with at least ``min_neighbours`` occupied
    face neighbours the renormalised mean of those neighbours (the linear
    interpolant at the voxel center). If the mean cancels, the first occupied
    neighbour in the order -x, +x, -y, +y, -z, +z is used. Occupied voxels are
    never changed. Passes repeat until nothing changes or ``max_passes``.
    """
    data = f.data.astype(np.float64).copy()
    for _ in range(max_passes):
        occ = np.any(data != 0, axis=-1)
        total = np.zeros_like(data)
        count = np.zeros(occ.shape, dtype=np.int64)
        first = np.zeros_like(data)
        have_first = np.zeros(occ.shape, dtype=bool)
        for dz, dy, dx in _NEIGHBOURS:
            nb = _shift(data, dz, dy, dx)
            nocc = _shift(occ, dz, dy, dx)
            total += nb
            count += nocc
            take = nocc & ~have_first
            first[take] = nb[take]
            have_first |= nocc
        cand = ~occ & (count >= min_neighbours)
        if not np.any(cand):
            break
        norm = np.linalg.norm(total, axis=-1)
        mean_norm = norm / np.maximum(count, 1)
        good = cand & (mean_norm >= 1e-3)
        tie = cand & ~good
        data[good] = total[good] / norm[good, None]
        data[tie] = first[tie]
    return OrientationField(f.spec, data)


@dataclass
class TrainingBatch:
    """Struct-of-arrays training samples; ``arm`` is 0 for near-strand and 1 for uniform samples."""

    points: np.ndarray
    target_ori: np.ndarray
    target_occ: np.ndarray
    weight: np.ndarray
    arm: np.ndarray

    def __len__(self):
        return len(self.points)

    def __getitem__(self, i):
        return TrainingSample(self.points[i], self.target_ori[i], float(self.target_occ[i]), float(self.weight[i]))


@dataclass
class TrainingSample:
    p: np.ndarray
    target_ori: np.ndarray
    target_occ: float
    weight: float


def distance_to_hair(occ: OccupancyField):
    """Euclidean distance (voxels) from each voxel center to the nearest occupied voxel center."""
    mask = occ.binary()
    if not mask.any():
        return np.full(mask.shape, np.inf)
    return ndimage.distance_transform_edt(~mask)


def gaussian_decay_candidates(rng, spec, dist, n_accept, sigma, max_rounds=1000):
    """Uniform box candidates thinned with acceptance probability exp(-d^2 / 2 sigma^2).

    Returns ``(accepted, rejected)`` world-space point arrays.
    """
    accepted, rejected = [], []
    have = 0
    lo, hi = spec.box_min, spec.box_max
    for _ in range(max_rounds):
        if have >= n_accept:
            break
        cand = rng.uniform(lo, hi, size=(max(2 * (n_accept - have), 64), 3))
        ijk = spec.voxel_of(cand)
        d = dist[ijk[:, 2], ijk[:, 1], ijk[:, 0]]
        keep = rng.uniform(size=len(cand)) < np.exp(-0.5 * (d / sigma) ** 2)
        accepted.append(cand[keep])
        rejected.append(cand[~keep])
        have += int(keep.sum())
    acc = np.concatenate(accepted)[:n_accept] if accepted else np.zeros((0, 3))
    rej = np.concatenate(rejected) if rejected else np.zeros((0, 3))
    return acc, rej


def column_front_depth(occ: OccupancyField):
    """Front hair depth per (y, x) voxel column in voxel units; +inf for empty columns."""
    mask = occ.binary()
    any_hit = mask.any(axis=0)
    first = np.argmax(mask, axis=0).astype(np.float64)
    return np.where(any_hit, first, np.inf)


def sample_training_points(model, spec: GridSpec, n: int, sigma: float = 2.0, seed: int = 0, fields=None,
                           depth_lookup=None, tau: float = 5.0):
    """Draw ``n`` supervised points: half jittered around strands, half uniform with Gaussian-decay thinning.

    ``sigma`` is in voxels. Targets are the values of the voxel holding each
    point. Visibility weights compare the point depth against the hair front
    depth: ``depth_lookup(points) -> depths`` when given, otherwise the front of
    the voxelised occupancy per column.
    """
    from .irhairnet import visibility_weight

    if n < 1:
        raise ValueError("n must be >= 1")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if not model.strands:
        raise ValueError("cannot sample training points from an empty model")
    rng = np.random.default_rng(seed)
    ori, occ = voxelize(model, spec) if fields is None else fields
    n_near = n // 2
    n_uni = n - n_near

    a, b = _segments(model)
    seg_len = np.linalg.norm(b - a, axis=1)
    near = np.zeros((0, 3))
    for rnd in range(100):
        k = n_near - len(near)
        if k <= 0:
            break
        seg = rng.choice(len(a), size=2 * k, p=seg_len / seg_len.sum())
        t = rng.uniform(size=(2 * k, 1))
        p = a[seg] + t * (b[seg] - a[seg]) + rng.normal(scale=sigma * spec.voxel_size, size=(2 * k, 3))
        keep = spec.contains(p)
        if rnd == 99 and len(near) + keep.sum() < n_near:
            # wide jitter rarely lands inside; clamp the remainder instead of looping forever
            keep[:] = True
            p = np.clip(p, spec.box_min, np.nextafter(spec.box_max, -np.inf))
        near = np.vstack([near, p[keep]])
    near = near[:n_near]

    uni, _ = gaussian_decay_candidates(rng, spec, distance_to_hair(occ), n_uni, sigma)
    pts = np.vstack([near, uni])
    arm = np.concatenate([np.zeros(len(near), np.int8), np.ones(len(uni), np.int8)])

    ijk = spec.voxel_of(pts)
    t_ori = ori.data[ijk[:, 2], ijk[:, 1], ijk[:, 0]].astype(np.float64)
    t_occ = occ.data[ijk[:, 2], ijk[:, 1], ijk[:, 0]].astype(np.float64)
    if depth_lookup is None:
        front = column_front_depth(occ)
        dmap = front[ijk[:, 1], ijk[:, 0]]
    else:
        dmap = depth_lookup(pts)
    w = visibility_weight(spec.depth_of(pts), dmap, tau)
    return TrainingBatch(pts, t_ori, t_occ, w, arm)
