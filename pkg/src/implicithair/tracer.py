"""Sequential streamline tracer over a voxel orientation field.

This is the reference the learned growth is compared against and the
baseline it is timed against, so it runs one point at a time in plain Python.
"""

from __future__ import annotations

import math

import numpy as np

from .fields import OccupancyField, OrientationField
from .growingnet import GrowthConfig, join_halves
from .strands import HairModel, Strand


class PointSampler:
    """Scalar-at-a-time trilinear lookup into a (D, H, W, 3) field and a (D, H, W) occupancy."""

    def __init__(self, field: OrientationField, occ: OccupancyField | None = None):
        spec = field.spec
        self.D, self.H, self.W = spec.dims
        self.o = [float(v) for v in spec.box_min]
        self.hi = [float(v) for v in spec.box_max]
        self.inv = 1.0 / spec.voxel_size
        self.f = np.asarray(field.data, dtype=np.float64).reshape(-1).tolist()
        self.occ = None if occ is None else np.asarray(occ.data, dtype=np.float64).reshape(-1).tolist()

    def inside(self, x, y, z):
        o, hi = self.o, self.hi
        return o[0] <= x <= hi[0] and o[1] <= y <= hi[1] and o[2] <= z <= hi[2]

    def direction(self, x, y, z):
        W, H, D = self.W, self.H, self.D
        cx = min(max((x - self.o[0]) * self.inv - 0.5, 0.0), W - 1.0)
        cy = min(max((y - self.o[1]) * self.inv - 0.5, 0.0), H - 1.0)
        cz = min(max((z - self.o[2]) * self.inv - 0.5, 0.0), D - 1.0)
        x0 = min(int(cx), max(W - 2, 0))
        y0 = min(int(cy), max(H - 2, 0))
        z0 = min(int(cz), max(D - 2, 0))
        fx, fy, fz = cx - x0, cy - y0, cz - z0
        x1, y1, z1 = min(x0 + 1, W - 1), min(y0 + 1, H - 1), min(z0 + 1, D - 1)
        f = self.f
        vx = vy = vz = 0.0
        for zi, wz in ((z0, 1.0 - fz), (z1, fz)):
            for yi, wy in ((y0, 1.0 - fy), (y1, fy)):
                wzy = wz * wy
                row = (zi * H + yi) * W
                for xi, wx in ((x0, 1.0 - fx), (x1, fx)):
                    w = wzy * wx
                    if w:
                        k = 3 * (row + xi)
                        vx += w * f[k]
                        vy += w * f[k + 1]
                        vz += w * f[k + 2]
        return vx, vy, vz

    def occupancy(self, x, y, z):
        if self.occ is None:
            return 1.0
        ix = min(max(int((x - self.o[0]) * self.inv), 0), self.W - 1)
        iy = min(max(int((y - self.o[1]) * self.inv), 0), self.H - 1)
        iz = min(max(int((z - self.o[2]) * self.inv), 0), self.D - 1)
        return self.occ[(iz * self.H + iy) * self.W + ix]


def _oriented(v, ref, sign_consistency, sign=1.0):
    """Unit ``v``; flipped to agree with ``ref`` under sign consistency, else scaled by ``sign``."""
    n = math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    if n < 1e-12:
        return None
    k = sign / n
    a = (v[0] * k, v[1] * k, v[2] * k)
    if sign_consistency and a[0] * ref[0] + a[1] * ref[1] + a[2] * ref[2] < 0:
        a = (-a[0], -a[1], -a[2])
    return a


def trace_one(sampler: PointSampler, seed, s, cfg: GrowthConfig, sign=1.0, sign_consistency=True):
    """One-sided midpoint integration from ``seed``. Returns the list of points (seed first)."""
    x, y, z = (float(v) for v in seed)
    v0 = sampler.direction(x, y, z)
    d0 = _oriented(v0, (0.0, 0.0, 0.0), False)
    if d0 is None:
        return None
    prev = (sign * d0[0], sign * d0[1], sign * d0[2])
    pts = [(x, y, z)]
    misses = 0
    h = 0.5 * s
    for _ in range(cfg.max_steps):
        a = _oriented(sampler.direction(x, y, z), prev, sign_consistency, sign)
        if a is None:
            break
        mx, my, mz = x + h * a[0], y + h * a[1], z + h * a[2]
        b = _oriented(sampler.direction(mx, my, mz), a, sign_consistency, sign)
        if b is None:
            break
        nx, ny, nz = x + s * b[0], y + s * b[1], z + s * b[2]
        if cfg.fixed_steps:
            nx = min(max(nx, sampler.o[0]), sampler.hi[0])
            ny = min(max(ny, sampler.o[1]), sampler.hi[1])
            nz = min(max(nz, sampler.o[2]), sampler.hi[2])
        elif not sampler.inside(nx, ny, nz):
            break
        pts.append((nx, ny, nz))
        x, y, z = nx, ny, nz
        prev = b
        if cfg.fixed_steps:
            continue
        if sampler.occupancy(x, y, z) < cfg.threshold:
            misses += 1
            if misses > cfg.grace:
                break
        else:
            misses = 0
    if misses:
        pts = pts[:len(pts) - misses] or pts[:1]
    return pts


def trace_traditional(field: OrientationField, occupancy: OccupancyField | None, seeds, s,
                      cfg: GrowthConfig | None = None, sign_consistency=True, return_halves=False):
    """Bidirectional streamlines from every seed, one seed and one step at a time.

    Directions come from trilinear interpolation of the field, renormalised,
    and flipped when they oppose the previous step (sign consistency).
    Termination matches :func:`implicithair.growingnet.grow`. Seeds with a
    zero field direction are dropped.
    """
    cfg = cfg or GrowthConfig()
    vs = field.spec.voxel_size
    if not 0 < s < vs:
        raise ValueError(f"step {s} must be positive and smaller than the voxel size {vs}")
    sampler = PointSampler(field, occupancy)
    strands, fwd_all, inv_all = [], [], []
    for seed in np.atleast_2d(np.asarray(seeds, dtype=np.float64)):
        f = trace_one(sampler, seed, s, cfg, 1.0, sign_consistency)
        if f is None:
            fwd_all.append(None)
            inv_all.append(None)
            continue
        b = trace_one(sampler, seed, s, cfg, -1.0, sign_consistency)
        f, b = np.asarray(f), np.asarray(b)
        fwd_all.append(f)
        inv_all.append(b)
        pts = join_halves(f, b)
        if len(pts) >= cfg.min_length:
            strands.append(Strand(pts))
    bbox = np.stack([field.spec.box_min, field.spec.box_max])
    model = HairModel(strands, bbox, {"source": "tracer"})
    return (model, fwd_all, inv_all) if return_halves else model
