"""Closed-form orientation fields used as oracles and as benchmark scenes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import GridSpec, OccupancyField, OrientationField


@dataclass(frozen=True)
class HelixField:
    """Unit direction of omega x (p - c) + v: rotation about an axis through ``c`` plus a drift ``v``.

    With ``v`` having a component along ``omega`` the field never vanishes and
    its streamlines are helices.
    """

    omega: tuple = (0.0, 0.3, 0.0)
    center: tuple = (16.0, 16.0, 16.0)
    drift: tuple = (0.0, 0.5, 0.0)

    def __call__(self, p):
        p = np.asarray(p, dtype=np.float64)
        v = np.cross(np.asarray(self.omega), p - np.asarray(self.center)) + np.asarray(self.drift)
        n = np.linalg.norm(v, axis=-1, keepdims=True)
        return np.where(n > 1e-12, v / np.where(n > 1e-12, n, 1.0), 0.0)


def circle_field(center=(12.0, 12.0), axis="z"):
    """Tangent of circles about a line parallel to the z axis through ``center`` (x, y)."""
    cx, cy = center

    def f(p):
        p = np.asarray(p, dtype=np.float64)
        t = np.stack([-(p[..., 1] - cy), p[..., 0] - cx, np.zeros(p.shape[:-1])], axis=-1)
        n = np.linalg.norm(t, axis=-1, keepdims=True)
        return np.where(n > 1e-12, t / np.where(n > 1e-12, n, 1.0), 0.0)

    return f


def sample_field(fn, spec: GridSpec, occupancy=None):
    """Voxelised fields from a direction function evaluated at voxel centers.

    ``occupancy`` is an optional boolean (D, H, W) mask; voxels outside it (and
    voxels where ``fn`` vanishes) hold the zero vector.
    """
    v = fn(spec.centers()).astype(np.float32)
    occ = np.linalg.norm(v, axis=-1) > 0
    if occupancy is not None:
        occ &= np.asarray(occupancy, dtype=bool)
    v[~occ] = 0
    return OrientationField(spec, v), OccupancyField(spec, occ.astype(np.float32))


def random_helix(rng, spec: GridSpec):
    """Helix field with a random tilted axis, rate, center and drift, scaled to the grid."""
    W, H, D = spec.size_xyz * spec.voxel_size
    axis = np.array([rng.normal(0, 0.25), 1.0, rng.normal(0, 0.25)])
    axis /= np.linalg.norm(axis)
    rate = rng.uniform(0.08, 0.2) / spec.voxel_size * rng.choice([-1.0, 1.0])
    c = spec.box_min + np.array([W, H, D]) * rng.uniform(0.35, 0.65, size=3)
    drift = axis * rng.uniform(0.3, 0.8) + rng.normal(0, 0.1, size=3)
    return HelixField(tuple(axis * rate), tuple(c), tuple(drift))
