"""Trilinear corner lookup shared by field sampling and the autodiff grid sampler."""

import numpy as np


def trilinear_corners(coords, dims):
    """Flat corner indices and weights for continuous voxel coordinates.

    ``coords`` is (N, 3) in (x, y, z) voxel-index units where integer values are
    voxel centers; ``dims`` is (D, H, W). Coordinates are clamped to the
    center hull, so outside points take the boundary value. Returns (N, 8)
    flat indices into a (D, H, W) array and (N, 8) weights summing to one.
    """
    D, H, W = dims
    c = np.empty_like(coords, dtype=np.float64)
    c[:, 0] = np.clip(coords[:, 0], 0, W - 1)
    c[:, 1] = np.clip(coords[:, 1], 0, H - 1)
    c[:, 2] = np.clip(coords[:, 2], 0, D - 1)
    i0 = np.floor(c).astype(np.int64)
    i0[:, 0] = np.minimum(i0[:, 0], max(W - 2, 0))
    i0[:, 1] = np.minimum(i0[:, 1], max(H - 2, 0))
    i0[:, 2] = np.minimum(i0[:, 2], max(D - 2, 0))
    f = c - i0
    idx = np.empty((len(c), 8), dtype=np.int64)
    wts = np.empty((len(c), 8))
    k = 0
    for dz in (0, 1):
        z = np.minimum(i0[:, 2] + dz, D - 1)
        wz = f[:, 2] if dz else 1.0 - f[:, 2]
        for dy in (0, 1):
            y = np.minimum(i0[:, 1] + dy, H - 1)
            wy = f[:, 1] if dy else 1.0 - f[:, 1]
            for dx in (0, 1):
                x = np.minimum(i0[:, 0] + dx, W - 1)
                wx = f[:, 0] if dx else 1.0 - f[:, 0]
                idx[:, k] = (z * H + y) * W + x
                wts[:, k] = wx * wy * wz
                k += 1
    return idx, wts
