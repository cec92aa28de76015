"""Quantitative comparison of predicted fields and strands against ground truth."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .imaging import angle_distance

L1_SENTINEL = -1.0


def _arr(f):
    return np.asarray(f.data if hasattr(f, "spec") else f, dtype=np.float64)


def precision_occ(pred, gt, threshold=0.5):
    """TP / (TP + FP) of ``pred`` binarised at ``threshold``. Returns (value, flag); flag marks no positives."""
    p = _arr(pred) >= threshold
    g = _arr(gt) >= 0.5
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    npos = int(p.sum())
    if npos == 0:
        return 0.0, True
    return float((p & g).sum()) / npos, False


def l2_orientation(pred, gt, mask=None):
    """Mean over GT-occupied voxels of the distance between renormalised ``pred`` and ``gt``.

    Zero prediction vectors count as distance 1 (the norm of the GT vector).
    """
    p = _arr(pred)
    g = _arr(gt)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    occ = np.any(g != 0, axis=-1) if mask is None else np.asarray(mask, dtype=bool)
    if not occ.any():
        return 0.0
    pv, gv = p[occ], g[occ]
    n = np.linalg.norm(pv, axis=1, keepdims=True)
    pv = np.where(n > 1e-12, pv / np.where(n > 1e-12, n, 1.0), 0.0)
    return float(np.mean(np.linalg.norm(pv - gv, axis=1)))


def mean_direction_baseline(gt_fields):
    """Unit mean direction over all occupied voxels of the given orientation fields."""
    total = np.zeros(3)
    for f in gt_fields:
        g = _arr(f)
        total += g[np.any(g != 0, axis=-1)].sum(axis=0)
    n = np.linalg.norm(total)
    return total / n if n > 0 else np.array([0.0, 1.0, 0.0])


def constant_field_like(gt, direction):
    g = _arr(gt)
    return np.broadcast_to(np.asarray(direction, dtype=np.float64), g.shape).copy()


def l1_projection(model, ori2d, proj):
    """Mean pi-periodic angle between projected strand directions and the 2D orientation map.

    Returns (value, n_points). With no strand point on a valid pixel the value
    is ``L1_SENTINEL`` and n_points is 0.
    """
    angles, ref = [], []
    theta_map = np.asarray(ori2d.data, dtype=np.float64)
    for s in model.strands:
        d = np.gradient(s.points, axis=0)
        r, c = proj.pixel_of(s.points)
        valid = theta_map[r, c] >= 0
        both = valid & (np.hypot(d[:, 0], d[:, 1]) > 1e-12)
        if not both.any():
            continue
        angles.append(np.mod(np.arctan2(d[both, 1], d[both, 0]), np.pi))
        ref.append(theta_map[r[both], c[both]])
    if not angles:
        return L1_SENTINEL, 0
    a = np.concatenate(angles)
    b = np.concatenate(ref)
    return float(np.mean(angle_distance(a, b))), int(len(a))


def strand_deviation(pred_strands, ref_strands, n_points=None, voxel_size=1.0):
    """Point-wise distance between paired strands (same index), over the common prefix.

    Each argument is a list of (N_i, 3) arrays or Strands. ``n_points`` caps the
    prefix. Returns dict(mean, max, n) in voxel units.
    """
    dists = []
    for a, b in zip(pred_strands, ref_strands):
        a = np.asarray(getattr(a, "points", a))
        b = np.asarray(getattr(b, "points", b))
        k = min(len(a), len(b))
        if n_points is not None:
            k = min(k, n_points)
        if k == 0:
            continue
        dists.append(np.linalg.norm(a[:k] - b[:k], axis=1) / voxel_size)
    if not dists:
        return {"mean": float("nan"), "max": float("nan"), "n": 0}
    d = np.concatenate(dists)
    return {"mean": float(d.mean()), "max": float(d.max()), "n": int(len(d))}


@dataclass
class MetricsReport:
    precision: float = float("nan")
    precision_flag: bool = False
    l2_orientation: float = float("nan")
    l1_projection: float = float("nan")
    strand_mean: float = float("nan")
    strand_max: float = float("nan")
    timings: dict = field(default_factory=dict)

    def to_lines(self):
        out = []
        for k, v in asdict(self).items():
            if k == "timings":
                out.extend(f"time_{n}={t:.6f}" for n, t in sorted(v.items()))
            else:
                out.append(f"{k}={v}")
        return out
