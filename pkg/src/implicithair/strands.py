"""Strand and hair-model geometry.

World frame: one world unit is one voxel of the canonical grid, ``+y`` points
down (gravity), ``z`` is depth away from an orthographic camera sitting at
``z = 0``. The canonical box is ``[0, W] x [0, H] x [0, D]``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import TooShortError

STYLES = ("straight", "wavy", "curly", "bun-like")


@dataclass
class Strand:
    """Ordered polyline, root first."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"strand points must be (n, 3), got {pts.shape}")
        if len(pts) < 2:
            raise ValueError("a strand needs at least 2 points")
        if np.any(np.all(pts[1:] == pts[:-1], axis=1)):
            raise ValueError("consecutive strand points must differ")
        self.points = pts

    def __len__(self):
        return len(self.points)

    @property
    def segment_lengths(self):
        return np.linalg.norm(np.diff(self.points, axis=0), axis=1)

    @property
    def length(self) -> float:
        return float(self.segment_lengths.sum())


@dataclass
class HairModel:
    strands: list
    bbox: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.bbox = np.asarray(self.bbox, dtype=np.float64).reshape(2, 3)

    def __len__(self):
        return len(self.strands)

    def all_points(self):
        if not self.strands:
            return np.zeros((0, 3))
        return np.concatenate([s.points for s in self.strands])

    def inside_bbox(self, tol=1e-9) -> bool:
        pts = self.all_points()
        return bool(np.all(pts >= self.bbox[0] - tol) and np.all(pts <= self.bbox[1] + tol))

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.bbox.tobytes())
        for s in self.strands:
            h.update(np.int64(len(s)).tobytes())
            h.update(s.points.tobytes())
        return h.hexdigest()


def canonical_bbox(box):
    W, H, D = box
    return np.array([[0.0, 0.0, 0.0], [float(W), float(H), float(D)]])


@dataclass(frozen=True)
class Bust:
    """Analytic bust standing in for a head mesh: an ellipsoid head plus a shoulder slab."""

    head_center: tuple = (16.0, 13.0, 12.0)
    head_radii: tuple = (7.0, 7.5, 7.0)
    shoulder_top: float = 28.0
    shoulder_x: tuple = (3.0, 29.0)
    shoulder_z: tuple = (7.0, 17.0)

    @classmethod
    def for_box(cls, box):
        """Scale the default bust (designed for a 32 x 32 x 24 box) to ``box = (W, H, D)``."""
        W, H, D = (float(v) for v in box)
        sx, sy, sz = W / 32.0, H / 32.0, D / 24.0
        return cls(
            head_center=(16.0 * sx, 13.0 * sy, 12.0 * sz),
            head_radii=(7.0 * sx, 7.5 * sy, 7.0 * sz),
            shoulder_top=28.0 * sy,
            shoulder_x=(3.0 * sx, 29.0 * sx),
            shoulder_z=(7.0 * sz, 17.0 * sz),
        )

    def head_level(self, p):
        """Ellipsoid level function: < 1 inside the head, 1 on the surface."""
        q = (np.asarray(p) - np.asarray(self.head_center)) / np.asarray(self.head_radii)
        return np.sum(q * q, axis=-1)

    def in_shoulders(self, p):
        p = np.asarray(p)
        return ((p[..., 1] >= self.shoulder_top) & (p[..., 0] >= self.shoulder_x[0])
                & (p[..., 0] <= self.shoulder_x[1]) & (p[..., 2] >= self.shoulder_z[0])
                & (p[..., 2] <= self.shoulder_z[1]))

    def front_depth(self, x, y):
        """Nearest bust surface depth z seen along +z through (x, y); +inf where the ray misses."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        cx, cy, cz = self.head_center
        rx, ry, rz = self.head_radii
        r2 = 1.0 - ((x - cx) / rx) ** 2 - ((y - cy) / ry) ** 2
        head = np.where(r2 >= 0, cz - rz * np.sqrt(np.maximum(r2, 0.0)), np.inf)
        sh = np.where((y >= self.shoulder_top) & (x >= self.shoulder_x[0]) & (x <= self.shoulder_x[1]),
                      self.shoulder_z[0], np.inf)
        return np.minimum(head, sh)


@dataclass
class SynthStyleParams:
    style: str = "straight"
    strand_count: int = 200
    box: tuple = (32, 32, 24)
    cap_angle: float = np.deg2rad(100.0)
    curl_amplitude: float = 0.0
    curl_frequency: float = 0.0
    length_range: tuple = (10.0, 20.0)
    noise_scale: float = 0.0
    droop: float = 0.0
    step: float = 0.5
    seed: int = 0

    def validate(self):
        if self.style not in STYLES:
            raise ValueError(f"unknown style {self.style!r}; expected one of {STYLES}")
        if self.strand_count < 1:
            raise ValueError("strand_count must be >= 1")
        if self.curl_amplitude < 0 or self.curl_frequency < 0 or self.noise_scale < 0:
            raise ValueError("amplitudes, frequencies and noise must be non-negative")
        lo, hi = self.length_range
        if lo <= 0 or hi < lo:
            raise ValueError("length_range must satisfy 0 < lo <= hi (zero-length strands rejected)")
        if self.step <= 0:
            raise ValueError("step must be positive")


_AXIS_STEP = 0.25
_RAMP = 1.0


def _sample_root(rng, bust, cap_angle):
    while True:
        cos_phi = rng.uniform(np.cos(cap_angle), 1.0)
        phi = np.arccos(cos_phi)
        alpha = rng.uniform(0.0, 2.0 * np.pi)
        n = np.array([np.sin(phi) * np.cos(alpha), -np.cos(phi), np.sin(phi) * np.sin(alpha)])
        # keep the face (front, low on the head) bald
        if n[2] < -0.35 and phi > np.deg2rad(55.0):
            continue
        surface = np.asarray(bust.head_center) + np.asarray(bust.head_radii) * n
        normal = n / np.asarray(bust.head_radii)
        normal /= np.linalg.norm(normal)
        return surface + 0.25 * normal, normal


def _grow_axis(root, normal, length, params, bust):
    n_steps = int(round(length / _AXIS_STEP))
    pts = np.empty((n_steps + 1, 3))
    pts[0] = root
    p = root.copy()
    gravity = np.array([0.0, 1.0, 0.0])
    c = np.asarray(bust.head_center)
    radii = np.asarray(bust.head_radii)
    bun = c + radii * np.array([0.0, -0.55, 0.85])
    for k in range(1, n_steps + 1):
        arc = (k - 1) * _AXIS_STEP
        w = 1.0 - np.exp(-params.droop * arc)
        if params.style == "bun-like":
            to_bun = bun - p
            dist = np.linalg.norm(to_bun)
            target = to_bun / dist if dist > 1e-6 else gravity
        else:
            target = gravity
        d = (1.0 - w) * normal + w * target
        nd = np.linalg.norm(d)
        d = normal if nd < 1e-9 else d / nd
        p = p + _AXIS_STEP * d
        lev = bust.head_level(p)
        if lev < 1.02:
            # project radially onto a slightly inflated ellipsoid
            q = (p - c) / radii
            p = c + radii * q / np.sqrt(np.sum(q * q)) * np.sqrt(1.02)
        pts[k] = p
    return pts


def _frames(axis):
    tang = np.gradient(axis, axis=0)
    tang /= np.maximum(np.linalg.norm(tang, axis=1, keepdims=True), 1e-12)
    e1 = np.empty_like(axis)
    ref = np.array([1.0, 0.0, 0.0]) if abs(tang[0, 0]) < 0.9 else np.array([0.0, 0.0, 1.0])
    v = ref - tang[0] * (ref @ tang[0])
    e1[0] = v / np.linalg.norm(v)
    for k in range(1, len(axis)):
        v = e1[k - 1] - tang[k] * (e1[k - 1] @ tang[k])
        nv = np.linalg.norm(v)
        if nv < 1e-9:
            v = np.cross(tang[k], [0.0, 1.0, 0.0])
            nv = np.linalg.norm(v)
        e1[k] = v / nv
    e2 = np.cross(tang, e1)
    return e1, e2


def _style_offsets(axis, params, rng):
    t = np.arange(len(axis)) * _AXIS_STEP
    ramp = np.minimum(1.0, t / _RAMP)[:, None]
    e1, e2 = _frames(axis)
    a, f = params.curl_amplitude, params.curl_frequency
    phase0 = rng.uniform(0.0, 2.0 * np.pi)
    ang = 2.0 * np.pi * f * t + phase0
    if params.style == "wavy":
        off = a * np.sin(ang)[:, None] * e1
    elif params.style in ("curly", "bun-like"):
        off = a * (np.cos(ang)[:, None] * e1 + np.sin(ang)[:, None] * e2)
    else:
        off = np.zeros_like(axis)
    if params.noise_scale > 0:
        coef = rng.dirichlet(np.ones(3)) * params.noise_scale * rng.uniform(0.0, 1.0)
        omega = rng.uniform(0.2, 1.0, size=3)
        phi = rng.uniform(0.0, 2.0 * np.pi, size=3)
        arg = omega[None, :] * t[:, None] + phi[None, :]
        off = off + (np.cos(arg) @ coef)[:, None] * e1 + (np.sin(arg) @ coef)[:, None] * e2
    return ramp * off


def helix_offset(t, amplitude, frequency, phase, e1, e2):
    """Closed-form curl offset used by the generator (before the root ramp)."""
    ang = 2.0 * np.pi * frequency * t + phase
    return amplitude * (np.cos(ang)[:, None] * e1 + np.sin(ang)[:, None] * e2)


def _clip_to_box(pts, axis, bbox, bust):
    inside = np.all((pts >= bbox[0]) & (pts <= bbox[1]), axis=1) & ~bust.in_shoulders(pts)
    bad = np.flatnonzero(~inside)
    end = bad[0] if len(bad) else len(pts)
    return pts[:end], axis[:end]


def _dedupe(pts, axis):
    keep = np.ones(len(pts), dtype=bool)
    keep[1:] = np.any(pts[1:] != pts[:-1], axis=1)
    return pts[keep], axis[keep]


def synth_hairstyle(params: SynthStyleParams, return_axes=False):
    """Procedural hair model; a pure function of ``params``.

    Each strand follows a smooth guide axis from a root on the scalp cap
    (along the root normal, bending toward gravity at rate ``droop``) and gets a
    style offset in a parallel-transport frame: a planar sine for ``wavy``, a
    helix of radius ``curl_amplitude`` for ``curly``/``bun-like``, plus bounded
    smooth noise whose magnitude never exceeds ``noise_scale``. Strands are cut
    at the first point leaving the box or entering the shoulders.
    """
    params.validate()
    rng = np.random.default_rng(params.seed)
    bust = Bust.for_box(params.box)
    bbox = canonical_bbox(params.box)
    stride = max(1, int(round(params.step / _AXIS_STEP)))
    strands, axes = [], []
    lo, hi = params.length_range
    for _ in range(params.strand_count):
        for _attempt in range(20):
            root, normal = _sample_root(rng, bust, params.cap_angle)
            length = rng.uniform(lo, hi) if hi > lo else lo
            axis = _grow_axis(root, normal, length, params, bust)
            pts = axis + _style_offsets(axis, params, rng)
            pts, ax = pts[::stride], axis[::stride]
            pts, ax = _clip_to_box(pts, ax, bbox, bust)
            pts, ax = _dedupe(pts, ax)
            if len(pts) >= 2:
                strands.append(Strand(pts))
                axes.append(ax)
                break
    meta = {"style": params.style, "seed": int(params.seed)}
    model = HairModel(strands, bbox, meta)
    return (model, axes) if return_axes else model


# --- resampling ---------------------------------------------------------------------------------

def catmull_rom(points, samples_per_segment=1000, alpha=0.5):
    """Dense samples of the centripetal Catmull-Rom spline through ``points``.

    The end tangents come from reflected phantom points, so the curve passes
    through every input point; the returned array starts at ``points[0]`` and
    ends at ``points[-1]``.
    """
    p = np.asarray(points, dtype=np.float64)
    if len(p) == 2:
        t = np.linspace(0.0, 1.0, samples_per_segment + 1)[:, None]
        return p[0] + t * (p[1] - p[0])
    ext = np.vstack([2 * p[0] - p[1], p, 2 * p[-1] - p[-2]])
    d = np.linalg.norm(np.diff(ext, axis=0), axis=1) ** alpha
    d = np.maximum(d, 1e-12)
    knots = np.concatenate([[0.0], np.cumsum(d)])
    nseg = len(p) - 1
    u = np.linspace(0.0, 1.0, samples_per_segment, endpoint=False)
    out = []
    for i in range(nseg):
        p0, p1, p2, p3 = ext[i], ext[i + 1], ext[i + 2], ext[i + 3]
        t0, t1, t2, t3 = knots[i], knots[i + 1], knots[i + 2], knots[i + 3]
        t = (t1 + u * (t2 - t1))[:, None]
        a1 = (t1 - t) / (t1 - t0) * p0 + (t - t0) / (t1 - t0) * p1
        a2 = (t2 - t) / (t2 - t1) * p1 + (t - t1) / (t2 - t1) * p2
        a3 = (t3 - t) / (t3 - t2) * p2 + (t - t2) / (t3 - t2) * p3
        b1 = (t2 - t) / (t2 - t0) * a1 + (t - t0) / (t2 - t0) * a2
        b2 = (t3 - t) / (t3 - t1) * a2 + (t - t1) / (t3 - t1) * a3
        out.append((t2 - t) / (t2 - t1) * b1 + (t - t1) / (t2 - t1) * b2)
    out.append(p[-1:])
    return np.vstack(out)


def _next_at_distance(dense, start_idx, center, s):
    """First point along ``dense`` after ``start_idx`` at Euclidean distance ``s`` from ``center``."""
    n = len(dense)
    i = start_idx
    window = 256
    while i < n - 1:
        seg = dense[i:min(n, i + window + 1)]
        dist = np.linalg.norm(seg - center, axis=1)
        hit = np.flatnonzero(dist[1:] >= s)
        if len(hit):
            j = i + hit[0] + 1
            a, b = dense[j - 1], dense[j]
            # solve |a + u (b - a) - c| = s for u in [0, 1]
            ab = b - a
            ac = a - center
            qa = ab @ ab
            qb = 2 * (ab @ ac)
            qc = ac @ ac - s * s
            disc = max(qb * qb - 4 * qa * qc, 0.0)
            u = (-qb + np.sqrt(disc)) / (2 * qa)
            u = min(max(u, 0.0), 1.0)
            return a + u * ab, j - 1
        i = i + window
        window *= 2
    return None, n - 1


def resample_uniform(strand: Strand, s: float, samples_per_segment=1000) -> Strand:
    """Resample a strand to constant step ``s`` along an interpolating spline.

    Points are placed by walking the densely sampled spline and emitting the
    next point where the chord from the previous point reaches length ``s``,
    so every output segment has length ``s`` up to the dense-sampling error.
    When the leftover tail exceeds ``s/2`` one more point is placed on the
    tangent extension, which keeps the tip within ``s/2`` of the original.
    """
    if s <= 0:
        raise ValueError("step must be positive")
    pts = strand.points
    if strand.length < s:
        raise TooShortError(f"too-short: strand length {strand.length:.4g} < step {s:.4g}")
    dense = catmull_rom(pts, samples_per_segment)
    n_curve = len(dense)
    tail_dir = dense[-1] - dense[-2]
    tail_dir /= np.linalg.norm(tail_dir)
    dense = np.vstack([dense, dense[-1] + 2.0 * s * tail_dir])
    tip = pts[-1]
    out = [pts[0].copy()]
    idx = 0
    while True:
        nxt, idx = _next_at_distance(dense, idx, out[-1], s)
        if nxt is None:
            break
        if idx >= n_curve - 1:
            # the candidate lies on the tangent extension past the tip
            if np.linalg.norm(tip - out[-1]) >= s / 2:
                out.append(nxt)
            break
        out.append(nxt)
    return Strand(np.array(out))


# --- augmentation -------------------------------------------------------------------------------

def _transform(model, fn, max_box=None):
    max_box = model.bbox if max_box is None else np.asarray(max_box, dtype=np.float64).reshape(2, 3)
    strands = [Strand(fn(s.points)) for s in model.strands]
    corners = np.array([[model.bbox[i, 0], model.bbox[j, 1], model.bbox[k, 2]]
                        for i in (0, 1) for j in (0, 1) for k in (0, 1)])
    tc = fn(corners)
    bbox = np.array([np.maximum(tc.min(axis=0), max_box[0]), np.minimum(tc.max(axis=0), max_box[1])])
    out = HairModel(strands, bbox, dict(model.meta))
    pts = out.all_points()
    if len(pts) and (np.any(pts < max_box[0] - 1e-9) or np.any(pts > max_box[1] + 1e-9)):
        raise ValueError("augmentation moved strand points outside the maximum box")
    return out


def hflip(model: HairModel, max_box=None) -> HairModel:
    """Mirror x about the bbox center."""
    c2 = model.bbox[0, 0] + model.bbox[1, 0]

    def fn(p):
        q = p.copy()
        q[:, 0] = c2 - p[:, 0]
        return q

    return _transform(model, fn, max_box)


def scale(model: HairModel, k: float, max_box=None) -> HairModel:
    """Uniform scale by ``k`` about the bbox center."""
    if k <= 0:
        raise ValueError("scale factor must be positive")
    if k == 1:
        return _transform(model, lambda p: p.copy(), max_box)
    c = model.bbox.mean(axis=0)
    return _transform(model, lambda p: c + k * (p - c), max_box)


def rotate(model: HairModel, theta: float, max_box=None) -> HairModel:
    """Rotate by ``theta`` radians about the vertical (y) axis through the bbox center."""
    c = model.bbox.mean(axis=0)
    ct, st = np.cos(theta), np.sin(theta)
    rot = np.array([[ct, 0.0, st], [0.0, 1.0, 0.0], [-st, 0.0, ct]])
    return _transform(model, lambda p: c + (p - c) @ rot.T, max_box)


def augment(model: HairModel, op: str, value=None, max_box=None) -> HairModel:
    if op == "hflip":
        return hflip(model, max_box)
    if op == "scale":
        return scale(model, value, max_box)
    if op == "rotate":
        return rotate(model, value, max_box)
    raise ValueError(f"unknown augmentation {op!r}")


def with_seed(params: SynthStyleParams, seed: int) -> SynthStyleParams:
    return replace(params, seed=seed)
