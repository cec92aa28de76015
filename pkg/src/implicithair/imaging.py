"""2D network inputs: orientation, luminance and depth maps, plus strand rendering.

Image axes follow the world: column ``u`` grows with world ``x`` and row
``v`` with world ``y``. Angles in ORI2D maps are measured from the ``+u`` axis
toward ``+v`` and live in [0, pi); pixels without hair hold -1. DEPTH maps are
in voxel units along the grid depth axis with +inf for background.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .errors import ConfigError
from .strands import Bust

KINDS = ("RGB", "ORI2D", "LUMA", "DEPTH", "MASK")
ORI_SENTINEL = -1.0
DEPTH_SENTINEL = np.inf


@dataclass
class ImageMap:
    data: np.ndarray  # (h, w) or (h, w, c), float32
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown image kind {self.kind!r}")
        self.data = np.asarray(self.data, dtype=np.float32)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return 1 if self.data.ndim == 2 else self.data.shape[2]


@dataclass(frozen=True)
class Projection:
    """Orthographic camera looking along +z whose image covers the grid box exactly."""

    spec: object  # GridSpec
    width: int
    height: int

    @property
    def _scale(self):
        sx, sy, _ = self.spec.size_xyz * self.spec.voxel_size
        return self.width / sx, self.height / sy

    def project(self, p):
        """World points (..., 3) -> (u, v, Z) with Z the depth in voxel units."""
        p = np.asarray(p, dtype=np.float64)
        ku, kv = self._scale
        o = self.spec.box_min
        u = (p[..., 0] - o[0]) * ku
        v = (p[..., 1] - o[1]) * kv
        z = (p[..., 2] - o[2]) / self.spec.voxel_size
        return np.stack([u, v, z], axis=-1)

    def unproject(self, uvz):
        uvz = np.asarray(uvz, dtype=np.float64)
        ku, kv = self._scale
        o = self.spec.box_min
        x = uvz[..., 0] / ku + o[0]
        y = uvz[..., 1] / kv + o[1]
        z = uvz[..., 2] * self.spec.voxel_size + o[2]
        return np.stack([x, y, z], axis=-1)

    def pixel_of(self, p):
        """(row, col) integer pixel containing the projection of ``p``, clamped to the image."""
        uvz = self.project(p)
        col = np.clip(np.floor(uvz[..., 0]).astype(np.int64), 0, self.width - 1)
        row = np.clip(np.floor(uvz[..., 1]).astype(np.int64), 0, self.height - 1)
        return row, col

    def pixel_centers_world(self):
        """World (x, y) of every pixel center, shape (h, w, 2)."""
        v, u = np.meshgrid(np.arange(self.height) + 0.5, np.arange(self.width) + 0.5, indexing="ij")
        xyz = self.unproject(np.stack([u, v, np.zeros_like(u)], axis=-1))
        return xyz[..., :2]

    def with_size(self, width, height=None):
        return Projection(self.spec, width, width if height is None else height)


# --- strand rendering ---------------------------------------------------------------------------

HAIR_RGB = np.array([0.55, 0.38, 0.24])


def strand_shade(tangent, ambient=0.15):
    """Diffuse term of a thin fibre lit from the camera: bright when the tangent lies in the image plane."""
    tz = np.clip(np.abs(tangent[..., 2]), 0.0, 1.0)
    return ambient + (1.0 - ambient) * np.sqrt(1.0 - tz * tz)


def _fragments(model, proj, px_step=0.25):
    """Per-pixel fragments (flat pixel, depth, shade, coverage) of all strand segments."""
    if not model.strands:
        return (np.zeros(0, np.int64),) + (np.zeros(0),) * 3
    a = np.concatenate([s.points[:-1] for s in model.strands])
    b = np.concatenate([s.points[1:] for s in model.strands])
    tan = b - a
    tan /= np.linalg.norm(tan, axis=1, keepdims=True)
    shade = strand_shade(tan)
    pa, pb = proj.project(a), proj.project(b)
    plen = np.linalg.norm((pb - pa)[:, :2], axis=1)
    n = np.maximum(np.ceil(plen / px_step).astype(np.int64), 1) + 1
    seg = np.repeat(np.arange(len(a)), n)
    offs = np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n)
    t = (offs / np.repeat(n - 1, n))[:, None]
    s = pa[seg] + t * (pb - pa)[seg]
    base_c = np.floor(s[:, 0]).astype(np.int64)
    base_r = np.floor(s[:, 1]).astype(np.int64)
    pix, dep, shd, cov = [], [], [], []
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            r = base_r + dr
            c = base_c + dc
            ok = (r >= 0) & (r < proj.height) & (c >= 0) & (c < proj.width)
            dist = np.hypot(c + 0.5 - s[:, 0], r + 0.5 - s[:, 1])
            cv = np.clip(1.0 - dist, 0.0, 1.0)
            ok &= cv > 0
            pix.append((r * proj.width + c)[ok])
            dep.append(s[ok, 2])
            shd.append(shade[seg[ok]])
            cov.append(cv[ok])
    return np.concatenate(pix), np.concatenate(dep), np.concatenate(shd), np.concatenate(cov)


def _zbuffer(pix, dep, shd, cov, npix, min_cov=0.25):
    """Nearest fragment per pixel among those with coverage >= min_cov; coverage is the max over fragments."""
    coverage = np.zeros(npix)
    np.maximum.at(coverage, pix, cov)
    depth = np.full(npix, np.inf)
    shade = np.zeros(npix)
    keep = cov >= min_cov
    p, d, s = pix[keep], dep[keep], shd[keep]
    order = np.lexsort((d, p))
    p, d, s = p[order], d[order], s[order]
    first = np.ones(len(p), dtype=bool)
    first[1:] = p[1:] != p[:-1]
    depth[p[first]] = d[first]
    shade[p[first]] = s[first]
    return coverage, depth, shade


def rasterize_strands(model, proj: Projection):
    """Z-buffered, anti-aliased polyline render. Returns (RGB ImageMap, MASK ImageMap).

    Each pixel shows the nearest strand fragment, shaded by ``strand_shade`` of
    its tangent and blended over a black background by the tent-filter
    coverage. The mask is that coverage.
    """
    h, w = proj.height, proj.width
    coverage, depth, shade = _zbuffer(*_fragments(model, proj), h * w)
    alpha = np.minimum(coverage, 1.0)
    rgb = (alpha * shade)[:, None] * HAIR_RGB[None, :]
    return ImageMap(rgb.reshape(h, w, 3), "RGB"), ImageMap(coverage.reshape(h, w), "MASK")


def hair_front_depth(model, proj: Projection, min_cov=0.5):
    """Depth of the nearest hair fragment per pixel (voxel units); +inf off hair."""
    h, w = proj.height, proj.width
    _, depth, _ = _zbuffer(*_fragments(model, proj), h * w, min_cov=min_cov)
    return ImageMap(depth.reshape(h, w), "DEPTH")


def bust_depth_map(proj: Projection, bust: Bust | None = None, hair=None):
    """Nearest-surface depth of the analytic bust, optionally unioned with a hair model's front surface."""
    bust = Bust.for_box(proj.spec.size_xyz * proj.spec.voxel_size) if bust is None else bust
    xy = proj.pixel_centers_world()
    z = bust.front_depth(xy[..., 0], xy[..., 1])
    depth = (z - proj.spec.origin[2]) / proj.spec.voxel_size
    if hair is not None:
        depth = np.minimum(depth, hair_front_depth(hair, proj).data)
    return ImageMap(depth, "DEPTH")


def depth_lookup(depth: ImageMap, proj: Projection):
    """Callable mapping world points to the depth map value at their pixel."""
    def lookup(points):
        r, c = proj.pixel_of(points)
        return depth.data[r, c].astype(np.float64)

    return lookup


# --- luminance ----------------------------------------------------------------------------------

def srgb_to_linear(c):
    c = np.asarray(c, dtype=np.float64)
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def luminance_map(img: ImageMap) -> ImageMap:
    """CIE L* of an sRGB image (D65 white, Y_n = 1)."""
    rgb = srgb_to_linear(np.clip(img.data, 0.0, 1.0))
    y = rgb[..., 0] * 0.2126729 + rgb[..., 1] * 0.7151522 + rgb[..., 2] * 0.0721750
    eps = (6.0 / 29.0) ** 3
    f = np.where(y > eps, np.cbrt(y), y / (3 * (6.0 / 29.0) ** 2) + 4.0 / 29.0)
    return ImageMap(np.clip(116.0 * f - 16.0, 0.0, 100.0), "LUMA")


# --- orientation --------------------------------------------------------------------------------

@dataclass(frozen=True)
class GaborBank:
    n_orientations: int = 32
    wavelength: float = 4.0
    sigma: float = 2.0

    def __post_init__(self):
        if self.n_orientations < 4:
            raise ConfigError("a Gabor bank needs at least 4 orientations")

    @property
    def angles(self):
        return np.arange(self.n_orientations) * np.pi / self.n_orientations

    def kernel(self, theta):
        """Complex Gabor tuned to structures running along angle ``theta``.

        The real part is the even filter, the imaginary part the odd one. The
        DC component is removed and every orientation shares one normalisation,
        so bins are comparable.
        """
        half = int(np.ceil(3 * self.sigma))
        yy, xx = np.mgrid[-half:half + 1, -half:half + 1].astype(np.float64)
        across = -np.sin(theta) * xx + np.cos(theta) * yy
        env = np.exp(-(xx ** 2 + yy ** 2) / (2 * self.sigma ** 2))
        k = env * np.exp(2j * np.pi * across / self.wavelength)
        k -= env * (k.sum() / env.sum())
        return k / env.sum()


def _intensity(img: ImageMap):
    if img.kind == "LUMA":
        return img.data.astype(np.float64) / 100.0
    if img.kind == "RGB":
        return luminance_map(img).data / 100.0
    return img.data.astype(np.float64)


def orientation_response(img: ImageMap, bank: GaborBank):
    """Stack (K, h, w) of Gabor energies.

    The even response alone vanishes wherever a periodic pattern crosses zero,
    so the energy of the even/odd quadrature pair is used instead.
    """
    gray = _intensity(img)
    return np.stack([np.abs(fftconvolve(gray, bank.kernel(t), mode="same")) for t in bank.angles])


def orientation_map(img: ImageMap, bank: GaborBank | None = None, mask=None) -> ImageMap:
    """Dominant local orientation per masked pixel, refined by a parabola through the best bin and its neighbours."""
    bank = GaborBank() if bank is None else bank
    resp = orientation_response(img, bank)
    K = bank.n_orientations
    k = np.argmax(resp, axis=0)
    r0 = np.take_along_axis(resp, k[None], 0)[0]
    rm = np.take_along_axis(resp, ((k - 1) % K)[None], 0)[0]
    rp = np.take_along_axis(resp, ((k + 1) % K)[None], 0)[0]
    denom = rm - 2 * r0 + rp
    delta = np.where(np.abs(denom) > 1e-12, 0.5 * (rm - rp) / np.where(denom == 0, 1, denom), 0.0)
    delta = np.clip(delta, -0.5, 0.5)
    theta = np.mod((k + delta) * np.pi / K, np.pi)
    if mask is not None:
        m = mask.data if isinstance(mask, ImageMap) else np.asarray(mask)
        theta = np.where(m > 0.5 if m.dtype != bool else m, theta, ORI_SENTINEL)
    return ImageMap(theta, "ORI2D")


def angle_distance(a, b):
    """pi-periodic absolute angle difference in [0, pi/2]."""
    d = np.mod(np.abs(np.asarray(a) - np.asarray(b)), np.pi)
    return np.minimum(d, np.pi - d)
