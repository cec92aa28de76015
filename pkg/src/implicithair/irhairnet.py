"""Coarse-to-fine implicit inference of orientation and occupancy fields from 2D maps.

The coarse module is a 2D encoder / 3D decoder U-Net. Every skip is lifted to
3D by :func:`implicit_to_voxel`, which copies the 2D feature along depth and
runs a pointwise map of (feature, normalised depth). The decoder output is a
per-voxel latent volume F. A query point p is decoded by trilinear lookup of
F at p, concatenated with its normalised depth, through two MLPs (orientation
and occupancy). The fine module extracts a per-pixel feature map from the
high-resolution luminance image with a small stacked hourglass; its MLPs take
the coarse MLP's first hidden activation, the local luminance feature and the
depth, and add a residual to the coarse prediction.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DimensionError, DivergenceError
from .fields import GridSpec, OccupancyField, OrientationField
from .nn import MLP, Adam, AdamConfig, Conv, Module, Tensor, make_checkpoint, ops, spec_digest

log = logging.getLogger(__name__)

OCC_EPS = 1e-7


# --- visibility weights and losses --------------------------------------------------------------

@dataclass(frozen=True)
class VisibilityWeights:
    tau: float = 5.0
    w_visible: float = 10.0
    w_invisible: float = 1.0
    lam: float = 0.5

    def __post_init__(self):
        if self.tau <= 0 or self.w_visible <= 0 or self.w_invisible <= 0:
            raise ValueError("tau and weights must be positive")
        if not 0 < self.lam < 1:
            raise ValueError("lambda must lie in (0, 1)")


def visibility_weight(z, d, tau=5.0, w_visible=10.0, w_invisible=1.0):
    """Per-point loss weight from point depth ``z`` and hair front depth ``d`` at its pixel.

    Points at least ``tau`` voxels behind the hair surface get ``w_invisible``;
    everything nearer (including points in front of the surface) gets
    ``w_visible``. Pixels without hair (``d`` = +inf) get ``w_invisible``.
    """
    z = np.asarray(z, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    w = np.where(z - d >= tau, w_invisible, w_visible)
    return np.where(np.isinf(d), w_invisible, w)


def loss_ori(pred, target, weight, mask=None):
    """Weighted L1 orientation loss averaged over samples (or over ``mask``-selected samples)."""
    target = np.asarray(target, dtype=pred.dtype)
    w = np.asarray(weight, dtype=pred.dtype).reshape(-1, 1)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        n = int(mask.sum())
        if n == 0:
            return ops.mul(ops.sum_(pred), 0.0)
        w = w * mask.reshape(-1, 1)
    else:
        n = pred.shape[0]
    err = ops.absolute(pred - Tensor(target))
    return ops.sum_(ops.mul(err, Tensor(w))) / float(n)


def loss_occ(pred, target, weight, lam=0.5):
    """Weighted, class-balanced binary cross entropy averaged over samples.

    ``lam="auto"`` sets the positive-class weight to the batch negative fraction.
    """
    t = np.asarray(target, dtype=pred.dtype).reshape(pred.shape)
    w = np.asarray(weight, dtype=pred.dtype).reshape(pred.shape)
    if lam == "auto":
        lam = float(np.clip(1.0 - t.mean(), 0.05, 0.95))
    o = ops.clamp(pred, OCC_EPS, 1.0 - OCC_EPS)
    pos = ops.mul(ops.log(o), Tensor(w * lam * t))
    neg = ops.mul(ops.log(1.0 - o), Tensor(w * (1.0 - lam) * (1.0 - t)))
    return ops.mul(ops.sum_(pos + neg), -1.0 / pred.shape[0])


def loss_occ_logits(logit, target, weight, lam=0.5):
    """Same value as :func:`loss_occ` on ``sigmoid(logit)``; kept separate so callers can share the graph."""
    return loss_occ(ops.sigmoid(logit), target, weight, lam)


# --- configuration ------------------------------------------------------------------------------

@dataclass
class IRHairConfig:
    grid_dims: tuple = (24, 32, 32)
    latent_ch: int = 16
    coarse_size: int = 64
    fine_size: int = 256
    in_ch: int = 4
    enc_channels: tuple = (8, 16, 32, 64, 64)
    dec_channels: tuple = (64, 32, 16, 8)
    coarse_hidden: tuple = (64, 32, 16)
    fine_channels: int = 8
    fine_feat: int = 8
    fine_stacks: int = 2
    fine_depth: int = 3
    fine_hidden: tuple = (128, 64, 32, 16)

    def __post_init__(self):
        self.grid_dims = tuple(int(v) for v in self.grid_dims)
        self.enc_channels = tuple(self.enc_channels)
        self.dec_channels = tuple(self.dec_channels)
        self.coarse_hidden = tuple(self.coarse_hidden)
        self.fine_hidden = tuple(self.fine_hidden)
        if len(self.dec_channels) != len(self.enc_channels) - 1:
            raise ValueError("need exactly one decoder stage per encoder skip below the bottleneck")
        if self.coarse_size // 2 != self.grid_dims[1] or self.coarse_size // 2 != self.grid_dims[2]:
            raise ValueError(f"coarse input {self.coarse_size} must be twice the latent H, W {self.grid_dims[1:]}")
        if self.coarse_size % 2 ** len(self.enc_channels):
            raise ValueError("coarse input size must be divisible by 2**(number of encoder layers)")

    @property
    def omega_dim(self):
        return self.coarse_hidden[0]

    @property
    def coarse_mlp_in(self):
        return self.latent_ch + 1

    @property
    def fine_mlp_in(self):
        return self.omega_dim + self.fine_feat + 1

    def level_sizes(self):
        """(H, W) of every encoder output, finest first."""
        return [self.coarse_size // 2 ** (k + 1) for k in range(len(self.enc_channels))]

    def level_depth(self, h):
        D, H, _ = self.grid_dims
        return max(1, int(round(D * h / H)))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def full_scale(cls):
        return cls(grid_dims=(96, 128, 128), latent_ch=64, coarse_size=256, fine_size=1024,
                   enc_channels=(32, 64, 128, 256, 256), dec_channels=(256, 128, 64, 32),
                   coarse_hidden=(256, 128, 64), fine_channels=32, fine_feat=32, fine_hidden=(512, 256, 128, 64))

    @classmethod
    def scaled(cls, divisor: int):
        """Full-scale layout with spatial sizes and channel widths divided by ``divisor``."""
        f = cls.full_scale()
        return cls(grid_dims=tuple(d // divisor for d in f.grid_dims), latent_ch=f.latent_ch // divisor,
                   coarse_size=f.coarse_size // divisor, fine_size=f.fine_size // divisor,
                   enc_channels=tuple(max(4, c // divisor) for c in f.enc_channels),
                   dec_channels=tuple(max(4, c // divisor) for c in f.dec_channels),
                   coarse_hidden=tuple(c // divisor for c in f.coarse_hidden),
                   fine_channels=max(4, f.fine_channels // divisor), fine_feat=f.fine_feat // divisor,
                   fine_hidden=tuple(c // divisor for c in f.fine_hidden))


# --- implicit-to-voxel --------------------------------------------------------------------------

def depth_channel(batch, shape, dtype=np.float32):
    """Constant (B, 1, D, H, W) tensor holding the normalised depth (k + 0.5) / D of each voxel slice."""
    D, H, W = shape
    z = ((np.arange(D) + 0.5) / D).astype(dtype)
    return Tensor(np.broadcast_to(z.reshape(1, 1, D, 1, 1), (batch, 1, D, H, W)).copy())


def implicit_to_voxel(feat2d, target_shape, theta):
    """Lift (B, C, H, W) image features to a (B, C', D, H, W) block.

    Every voxel gets ``theta`` applied to its pixel's feature and its
    normalised depth; ``theta`` is any pointwise map of (B, C+1, D, H, W),
    normally a 1x1x1 convolution.
    """
    D, H, W = target_shape
    if feat2d.shape[2:] != (H, W):
        raise DimensionError(f"feature map {feat2d.shape[2:]} does not match block {(H, W)}")
    x = ops.expand(feat2d, 2, D)
    z = depth_channel(feat2d.shape[0], target_shape, feat2d.dtype)
    return theta(ops.concat([x, z], axis=1))


# --- networks -----------------------------------------------------------------------------------

class CoarseNet(Module):
    def __init__(self, cfg: IRHairConfig, rng, dtype=np.float32):
        self._cfg = cfg
        enc = cfg.enc_channels
        chans_in = (cfg.in_ch,) + enc[:-1]
        self.enc = [Conv(2, ci, co, 3, 2, "relu", rng, dtype, name=f"coarse.enc{i}")
                    for i, (ci, co) in enumerate(zip(chans_in, enc))]
        self.lift = [Conv(3, c + 1, c, 1, 1, "relu", rng, dtype, name=f"coarse.lift{i}") for i, c in enumerate(enc)]
        dec_in = []
        prev = enc[-1]
        for i, co in enumerate(cfg.dec_channels):
            skip = enc[-2 - i]
            dec_in.append(prev + skip)
            prev = co
        self.dec = [Conv(3, ci, co, 3, 1, "relu", rng, dtype, name=f"coarse.dec{i}")
                    for i, (ci, co) in enumerate(zip(dec_in, cfg.dec_channels))]
        self.head = Conv(3, cfg.dec_channels[-1], cfg.latent_ch, 1, 1, "linear", rng, dtype, name="coarse.head")
        self.ori_mlp = MLP((cfg.coarse_mlp_in,) + cfg.coarse_hidden + (3,), rng=rng, dtype=dtype, name="coarse.ori")
        self.occ_mlp = MLP((cfg.coarse_mlp_in,) + cfg.coarse_hidden + (1,), rng=rng, dtype=dtype, name="coarse.occ")

    def features(self, x):
        """Latent volume F (B, latent, D, H, W) from coarse inputs (B, in_ch, s, s)."""
        cfg = self._cfg
        x = ops.as_tensor(x)
        if x.shape[1:] != (cfg.in_ch, cfg.coarse_size, cfg.coarse_size):
            raise DimensionError(f"coarse input {x.shape[1:]} expected {(cfg.in_ch, cfg.coarse_size, cfg.coarse_size)}")
        skips = []
        for conv in self.enc:
            x = conv(x)
            skips.append(x)
        h = skips[-1].shape[2]
        vol = implicit_to_voxel(skips[-1], (cfg.level_depth(h), h, h), self.lift[-1])
        for i, conv in enumerate(self.dec):
            k = len(skips) - 2 - i
            s = skips[k]
            h = s.shape[2]
            shape = (cfg.level_depth(h), h, s.shape[3])
            up = ops.resize_nearest(vol, shape)
            vol = conv(ops.concat([up, implicit_to_voxel(s, shape, self.lift[k])], axis=1))
        F = self.head(vol)
        if F.shape[2:] != cfg.grid_dims:
            raise DimensionError(f"latent volume {F.shape[2:]} does not match grid {cfg.grid_dims}")
        return F

    def decode(self, F, vox, znorm, batch=None):
        """Decode latent lookups at voxel coords (N, 3). Returns a dict of tensors.

        ``omega_ori`` / ``omega_occ`` are the first hidden activations of the two
        MLPs, the inputs the fine module refines from.
        """
        lat = ops.grid_sample3d(F, vox, batch)
        h = ops.concat([lat, Tensor(np.asarray(znorm, dtype=F.dtype).reshape(-1, 1))], axis=1)
        om_ori = self.ori_mlp(h, upto=1)
        om_occ = self.occ_mlp(h, upto=1)
        return {"ori": self.ori_mlp.tail(om_ori, 1), "occ_logit": self.occ_mlp.tail(om_occ, 1),
                "omega_ori": om_ori, "omega_occ": om_occ}


class Hourglass(Module):
    """One hourglass: ``depth`` stride-2 downs, nearest-upsample ups with additive skips."""

    def __init__(self, ch, depth, rng, dtype, name):
        self.pre = Conv(2, ch, ch, 3, 1, "relu", rng, dtype, name=f"{name}.pre")
        self.down = [Conv(2, ch, ch, 3, 2, "relu", rng, dtype, name=f"{name}.down{i}") for i in range(depth)]
        self.up = [Conv(2, ch, ch, 3, 1, "relu", rng, dtype, name=f"{name}.up{i}") for i in range(depth)]

    def __call__(self, x):
        x = self.pre(x)
        skips = [x]
        for conv in self.down:
            x = conv(x)
            skips.append(x)
        skips.pop()
        for conv in self.up:
            s = skips.pop()
            x = conv(ops.resize_nearest(x, s.shape[2:]) + s)
        return x


class FineNet(Module):
    def __init__(self, cfg: IRHairConfig, rng, dtype=np.float32):
        self._cfg = cfg
        c = cfg.fine_channels
        self.stem = Conv(2, 1, c, 3, 2, "relu", rng, dtype, name="fine.stem")
        self.stacks = [Hourglass(c, cfg.fine_depth, rng, dtype, f"fine.hg{i}") for i in range(cfg.fine_stacks)]
        self.head = Conv(2, c, cfg.fine_feat, 1, 1, "linear", rng, dtype, name="fine.head")
        widths = (cfg.fine_mlp_in,) + cfg.fine_hidden
        self.ori_mlp = MLP(widths + (3,), rng=rng, dtype=dtype, name="fine.ori")
        self.occ_mlp = MLP(widths + (1,), rng=rng, dtype=dtype, name="fine.occ")
        self.ori_mlp.zero_last()
        self.occ_mlp.zero_last()

    def features(self, lum):
        """Local feature map (B, fine_feat, S/2, S/2) from luminance (B, 1, S, S) scaled to [0, 1]."""
        cfg = self._cfg
        lum = ops.as_tensor(lum)
        if lum.shape[1:] != (1, cfg.fine_size, cfg.fine_size):
            raise DimensionError(f"luminance input {lum.shape[1:]} expected {(1, cfg.fine_size, cfg.fine_size)}")
        x = self.stem(lum)
        for hg in self.stacks:
            x = x + hg(x)
        return self.head(x)

    def fuse(self, omega_ori, omega_occ, local, znorm):
        """Residual (d_ori, d_occ_logit) from Omega, the local feature and depth."""
        cfg = self._cfg
        z = Tensor(np.asarray(znorm, dtype=local.dtype).reshape(-1, 1))
        for om in (omega_ori, omega_occ):
            if om.shape[1] + local.shape[1] + 1 != cfg.fine_mlp_in:
                raise DimensionError(f"fine input {om.shape[1]}+{local.shape[1]}+1 != {cfg.fine_mlp_in}")
        d_ori = self.ori_mlp(ops.concat([omega_ori, local, z], axis=1))
        d_occ = self.occ_mlp(ops.concat([omega_occ, local, z], axis=1))
        return d_ori, d_occ


class IRHairNet(Module):
    def __init__(self, cfg: IRHairConfig | None = None, seed=0, dtype=np.float32, spec: GridSpec | None = None):
        self._cfg = cfg or IRHairConfig()
        self._seed = seed
        self._spec = spec or GridSpec(self._cfg.grid_dims)
        if tuple(self._spec.dims) != self._cfg.grid_dims:
            raise DimensionError(f"grid spec {self._spec.dims} does not match config {self._cfg.grid_dims}")
        rng = np.random.default_rng(seed)
        self.coarse = CoarseNet(self._cfg, rng, dtype)
        self.fine = FineNet(self._cfg, rng, dtype)

    @property
    def cfg(self):
        return self._cfg

    @property
    def spec(self):
        return self._spec

    def digest(self):
        extra = {"cfg": self._cfg.to_dict(), "spec": [self._spec.dims, self._spec.origin, self._spec.voxel_size]}
        return spec_digest(self.layer_specs(), extra)

    def query_coords(self, points):
        """Voxel coords (N, 3), normalised depth (N,) and fine-feature pixel coords (N, 2) of world points."""
        spec = self._spec
        p = np.asarray(points, dtype=np.float64)
        vox = spec.to_voxel(p)
        rel = (p - spec.box_min) / (spec.voxel_size * spec.size_xyz)
        nf = self._cfg.fine_size // 2
        pix = rel[:, :2] * nf - 0.5
        return vox, rel[:, 2], pix

    def forward_points(self, coarse_in, points, batch=None, lum=None, F=None, local=None):
        """Predictions at world points. With ``lum`` (or precomputed ``local``) the fine residual is added."""
        vox, z, pix = self.query_coords(points)
        if F is None:
            F = self.coarse.features(coarse_in)
        out = self.coarse.decode(F, vox, z, batch)
        if lum is None and local is None:
            return out
        if local is None:
            local = self.fine.features(lum)
        loc = ops.grid_sample2d(local, pix, batch)
        d_ori, d_occ = self.fine.fuse(out["omega_ori"], out["omega_occ"], loc, z)
        out = dict(out)
        out["ori"] = out["ori"] + d_ori
        out["occ_logit"] = out["occ_logit"] + d_occ
        return out


def vifu_decode(net: IRHairNet, F, points, batch=None):
    """(ori (N, 3) unnormalised, occ (N,) in (0, 1), clamped flags) from a latent volume at world points."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    clamped = ~net.spec.contains(pts)
    F = F if isinstance(F, Tensor) else Tensor(np.asarray(F))
    vox, z, _ = net.query_coords(pts)
    out = net.coarse.decode(F, vox, z, batch)
    return out["ori"].data, ops.sigmoid(out["occ_logit"]).data[:, 0], clamped


def fine_fuse(net: IRHairNet, coarse_out, local_feat, znorm):
    """Refined (ori, occ) from a coarse decode dict and sampled local features."""
    d_ori, d_occ = net.fine.fuse(coarse_out["omega_ori"], coarse_out["omega_occ"], ops.as_tensor(local_feat), znorm)
    ori = coarse_out["ori"] + d_ori
    occ = ops.sigmoid(coarse_out["occ_logit"] + d_occ)
    return ori, occ


# --- data ---------------------------------------------------------------------------------------

@dataclass
class IRHairItem:
    """One training/evaluation example: network inputs plus supervision."""

    coarse: np.ndarray  # (in_ch, s, s)
    lum: np.ndarray  # (1, S, S), L*/100
    points: np.ndarray  # (P, 3) pool of supervised points
    target_ori: np.ndarray
    target_occ: np.ndarray
    weight: np.ndarray
    fields: tuple = None  # (OrientationField, OccupancyField), fill-holed
    meta: dict = field(default_factory=dict)


def coarse_inputs(ori2d, bust_depth, size, depth_scale):
    """Stack the coarse network input channels at ``size`` x ``size``.

    Channels: cos 2theta and sin 2theta times the hair mask, the mask, and
    bust nearness 1 - depth/depth_scale (0 off the bust). Maps larger than
    ``size`` are box-averaged down by an integer factor.
    """
    theta = np.asarray(ori2d.data, dtype=np.float64)
    m = (theta >= 0).astype(np.float64)
    c = np.where(m > 0, np.cos(2 * theta), 0.0)
    s = np.where(m > 0, np.sin(2 * theta), 0.0)
    d = np.asarray(bust_depth.data, dtype=np.float64)
    near = np.where(np.isfinite(d), 1.0 - d / depth_scale, 0.0)
    chans = [_box_down(a, size) for a in (c, s, m)] + [_box_down(near, size)]
    return np.stack(chans).astype(np.float32)


def _box_down(a, size):
    h, w = a.shape
    if h == size and w == size:
        return a
    if h % size or w % size:
        raise DimensionError(f"map {a.shape} is not an integer multiple of {size}")
    f = h // size
    return a.reshape(size, f, size, w // size).mean(axis=(1, 3))


def render_maps(model, cfg: IRHairConfig, spec: GridSpec | None = None, bank=None):
    """Image-space inputs of one model at the fine resolution: rgb, mask, lum, ori2d and bust_depth."""
    from .imaging import Projection, bust_depth_map, luminance_map, orientation_map, rasterize_strands

    spec = spec or GridSpec(cfg.grid_dims)
    proj = Projection(spec, cfg.fine_size, cfg.fine_size)
    rgb, mask = rasterize_strands(model, proj)
    lum = luminance_map(rgb)
    return {"rgb": rgb, "mask": mask, "lum": lum, "ori2d": orientation_map(lum, bank, mask),
            "bust_depth": bust_depth_map(proj)}


def network_inputs(maps, cfg: IRHairConfig, depth_scale):
    """(coarse input (4, S, S), luminance input (1, F, F)) from rendered or loaded maps."""
    lum = np.asarray(maps["lum"].data, dtype=np.float32)
    if lum.shape != (cfg.fine_size, cfg.fine_size):
        raise DimensionError(f"luminance map {lum.shape} does not match fine size {cfg.fine_size}")
    coarse = coarse_inputs(maps["ori2d"], maps["bust_depth"], cfg.coarse_size, depth_scale)
    return coarse, (lum / 100.0)[None]


def build_item(model, cfg: IRHairConfig, spec: GridSpec | None = None, n_points=4096, sigma=2.0, seed=0,
               bank=None, weights: VisibilityWeights | None = None, maps=None):
    """Render the maps and sample supervision for one hair model."""
    from .fields import fill_holes, sample_training_points, voxelize
    from .imaging import Projection, depth_lookup, hair_front_depth

    spec = spec or GridSpec(cfg.grid_dims)
    weights = weights or VisibilityWeights()
    maps = maps or render_maps(model, cfg, spec, bank)
    coarse, lum = network_inputs(maps, cfg, float(spec.dims[0]))
    ori, occ = voxelize(model, spec)
    ori = fill_holes(ori)
    occ = OccupancyField(spec, ori.occupied.astype(np.float32))
    proj_c = Projection(spec, cfg.coarse_size, cfg.coarse_size)
    front = hair_front_depth(model, proj_c)
    batch = sample_training_points(model, spec, n_points, sigma, seed, fields=(ori, occ),
                                   depth_lookup=depth_lookup(front, proj_c), tau=weights.tau)
    return IRHairItem(coarse, lum, batch.points, batch.target_ori, batch.target_occ, batch.weight, (ori, occ),
                      dict(model.meta))


# --- training -----------------------------------------------------------------------------------

@dataclass
class IRHairTrainConfig:
    epochs_coarse: int = 60
    epochs_fine: int = 30
    batch_models: int = 4
    samples_per_model: int = 512
    lr: float = 1e-3
    decay_every: int = 20
    decay_factor: float = 0.5
    lam: float | str = 0.5
    ori_on_occupied_only: bool = True
    seed: int = 0

    def adam(self):
        return AdamConfig(lr=self.lr, decay_every=self.decay_every, decay_factor=self.decay_factor)


@dataclass
class TrainHistory:
    train: list = field(default_factory=list)  # (stage, epoch, mean loss)
    val: list = field(default_factory=list)  # (stage, epoch, loss)

    def stage(self, name, which="val"):
        return [v for s, _, v in getattr(self, which) if s == name]


def _loss(out, tgt_ori, tgt_occ, w, lam, ori_mask):
    lo = loss_ori(out["ori"], tgt_ori, w, ori_mask)
    lc = loss_occ_logits(out["occ_logit"], tgt_occ, w, lam)
    return lo + lc


def _gather(items, idx):
    pts = np.concatenate([it.points[i] for it, i in zip(items, idx)])
    ori = np.concatenate([it.target_ori[i] for it, i in zip(items, idx)])
    occ = np.concatenate([it.target_occ[i] for it, i in zip(items, idx)])
    w = np.concatenate([it.weight[i] for it, i in zip(items, idx)])
    batch = np.concatenate([np.full(len(i), b) for b, i in enumerate(idx)])
    return pts, ori, occ, w, batch


def _check_finite(loss, stage, epoch):
    v = float(loss.data)
    if not np.isfinite(v):
        raise DivergenceError(f"{stage} loss became {v} at epoch {epoch}")
    return v


def _param_subset(net, prefix):
    return [(k, p) for k, p in net.named_parameters() if k.startswith(prefix)]


def validation_loss(net, items, n=512, use_fine=False, lam=0.5, ori_on_occupied_only=True):
    """Loss on the first ``n`` pool points of each item (fixed, so comparable across epochs)."""
    total = 0.0
    for it in items:
        k = min(n, len(it.points))
        out = net.forward_points(it.coarse[None], it.points[:k], lum=it.lum[None] if use_fine else None)
        mask = it.target_occ[:k] > 0.5 if ori_on_occupied_only else None
        total += float(_loss(out, it.target_ori[:k], it.target_occ[:k], it.weight[:k], lam, mask).data)
    return total / len(items)


def train_irhairnet(items, cfg: IRHairTrainConfig | None = None, net: IRHairNet | None = None, val_items=None,
                    net_cfg: IRHairConfig | None = None, stages=("coarse", "fine")):
    """Two-stage training. Returns (net, history, checkpoint).

    Stage "coarse" trains the coarse module alone. Stage "fine" freezes it:
    its latent volumes and MLP activations at the pool points are computed
    once, so only the fine module sits in the graph.
    """
    cfg = cfg or IRHairTrainConfig()
    net = net or IRHairNet(net_cfg, seed=cfg.seed)
    val_items = items[:4] if val_items is None else val_items
    rng = np.random.default_rng(cfg.seed)
    hist = TrainHistory()
    opt = None
    nb = max(1, cfg.batch_models)

    if "coarse" in stages:
        opt = Adam(_param_subset(net, "coarse."), cfg.adam())
        hist.val.append(("coarse", -1, validation_loss(net, val_items, lam=cfg.lam)))
        for epoch in range(cfg.epochs_coarse):
            opt.epoch = epoch
            order = rng.permutation(len(items))
            losses = []
            for g in range(0, len(order), nb):
                group = [items[i] for i in order[g:g + nb]]
                idx = [rng.choice(len(it.points), cfg.samples_per_model, replace=False) for it in group]
                pts, t_ori, t_occ, w, batch = _gather(group, idx)
                opt.zero_grad()
                out = net.forward_points(np.stack([it.coarse for it in group]), pts, batch)
                mask = t_occ > 0.5 if cfg.ori_on_occupied_only else None
                loss = _loss(out, t_ori, t_occ, w, cfg.lam, mask)
                losses.append(_check_finite(loss, "coarse", epoch))
                loss.backward()
                opt.step()
            hist.train.append(("coarse", epoch, float(np.mean(losses))))
            hist.val.append(("coarse", epoch, validation_loss(net, val_items, lam=cfg.lam)))
            log.info("coarse epoch %d loss %.5f val %.5f", epoch, hist.train[-1][2], hist.val[-1][2])

    if "fine" in stages and cfg.epochs_fine > 0:
        cache = [_coarse_cache(net, it) for it in items]
        opt = Adam(_param_subset(net, "fine."), cfg.adam())
        hist.val.append(("fine", -1, validation_loss(net, val_items, use_fine=True, lam=cfg.lam)))
        for epoch in range(cfg.epochs_fine):
            opt.epoch = epoch
            order = rng.permutation(len(items))
            losses = []
            for g in range(0, len(order), nb):
                sel = order[g:g + nb]
                group = [items[i] for i in sel]
                idx = [rng.choice(len(it.points), cfg.samples_per_model, replace=False) for it in group]
                pts, t_ori, t_occ, w, batch = _gather(group, idx)
                opt.zero_grad()
                out = {k: Tensor(np.concatenate([cache[i][k][j] for i, j in zip(sel, idx)]))
                       for k in ("ori", "occ_logit", "omega_ori", "omega_occ")}
                local = net.fine.features(np.stack([it.lum for it in group]))
                _, z, pix = net.query_coords(pts)
                loc = ops.grid_sample2d(local, pix, batch)
                d_ori, d_occ = net.fine.fuse(out["omega_ori"], out["omega_occ"], loc, z)
                fused = {"ori": out["ori"] + d_ori, "occ_logit": out["occ_logit"] + d_occ}
                mask = t_occ > 0.5 if cfg.ori_on_occupied_only else None
                loss = _loss(fused, t_ori, t_occ, w, cfg.lam, mask)
                losses.append(_check_finite(loss, "fine", epoch))
                loss.backward()
                opt.step()
            hist.train.append(("fine", epoch, float(np.mean(losses))))
            hist.val.append(("fine", epoch, validation_loss(net, val_items, use_fine=True, lam=cfg.lam)))
            log.info("fine epoch %d loss %.5f val %.5f", epoch, hist.train[-1][2], hist.val[-1][2])

    ck = make_checkpoint(net, net.digest(), opt, seed=cfg.seed, meta={"net": net.cfg.to_dict(), "train": asdict(cfg)})
    return net, hist, ck


def _coarse_cache(net, item):
    F = net.coarse.features(item.coarse[None])
    F = Tensor(F.data)
    vox, z, _ = net.query_coords(item.points)
    out = net.coarse.decode(F, vox, z)
    return {k: v.data.copy() for k, v in out.items()}


def load_irhairnet(ck, cfg: IRHairConfig | None = None, spec: GridSpec | None = None) -> IRHairNet:
    if cfg is None:
        cfg = IRHairConfig(**ck.meta["net"]) if "net" in ck.meta else IRHairConfig()
    net = IRHairNet(cfg, seed=ck.seed, spec=spec)
    ck.check_digest(net.digest())
    net.load_state_dict(ck.params)
    return net


# --- inference / export -------------------------------------------------------------------------

def supersampled_spec(spec: GridSpec, k: int) -> GridSpec:
    """Grid ``k`` times finer whose samples include the original voxel centers.

    Fine sample ``k*j + m`` sits at the center of coarse voxel ``j`` plus
    ``m * voxel_size / k``, so taking every k-th fine voxel returns exactly the
    coarse sample set.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    vs = spec.voxel_size
    shift = 0.5 * vs - 0.5 * vs / k
    return GridSpec(tuple(d * k for d in spec.dims), tuple(o + shift for o in spec.origin), vs / k)


def predict_grid(net: IRHairNet, coarse_in, lum=None, k=1, chunk=8192):
    """Raw (ori (kD, kH, kW, 3), occ (kD, kH, kW)) predictions on the k-times supersampled grid.

    Each offset sub-lattice is evaluated as its own pass over the coarse
    voxel centers with identical chunking, so the m = 0 pass reproduces the
    1x export bit for bit.
    """
    spec = net.spec
    D, H, W = spec.dims
    F = net.coarse.features(np.asarray(coarse_in)[None])
    F = Tensor(F.data)
    local = None if lum is None else Tensor(net.fine.features(np.asarray(lum)[None]).data)
    base = spec.centers().reshape(-1, 3)
    ori = np.zeros((D * k, H * k, W * k, 3), dtype=np.float32)
    occ = np.zeros((D * k, H * k, W * k), dtype=np.float32)
    step = spec.voxel_size / k
    for mz in range(k):
        for my in range(k):
            for mx in range(k):
                pts = base + step * np.array([mx, my, mz], dtype=np.float64)
                o_parts, c_parts = [], []
                for s in range(0, len(pts), chunk):
                    out = net.forward_points(None, pts[s:s + chunk], F=F, local=local) if local is not None \
                        else net.forward_points(None, pts[s:s + chunk], F=F)
                    o_parts.append(out["ori"].data)
                    c_parts.append(ops.sigmoid(out["occ_logit"]).data[:, 0])
                ori[mz::k, my::k, mx::k] = np.concatenate(o_parts).reshape(D, H, W, 3)
                occ[mz::k, my::k, mx::k] = np.concatenate(c_parts).reshape(D, H, W)
    return ori, occ


def export_fields(net: IRHairNet, coarse_in, lum=None, k=1, threshold=0.5):
    """Inferred fields at k-times resolution: unit orientations where occupancy >= threshold, zero elsewhere."""
    ori, occ = predict_grid(net, coarse_in, lum, k)
    spec = supersampled_spec(net.spec, k)
    n = np.linalg.norm(ori, axis=-1, keepdims=True)
    keep = (occ >= threshold) & (n[..., 0] > 1e-12)
    unit = np.where(keep[..., None], ori / np.where(n > 1e-12, n, 1.0), 0.0)
    return OrientationField(spec, unit), OccupancyField(spec, occ)
