import numpy as np
import pytest

from implicithair.analytic import HelixField, sample_field
from implicithair.errors import ConfigError, DigestMismatchError, DimensionError, EscapedError
from implicithair.fields import GridSpec, OccupancyField, OrientationField
from implicithair.growingnet import (GrowingNet, GrowthConfig, GrowthNetConfig, GrowthTrainConfig, LatentGrid,
                                     PatchLattice, encode_patches, grow, grow_direction, grow_sequential,
                                     growth_loss, growth_samples, join_halves, load_growingnet, local_coords,
                                     overlap_weights, patch_windows, sample_seeds, step, train_growingnet)
from implicithair.nn import Tensor, ops
from implicithair.strands import Strand

SMALL = dict(d=4, latent=8, enc_channels=(6, 8), hidden=(16, 12))


def const_field(spec, v=(0.0, 1.0, 0.0)):
    data = np.broadcast_to(np.asarray(v, np.float32), spec.dims + (3,)).copy()
    return OrientationField(spec, data), OccupancyField(spec, np.ones(spec.dims, np.float32))


def small_net(seed=0, **kw):
    return GrowingNet(GrowthNetConfig(**dict(SMALL, **kw)), seed=seed)


# --- lattice ------------------------------------------------------------------------------------

def test_lattice_layout():
    spec = GridSpec((12, 16, 20))
    lat = PatchLattice(spec, 8)
    np.testing.assert_array_equal(lat.counts_xyz, [6, 5, 4])
    assert lat.shape == (4, 5, 6) and lat.n_patches == 120
    k = np.array([[3, 1, 2], [0, 0, 0], [5, 4, 3]])
    np.testing.assert_array_equal(lat.lattice_coords(lat.flat_index(k)), k)
    np.testing.assert_allclose(lat.center(k[0]), [12.0, 4.0, 8.0])
    # every point of the box lies inside the span of some lattice cell
    assert np.all(lat.centers().max(axis=0) >= spec.box_max)
    with pytest.raises(ConfigError):
        PatchLattice(spec, 5)


def _hat_oracle(x, lat):
    """Weights over all patches from the hat-product definition, then renormalised."""
    q = (x - lat.spec.box_min) / lat.spacing
    c = lat.lattice_coords(np.arange(lat.n_patches))
    w = np.prod(np.maximum(0.0, 1.0 - np.abs(q[None] - c)), axis=1)
    return w / w.sum()


def test_overlap_weights_match_hat_products(rng):
    spec = GridSpec((10, 12, 14), origin=(1.0, -2.0, 0.5), voxel_size=0.5)
    lat = PatchLattice(spec, 4)
    x = spec.box_min + rng.uniform(size=(50, 3)) * (spec.box_max - spec.box_min)
    x[0] = spec.box_max  # far corner
    x[1] = lat.center([2, 1, 3])  # exactly on a center
    idx, w = overlap_weights(x, lat)
    np.testing.assert_allclose(w.sum(axis=1), 1.0)
    for i in range(len(x)):
        dense = np.zeros(lat.n_patches)
        np.add.at(dense, idx[i], w[i])
        np.testing.assert_allclose(dense, _hat_oracle(x[i], lat), atol=1e-12)
    assert w[1].max() == pytest.approx(1.0)


def test_local_coords_range():
    u = local_coords([[12.0, 4.0, 8.0], [16.0, 0.0, 8.0]], [12.0, 4.0, 8.0], 8)
    np.testing.assert_allclose(u, [[0, 0, 0], [1, -1, 0]])
    with pytest.raises(ValueError):
        local_coords([[17.0, 4.0, 8.0]], [12.0, 4.0, 8.0], 8)


def test_patch_windows_are_centered_crops(rng):
    spec = GridSpec((8, 12, 16))
    f = OrientationField(spec, rng.normal(size=spec.dims + (3,)).astype(np.float32))
    lat = PatchLattice(spec, 8)
    win = patch_windows(f, lat)
    assert win.shape == lat.shape + (3, 8, 8, 8)
    for kxyz in [(0, 0, 0), (2, 1, 1), (4, 3, 2)]:
        kx, ky, kz = kxyz
        ref = np.zeros((3, 8, 8, 8), np.float32)
        c = (np.asarray(kxyz) * 4).astype(int)  # center, in voxel corners
        for dz in range(8):
            for dy in range(8):
                for dx in range(8):
                    x, y, z = c[0] - 4 + dx, c[1] - 4 + dy, c[2] - 4 + dz
                    if 0 <= x < 16 and 0 <= y < 12 and 0 <= z < 8:
                        ref[:, dz, dy, dx] = f.data[z, y, x]
        np.testing.assert_array_equal(win[kz, ky, kx], ref)


# --- encoder ------------------------------------------------------------------------------------

@pytest.mark.parametrize("d", [4, 8, 16, 32])
def test_encoder_reduces_patch_to_latent(d):
    cfg = GrowthNetConfig(d=d)
    plan = cfg.encoder_plan()
    assert sum(s == 2 for _, _, s in plan) == int(np.log2(d))
    assert plan[-1][1] == 128
    net = GrowingNet(cfg, seed=0)
    out = net.encoder(np.zeros((2, 3, d, d, d), np.float32))
    assert out.shape == (2, 128)


def test_default_decoder_widths():
    cfg = GrowthNetConfig()
    assert cfg.decoder_widths == (131, 128, 64, 32, 3)
    assert [c for _, c, _ in cfg.encoder_plan()] == [16, 32, 64, 128]
    net = GrowingNet(cfg)
    assert [layer.w.shape for layer in net.G.layers] == [(131, 128), (128, 64), (64, 32), (32, 3)]


def test_config_errors():
    with pytest.raises(ConfigError):
        GrowthNetConfig(d=6)
    with pytest.raises(ConfigError):
        GrowthNetConfig(latent=64)
    with pytest.raises(ConfigError):
        GrowthConfig(threshold=1.5)
    net = small_net()
    with pytest.raises(DimensionError):
        net.encoder(np.zeros((1, 3, 8, 8, 8), np.float32))
    spec = GridSpec((8, 8, 8))
    with pytest.raises(DimensionError):
        encode_patches(const_field(spec)[0], PatchLattice(spec, 8), net)


def test_encode_subset_matches_full(rng):
    spec = GridSpec((8, 8, 12))
    f = OrientationField(spec, rng.normal(size=spec.dims + (3,)).astype(np.float32))
    net = small_net()
    lat = PatchLattice(spec, 4)
    full = encode_patches(f, lat, net, chunk=7)
    part = encode_patches(f, lat, net, indices=[3, 40, 11])
    np.testing.assert_allclose(part, full.z[[3, 40, 11]], atol=1e-6)
    assert full.grid.shape == lat.shape + (8,)


# --- decoding -----------------------------------------------------------------------------------

def _tape_step(x, lat_grid, net, direction, overlap):
    """Blended step through the generic autodiff MLP, one point at a time."""
    lat = lat_grid.lattice
    mlp = net.decoder(direction)
    out = []
    for p in x:
        if overlap:
            idx, w = overlap_weights(p, lat)
            idx, w = idx[0], w[0]
        else:
            idx, w = lat.nearest(p[None]), np.ones(1)
        acc = np.zeros(3)
        for j, wj in zip(idx, w):
            c = lat.center(lat.lattice_coords(j))
            u = (p - c) / lat.spacing
            g = mlp(Tensor(np.concatenate([lat_grid.z[j], u])[None].astype(np.float32))).data[0]
            acc += wj * (g if net.cfg.residual else c + 0.5 * net.cfg.d * lat.spec.voxel_size * g)
        out.append(p + net.cfg.step * net.cfg.offset_bound * acc if net.cfg.residual else acc)
    return np.array(out)


@pytest.mark.parametrize("overlap", [True, False])
@pytest.mark.parametrize("residual", [True, False])
@pytest.mark.parametrize("direction", ["fwd", "inv"])
def test_fast_step_matches_tape_decoder(rng, overlap, residual, direction):
    spec = GridSpec((8, 10, 12))
    f = OrientationField(spec, rng.normal(size=spec.dims + (3,)).astype(np.float32))
    net = small_net(seed=3, residual=residual, offset_bound=1.7)
    lat = encode_patches(f, PatchLattice(spec, 4), net)
    x = spec.box_min + rng.uniform(size=(70, 3)) * (spec.box_max - spec.box_min)
    np.testing.assert_allclose(step(x, lat, net, direction, overlap), _tape_step(x, lat, net, direction, overlap),
                               atol=2e-5)


def test_step_is_row_independent(rng):
    spec = GridSpec((8, 8, 8))
    f = OrientationField(spec, rng.normal(size=spec.dims + (3,)).astype(np.float32))
    net = small_net()
    lat = encode_patches(f, PatchLattice(spec, 4), net)
    x = rng.uniform(0, 8, size=(300, 3))
    full = step(x, lat, net)
    for sl in (slice(0, 1), slice(17, 90), slice(250, 300)):
        np.testing.assert_array_equal(step(x[sl], lat, net), full[sl])
    perm = rng.permutation(300)
    np.testing.assert_array_equal(step(x[perm], lat, net), full[perm])


def test_overlap_step_is_continuous_across_patch_borders(rng):
    spec = GridSpec((8, 8, 12))
    f = OrientationField(spec, rng.normal(size=spec.dims + (3,)).astype(np.float32))
    net = small_net(seed=1)
    lat = encode_patches(f, PatchLattice(spec, 4), net)
    # nearest-patch switches at half-lattice planes, overlap cells change at lattice planes
    base = np.array([[3.0, 3.3, 5.1], [4.0, 2.7, 6.2], [5.0, 5.5, 1.9], [6.0, 4.4, 3.3]])
    eps = 1e-6
    lo, hi = base.copy(), base.copy()
    lo[:, 0] -= eps
    hi[:, 0] += eps
    jump_overlap = np.abs(step(hi, lat, net, overlap=True) - step(lo, lat, net, overlap=True)).max()
    jump_nearest = np.abs(step(hi, lat, net, overlap=False) - step(lo, lat, net, overlap=False)).max()
    assert jump_overlap < 1e-4
    assert jump_nearest > 100 * jump_overlap


def test_step_checks_volume():
    spec = GridSpec((8, 8, 8))
    net = small_net()
    lat = encode_patches(const_field(spec)[0], PatchLattice(spec, 4), net)
    with pytest.raises(EscapedError):
        step([[9.0, 1.0, 1.0]], lat, net)
    step([[9.0, 1.0, 1.0]], lat, net, check=False)
    with pytest.raises(ValueError):
        step([[1.0, 1.0, 1.0]], lat, net, direction="up")


def test_projection_cache_tracks_decoder():
    spec = GridSpec((8, 8, 8))
    net = small_net()
    lat = encode_patches(const_field(spec)[0], PatchLattice(spec, 4), net)
    a = lat.projection(net.G)
    assert lat.projection(net.G) is a
    np.testing.assert_allclose(a, lat.z @ net.G.layers[0].w.data[:8] + net.G.layers[0].b.data, atol=1e-6)
    assert lat.projection(net.G_inv) is not a


# --- growth -------------------------------------------------------------------------------------

def _shift(v):
    return lambda x: x + np.asarray(v)


def test_grow_direction_termination():
    spec = GridSpec((8, 8, 16))
    occ = np.ones(spec.dims, np.float32)
    occ[:, :, 10:] = 0  # x >= 10 is empty
    occ = OccupancyField(spec, occ)
    cfg = GrowthConfig(max_steps=100, grace=2)
    # x: 1.2, 2.2, ..., 9.2 inside; 10.2, 11.2 are misses within grace; 12.2 is the third miss
    (tr,) = grow_direction([[1.2, 4.0, 4.0]], _shift([1.0, 0, 0]), occ, cfg)
    np.testing.assert_allclose(tr[:, 0], np.arange(1.2, 9.3, 1.0))
    # leaving the volume ends at the last inside point
    (tr,) = grow_direction([[4.0, 4.0, 4.0]], _shift([0, 1.5, 0]), occ, cfg)
    assert tr[-1, 1] == pytest.approx(7.0) and len(tr) == 3
    # stalling and max_steps
    (tr,) = grow_direction([[4.0, 4.0, 4.0]], lambda x: x, occ, cfg)
    assert len(tr) == 1
    (tr,) = grow_direction([[1.0, 1.0, 1.0]], _shift([0, 0, 0.01]), occ, GrowthConfig(max_steps=7))
    assert len(tr) == 8
    # zero grace stops at the first miss
    (tr,) = grow_direction([[9.5, 4.0, 4.0]], _shift([1.0, 0, 0]), occ, GrowthConfig(grace=0))
    assert len(tr) == 1


def test_fixed_steps_ignore_termination():
    spec = GridSpec((4, 4, 4))
    occ = OccupancyField(spec, np.zeros(spec.dims, np.float32))
    (tr,) = grow_direction([[1.0, 1.0, 1.0]], _shift([1.0, 0, 0]), occ, GrowthConfig(max_steps=9, fixed_steps=True))
    assert len(tr) == 10 and spec.contains(tr).all()


def test_join_halves():
    f = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], float)
    b = np.array([[0, 0, 0], [-1, 0, 0]], float)
    np.testing.assert_array_equal(join_halves(f, b)[:, 0], [-1, 0, 1, 2])


def test_lockstep_equals_sequential(rng):
    f, occ = sample_field(HelixField((0, 0.2, 0), (8, 8, 6), (0, 0.4, 0)), GridSpec((12, 16, 16)))
    net = small_net(seed=2)
    lat = encode_patches(f, PatchLattice(f.spec, 4), net)
    seeds = sample_seeds(occ, 25, seed=4)
    cfg = GrowthConfig(max_steps=40, min_length=2)
    a = grow(seeds, lat, net, occ, cfg)
    b = grow_sequential(seeds, lat, net, occ, cfg)
    assert len(a.strands) == len(b.strands) > 0
    for s, t in zip(a.strands, b.strands):
        np.testing.assert_array_equal(s.points, t.points)


def test_grow_with_empty_occupancy(caplog):
    spec = GridSpec((8, 8, 8))
    f, _ = const_field(spec)
    occ = OccupancyField(spec, np.zeros(spec.dims, np.float32))
    net = small_net()
    lat = encode_patches(f, PatchLattice(spec, 4), net)
    m = grow([[2.0, 2.0, 2.0]], lat, net, occ)
    assert m.strands == [] and "no voxel" in caplog.text
    assert sample_seeds(occ, 5).shape == (0, 3)


def test_sample_seeds_in_occupied_voxels():
    spec = GridSpec((8, 8, 8))
    occ = np.zeros(spec.dims, np.float32)
    occ[2, 3, 4] = occ[5, 6, 1] = 1
    s = sample_seeds(OccupancyField(spec, occ), 200, seed=1)
    vox = {tuple(v) for v in np.floor(s).astype(int)}
    assert vox == {(4, 3, 2), (1, 6, 5)}
    np.testing.assert_array_equal(s, sample_seeds(OccupancyField(spec, occ), 200, seed=1))


# --- training -----------------------------------------------------------------------------------

def test_growth_samples_skip_short_strands():
    line = lambda n: np.outer(np.arange(n), [1.0, 0, 0])  # noqa: E731
    s = growth_samples([[Strand(line(5)), Strand(line(2))], [line(3)]])
    assert len(s.x) == 4 and s.skipped == 1
    np.testing.assert_array_equal(s.field_id, [0, 0, 0, 1])


def test_zero_decoder_loss_closed_form(rng):
    spec = GridSpec((8, 8, 8))
    f, _ = const_field(spec)
    net = small_net()
    for mlp in (net.G, net.G_inv):
        mlp.layers[-1].w.data[:] = 0
        mlp.layers[-1].b.data[:] = 0
    pts = np.cumsum(rng.normal(scale=0.3, size=(12, 3)), axis=0) + 4.0
    s = growth_samples([[pts]])
    rows = np.arange(len(s.x))
    got = float(growth_loss(net, [f], PatchLattice(spec, 4), s, rows).data)
    expect = (np.abs(s.nxt - s.x).sum() + np.abs(s.prev - s.x).sum()) / len(rows)
    assert got == pytest.approx(expect, rel=1e-5)


def test_growth_loss_gradients_reach_encoder(rng):
    spec = GridSpec((8, 8, 8))
    f = OrientationField(spec, rng.normal(size=spec.dims + (3,)).astype(np.float32))
    net = small_net()
    pts = np.linspace([1.0, 1.0, 1.0], [6.0, 6.5, 5.0], 12)
    s = growth_samples([[pts]])
    loss = growth_loss(net, [f], PatchLattice(spec, 4), s, np.arange(len(s.x)))
    loss.backward()
    for name, p in net.named_parameters():
        assert p.grad is not None and np.abs(p.grad).sum() > 0, name


def _straight_strands(spec, rng, n=60, s=0.5):
    out = []
    for _ in range(n):
        x0 = spec.box_min + rng.uniform(0.5, 1.5, size=3) + np.array([rng.uniform(0, 6), 0, rng.uniform(0, 6)])
        out.append(Strand(x0 + np.outer(np.arange(12) * s, [0, 1, 0])))
    return out


def test_constant_field_learns_half_voxel_step(rng):
    spec = GridSpec((8, 8, 8))
    f, occ = const_field(spec)
    cfg = GrowthTrainConfig(epochs=25, batch=256, batches_per_epoch=10, lr=3e-3, decay_every=10)
    net, hist, _ = train_growingnet([f], [_straight_strands(spec, rng)], cfg, net_cfg=GrowthNetConfig(**SMALL))
    assert hist.val[-1][1] < hist.val[0][1]
    lat = encode_patches(f, PatchLattice(spec, 4), net)
    x = spec.box_min + rng.uniform(1, 7, size=(200, 3))
    fwd = step(x, lat, net, "fwd") - x
    inv = step(x, lat, net, "inv") - x
    assert np.abs(fwd - [0, 0.5, 0]).max() < 0.05
    assert np.abs(inv - [0, -0.5, 0]).max() < 0.05


def test_training_determinism_and_checkpoint(rng):
    spec = GridSpec((8, 8, 8))
    f, _ = const_field(spec)
    strands = [_straight_strands(spec, rng, n=10)]
    cfg = GrowthTrainConfig(epochs=2, batch=32, batches_per_epoch=2)
    net_a, _, ck_a = train_growingnet([f], strands, cfg, net_cfg=GrowthNetConfig(**SMALL))
    _, _, ck_b = train_growingnet([f], strands, cfg, net_cfg=GrowthNetConfig(**SMALL))
    assert ck_a.to_bytes() == ck_b.to_bytes()
    back = load_growingnet(type(ck_a).from_bytes(ck_a.to_bytes()))
    x = np.array([[2.0, 3.0, 4.0]])
    la = encode_patches(f, PatchLattice(spec, 4), net_a)
    lb = encode_patches(f, PatchLattice(spec, 4), back)
    np.testing.assert_array_equal(step(x, la, net_a), step(x, lb, back))
    with pytest.raises(DigestMismatchError):
        load_growingnet(ck_a, GrowthNetConfig(**dict(SMALL, hidden=(16, 8))))


def test_training_rejects_mixed_grids_and_empty_strands():
    a, _ = const_field(GridSpec((8, 8, 8)))
    b, _ = const_field(GridSpec((8, 8, 12)))
    with pytest.raises(DimensionError):
        train_growingnet([a, b], [[], []], net_cfg=GrowthNetConfig(**SMALL))
    with pytest.raises(ValueError):
        train_growingnet([a], [[np.zeros((2, 3))]], net_cfg=GrowthNetConfig(**SMALL))


def test_latent_grid_bytes_round_trip(rng):
    from implicithair.formats import latents_from_bytes

    spec = GridSpec((8, 8, 8))
    net = small_net()
    lat = encode_patches(const_field(spec)[0], PatchLattice(spec, 4), net)
    grid, d, frame = latents_from_bytes(lat.to_bytes())
    np.testing.assert_array_equal(grid, lat.grid)
    assert d == 4 and frame == (0.0, 0.0, 0.0, 1.0)
