"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The training and timing criteria (5 to 8) take tens of minutes on one core.
"""

import json
import math
import time

import numpy as np
import pytest

from implicithair import formats
from implicithair.analytic import random_helix, sample_field
from implicithair.bench import BenchScenario, run_benchmark
from implicithair.corpus import generate_models
from implicithair.fields import GridSpec, OccupancyField, OrientationField
from implicithair.growingnet import (GrowingNet, GrowthConfig, GrowthNetConfig, GrowthTrainConfig,
                                     LatentGrid, PatchLattice, encode_patches, grow_direction, join_halves,
                                     local_coords, overlap_weights, sample_seeds, step, train_growingnet)
from implicithair.imaging import ImageMap
from implicithair.irhairnet import (IRHairConfig, IRHairNet, IRHairTrainConfig, build_item, loss_occ, loss_ori,
                                    predict_grid, train_irhairnet, visibility_weight)
from implicithair.metrics import (constant_field_like, l2_orientation, mean_direction_baseline, precision_occ,
                                  strand_deviation)
from implicithair.nn import MLP, Checkpoint, Conv, Dense, Tensor, grad_check, input_grad_check, make_checkpoint, ops
from implicithair.strands import HairModel, Strand, canonical_bbox
from implicithair.tracer import PointSampler, trace_one

pytestmark = pytest.mark.slow


# --- 1: gradient suite --------------------------------------------------------------------------

def _layer_cases(dtype, rng):
    cases = []
    for act in ("linear", "relu", "sigmoid", "tanh"):
        cases.append((f"dense-{act}", Dense(5, 4, act, rng, dtype), rng.normal(size=(6, 5))))
    for nd, stride, size in ((2, 1, (6, 5)), (2, 2, (7, 6)), (3, 1, (4, 5, 3)), (3, 2, (5, 4, 5))):
        cases.append((f"conv{nd}d-s{stride}", Conv(nd, 2, 3, 3, stride, "tanh", rng, dtype),
                      rng.normal(size=(2, 2) + size)))
    cases.append(("mlp", MLP((5, 8, 6, 3), rng=rng, dtype=dtype), rng.normal(size=(6, 5))))
    return cases


def _gradient_suite(dtype, tol):
    rng = np.random.default_rng(0)
    worst = {}
    for name, layer, x in _layer_cases(dtype, rng):
        for _, p in layer.named_parameters():
            if p.data.ndim == 1:
                p.data = rng.normal(scale=0.3, size=p.data.shape).astype(dtype)
        x = x.astype(dtype)
        w = rng.normal(size=layer(Tensor(x)).shape).astype(dtype)
        rep = grad_check(lambda: ops.sum_(ops.mul(layer(Tensor(x)), w)), layer.named_parameters(), tol=tol,
                         fraction=1.0)
        inp = input_grad_check(lambda z: ops.mul(layer(z), w), x.astype(np.float64), tol=tol, n=40) \
            if dtype == np.float64 else None
        worst[name] = max(rep.max_rel_err, inp.max_rel_err if inp else 0.0)
    # both losses with respect to the prediction
    n = 10
    t_ori = rng.normal(size=(n, 3))
    t_occ = (rng.uniform(size=n) > 0.5).astype(np.float64)
    wt = rng.uniform(1, 10, size=n)
    pred = rng.normal(size=(n, 3)) + 0.3
    worst["loss_ori"] = input_grad_check(lambda z: loss_ori(z, t_ori, wt), pred, tol=tol, n=30).max_rel_err
    occ = rng.uniform(0.05, 0.95, size=(n, 1))
    worst["loss_occ"] = input_grad_check(lambda z: loss_occ(z, t_occ, wt, 0.4), occ, tol=tol, n=10).max_rel_err
    return worst


def test_criterion_01_gradients(criterion):
    t0 = time.perf_counter()
    w64 = _gradient_suite(np.float64, 1e-6)
    w32 = _gradient_suite(np.float32, 1e-4)
    elapsed = time.perf_counter() - t0
    e64, e32 = max(w64.values()), max(w32.values())
    ok = e64 < 1e-6 and e32 < 1e-4 and elapsed < 120
    criterion(1, ok, f"f64 max rel err {e64:.2e} (<1e-6), f32 {e32:.2e} (<1e-4), {len(w64)} cases, "
                     f"{elapsed:.1f}s (<120s)")
    assert ok, (w64, w32)


# --- 2: visibility weights and losses -----------------------------------------------------------

def test_criterion_02_weights_and_losses(criterion):
    tau = 5.0
    d = np.array([10.0, 10.0, 10.0, 10.0, 3.0, 3.0, 7.5, 7.5, np.inf, 0.0])
    z = np.array([15.0, 14.999, 16.0, 2.0, 8.0, 7.0, 7.5, 12.5, 4.0, 5.0])
    hand_w = [1, 10, 1, 10, 1, 10, 10, 1, 1, 1]  # z - d >= 5 -> 1; inf depth -> 1
    w = visibility_weight(z, d, tau)
    pred_ori = np.array([[0.1, 0.9, 0.0], [0.0, 1.0, 0.0], [-0.5, 0.5, 0.2], [0.3, -0.3, 0.9], [1, 0, 0],
                         [0.2, 0.2, 0.2], [0, 0, 0], [0.5, 0.5, 0.5], [-1, 0, 0], [0.7, 0.1, -0.1]])
    tgt_ori = np.array([[0, 1, 0], [0, 1, 0], [0, 1, 0], [0, 0, 1], [0, 1, 0], [1, 0, 0], [0, 0, 0],
                        [0, 1, 0], [1, 0, 0], [0, 0, 0]], dtype=np.float64)
    o = np.array([0.9, 0.2, 0.5, 0.7, 0.1, 0.99, 0.3, 0.6, 0.45, 0.8])
    t = np.array([1, 0, 1, 1, 0, 1, 0, 0, 1, 0], dtype=np.float64)
    lam = 0.3
    hand_ori = sum(wi * sum(abs(a - b) for a, b in zip(p, q)) for wi, p, q in zip(hand_w, pred_ori, tgt_ori)) / 10
    hand_occ = -sum(wi * (lam * ti * math.log(oi) + (1 - lam) * (1 - ti) * math.log(1 - oi))
                    for wi, ti, oi in zip(hand_w, t, o)) / 10
    got_ori = float(loss_ori(Tensor(pred_ori), tgt_ori, w).data)
    got_occ = float(loss_occ(Tensor(o[:, None]), t, w, lam).data)
    errs = [np.abs(w - hand_w).max(), abs(got_ori - hand_ori), abs(got_occ - hand_occ)]
    ok = max(errs) < 1e-6 and w[0] == 1.0
    criterion(2, ok, f"weights {w.tolist()} (boundary Z-D=tau -> {w[0]:g}), |dL_ori|={errs[1]:.1e}, "
                     f"|dL_occ|={errs[2]:.1e} (<1e-6)")
    assert ok


# --- 3: local coordinates and overlap weights ---------------------------------------------------

def test_criterion_03_local_coords_and_overlap(criterion):
    rng = np.random.default_rng(3)
    d = rng.choice([4, 8, 16, 32], size=1000)
    xi = rng.uniform(-50, 50, size=(1000, 3))
    x = xi + rng.uniform(-0.5, 0.5, size=(1000, 3)) * d[:, None]
    err_u = max(np.abs(local_coords(x[i], xi[i], d[i]) - (2.0 / d[i]) * (x[i] - xi[i])).max() for i in range(1000))
    spec = GridSpec((24, 32, 32))
    lat = PatchLattice(spec, 8)
    p = spec.box_min + rng.uniform(size=(100000, 3)) * (spec.box_max - spec.box_min)
    _, w = overlap_weights(p, lat)
    err_sum = np.abs(w.sum(axis=1) - 1).max()
    nonneg = bool((w >= 0).all())
    centers = lat.centers()
    _, wc = overlap_weights(centers, lat)
    one_hot = bool(np.all(np.isclose(wc.max(axis=1), 1.0, atol=1e-12)) and np.all((wc > 1e-12).sum(axis=1) == 1))
    ok = err_u < 1e-9 and err_sum < 1e-9 and nonneg and one_hot
    criterion(3, ok, f"local coords max err {err_u:.1e}, |sum w - 1| {err_sum:.1e} over 1e5 points, "
                     f"all w >= 0: {nonneg}, one-hot at {len(centers)} centers: {one_hot}")
    assert ok


# --- 4: boundary continuity ---------------------------------------------------------------------

def test_criterion_04_boundary_continuity(criterion):
    rng = np.random.default_rng(4)
    spec = GridSpec((16, 16, 16))
    net = GrowingNet(GrowthNetConfig(d=8), seed=0)
    lat = PatchLattice(spec, 8)
    za, zb = rng.normal(size=(2, net.cfg.latent)).astype(np.float32)
    centers = lat.centers()
    z = np.where((centers[:, 0] < 8.0)[:, None], za, zb)  # two latents, split at the plane x = 8
    grid = LatentGrid(lat, z)
    jumps = {True: 0.0, False: 0.0}
    disp = {True: 0.0, False: 0.0}
    for _ in range(100):
        a = np.array([rng.uniform(6.0, 7.5), rng.uniform(1, 15), rng.uniform(1, 15)])
        b = a + np.array([rng.uniform(1.0, 2.5), rng.uniform(-1, 1), rng.uniform(-1, 1)])
        # sample spacing ~1e-3 voxels: a continuous map's jumps shrink with it, a discontinuity does not
        seg = a + np.linspace(0, 1, 2000)[:, None] * (b - a)
        for overlap in (True, False):
            y = step(seg, grid, net, overlap=overlap)
            jumps[overlap] = max(jumps[overlap], float(np.linalg.norm(np.diff(y, axis=0), axis=1).max()))
            disp[overlap] = max(disp[overlap], float(np.linalg.norm(np.diff(y - seg, axis=0), axis=1).max()))
    ratio = jumps[False] / jumps[True]
    ok = ratio >= 10
    criterion(4, ok, f"max consecutive jump of step() overlap {jumps[True]:.2e} vs nearest {jumps[False]:.2e}: "
                     f"{ratio:.0f}x (>=10x); displacement only {disp[True]:.1e} vs {disp[False]:.1e}")
    assert ok


# --- 5: oracle equivalence ----------------------------------------------------------------------

def _traced_strands(field, seeds, gcfg):
    """Tracer strands through each seed, both halves joined; seeds failing either half are dropped."""
    sampler = PointSampler(*field)
    rows = []
    for s in seeds:
        a, b = trace_one(sampler, s, 0.5, gcfg), trace_one(sampler, s, 0.5, gcfg, sign=-1.0)
        if a is not None and b is not None:
            pts = join_halves(np.asarray(a), np.asarray(b))
            if len(pts) >= 3:
                rows.append(pts)
    return rows


def test_criterion_05_oracle_equivalence(criterion):
    spec = GridSpec((24, 32, 32))
    rng = np.random.default_rng(5)
    fields = [sample_field(random_helix(rng, spec), spec) for _ in range(60)]
    train, held_out = fields[:50], fields[50:]
    gcfg = GrowthConfig(max_steps=100)
    strands = [_traced_strands(f, sample_seeds(f[1], 60, seed=i), gcfg) for i, f in enumerate(train)]
    tc = GrowthTrainConfig(epochs=20, batch=256, batches_per_epoch=20, lr=3e-3, decay_every=10)
    t0 = time.perf_counter()
    net, _, _ = train_growingnet([f[0] for f in train], strands, tc, net_cfg=GrowthNetConfig(d=8))
    train_s = time.perf_counter() - t0
    devs = []
    for j, f in enumerate(held_out):
        lat = encode_patches(f[0], PatchLattice(spec, 8), net)
        seeds = sample_seeds(f[1], 50, seed=1000 + j)
        sampler = PointSampler(*f)
        ref = [np.asarray(trace_one(sampler, s, 0.5, gcfg)) for s in seeds]
        got = grow_direction(seeds, lambda x: step(x, lat, net, "fwd", True, check=False), f[1], gcfg)
        devs.append(strand_deviation(got, ref, n_points=101)["mean"])
    mean_dev = float(np.mean(devs))
    ok = mean_dev < 1.5 and train_s < 3600
    criterion(5, ok, f"mean point deviation {mean_dev:.3f} voxels (<1.5) over 10 held-out fields x 50 seeds, "
                     f"worst field {max(devs):.3f}; training {train_s:.0f}s (<3600s)")
    assert ok


# --- 6: timing orderings ------------------------------------------------------------------------

def test_criterion_06_timing_orderings(criterion):
    # 10k strands x 200 steps; medians over repeated GrowingNet runs, one tracer run (it is the slow one)
    res = run_benchmark(BenchScenario(repetitions=3, tracer_repetitions=1, patch_sizes=(4, 8, 16, 32)))
    t = {k: res.median(k) for k in res.times}
    speedup = t["tracer"] / t["growingnet_overlap"]
    no_overlap = t["growingnet_overlap"] / t["growingnet_no_overlap"]
    spread = max(t[f"growingnet_d{d}"] for d in (8, 16, 32)) / min(t[f"growingnet_d{d}"] for d in (8, 16, 32))
    checks = {"parallel >= 2x tracer": speedup >= 2, "no-overlap >= 2x overlap": no_overlap >= 2,
              "d4 slower than d8": t["growingnet_d4"] > t["growingnet_d8"], "d8/16/32 within 2x": spread <= 2}
    ok = all(checks.values())
    times = " ".join(f"{k.replace('growingnet_', '')}={v:.1f}s" for k, v in t.items())
    criterion(6, ok, f"tracer/overlap {speedup:.2f}x, overlap/no-overlap {no_overlap:.2f}x, "
                     f"d4 {t['growingnet_d4']:.1f}s vs d8 {t['growingnet_d8']:.1f}s, d8-32 spread {spread:.2f}x; "
                     f"{times}")
    assert ok, checks


# --- 7 and 8: IRHairNet desk-scale learning and coarse-to-fine ----------------------------------

IRHAIR_TRAIN = IRHairTrainConfig(epochs_coarse=100, epochs_fine=50, batch_models=1, samples_per_model=2048,
                                 lr=1e-3, lam=0.35, decay_every=40)


@pytest.fixture(scope="module")
def irhair_run():
    cfg = IRHairConfig()
    models = generate_models(48, seed=7)
    items = [build_item(m, cfg, seed=i, n_points=8192) for i, m in enumerate(models)]
    train, test = items[:40], items[40:]
    t0 = time.perf_counter()
    net, _, _ = train_irhairnet(train, IRHAIR_TRAIN, val_items=train[:4])
    train_s = time.perf_counter() - t0
    mean_dir = mean_direction_baseline([it.fields[0] for it in train])
    res = {"train_s": train_s}
    for name, use_fine in (("coarse", False), ("fine", True)):
        prec, l2 = [], []
        for it in test:
            o, c = predict_grid(net, it.coarse, it.lum if use_fine else None)
            prec.append(precision_occ(c, it.fields[1])[0])
            l2.append(l2_orientation(o, it.fields[0].data))
        res[name] = (float(np.mean(prec)), float(np.mean(l2)))
    res["baseline"] = float(np.mean([l2_orientation(constant_field_like(it.fields[0], mean_dir), it.fields[0].data)
                                     for it in test]))
    return res


def test_criterion_07_irhairnet_learning(criterion, irhair_run):
    prec, l2 = irhair_run["fine"]
    base = irhair_run["baseline"]
    ok = prec > 0.85 and l2 < 0.5 * base and irhair_run["train_s"] < 3 * 3600
    criterion(7, ok, f"held-out precision {prec:.3f} (>0.85), orientation L2 {l2:.4f} vs 0.5*baseline "
                     f"{0.5 * base:.4f} (ratio {l2 / base:.3f}); 40 train / 8 test models, "
                     f"training {irhair_run['train_s']:.0f}s (<10800s)")
    assert ok


def test_criterion_08_coarse_to_fine(criterion, irhair_run):
    lc, lf = irhair_run["coarse"][1], irhair_run["fine"][1]
    ok = lf < lc
    criterion(8, ok, f"held-out orientation L2 coarse-only {lc:.4f} vs coarse+fine {lf:.4f} "
                     f"(improvement {lc - lf:+.4f}, must be > 0)")
    assert ok


# --- 9: supersampling ---------------------------------------------------------------------------

def test_criterion_09_supersampling(criterion):
    cfg = IRHairConfig()
    net = IRHairNet(cfg, seed=9)
    for m in (net.fine.ori_mlp, net.fine.occ_mlp):  # make the fine branch contribute
        m.layers[-1].w.data = np.random.default_rng(1).normal(scale=0.05, size=m.layers[-1].w.shape).astype(
            np.float32)
    item = build_item(generate_models(1, seed=9)[0], cfg, n_points=16)
    ori1, occ1 = predict_grid(net, item.coarse, item.lum, k=1)
    ori2, occ2 = predict_grid(net, item.coarse, item.lum, k=2)
    same = np.array_equal(ori2[::2, ::2, ::2], ori1) and np.array_equal(occ2[::2, ::2, ::2], occ1)
    differs = not np.array_equal(ori2[1::2, 1::2, 1::2], ori1)
    ok = same and differs
    criterion(9, ok, f"2x export {ori2.shape[:3]} subsampled at voxel centers equals 1x {ori1.shape[:3]}: {same}; "
                     f"off-center samples carry new values: {differs}")
    assert ok


# --- 10: determinism and formats ----------------------------------------------------------------

def _run_pipeline(root, config):
    from implicithair.cli import main

    c = ["--config", str(config)]
    codes = [
        main(["gen-data", *c, "--out", str(root / "data")]),
        main(["train-irhairnet", *c, "--data", str(root / "data"), "--out", str(root / "ck")]),
        main(["train-growingnet", *c, "--data", str(root / "data"), "--out", str(root / "ck")]),
        main(["reconstruct", *c, "--maps", str(root / "data" / "model_0002"), "--ckpt", str(root / "ck"),
              "--out", str(root / "rec")]),
    ]
    assert codes == [0, 0, 0, 0]
    return {k: formats.directory_digest(root / k) for k in ("data", "ck", "rec")}


def _round_trips(rng, tmp_path):
    spec = GridSpec((5, 6, 7), origin=(0.5, -1.0, 2.0), voxel_size=0.75)
    model = HairModel([Strand(np.cumsum(rng.normal(size=(k, 3)), axis=0).astype(np.float32).astype(np.float64))
                       for k in (2, 9, 30)], canonical_bbox((7, 6, 5)), {})
    ori = OrientationField(spec, rng.normal(size=spec.dims + (3,)).astype(np.float32))
    occ = OccupancyField(spec, rng.uniform(size=spec.dims).astype(np.float32))
    net = GrowingNet(GrowthNetConfig(d=4, latent=8, enc_channels=(6, 8), hidden=(16,)), seed=0)
    lat = encode_patches(ori, PatchLattice(spec, 4), net)
    depth = rng.uniform(size=(6, 5)).astype(np.float32)
    depth[0, 0] = np.inf
    ck = make_checkpoint(net, net.digest(), seed=0)
    blobs = {
        "HSTR": (formats.strands_to_bytes(model), lambda b: formats.strands_to_bytes(formats.strands_from_bytes(b))),
        "HFLD ori": (formats.field_to_bytes(ori), lambda b: formats.field_to_bytes(formats.field_from_bytes(b))),
        "HFLD occ": (formats.field_to_bytes(occ), lambda b: formats.field_to_bytes(formats.field_from_bytes(b))),
        "HLAT": (lat.to_bytes(), lambda b: formats.latents_to_bytes(formats.latents_from_bytes(b)[0], 4, spec)),
        "PFM 1ch": (formats.image_to_pfm(ImageMap(depth, "DEPTH")),
                    lambda b: formats.image_to_pfm(formats.image_from_pfm(b, "DEPTH"))),
        "PFM 3ch": (formats.image_to_pfm(ImageMap(rng.uniform(size=(4, 3, 3)), "RGB")),
                    lambda b: formats.image_to_pfm(formats.image_from_pfm(b))),
        "HNNC": (ck.to_bytes(), lambda b: Checkpoint.from_bytes(b).to_bytes()),
    }
    return {k: fn(b) == b for k, (b, fn) in blobs.items()}


def test_criterion_10_determinism_and_formats(criterion, tmp_path):
    from test_config_cli import TINY

    config = tmp_path / "cfg.json"
    config.write_text(json.dumps(TINY))
    a = _run_pipeline(tmp_path / "a", config)
    b = _run_pipeline(tmp_path / "b", config)
    trips = _round_trips(np.random.default_rng(10), tmp_path)
    ok = a == b and all(trips.values())
    criterion(10, ok, f"two seeded end-to-end runs: identical digests for {sorted(a)}: {a == b} "
                      f"(rec {a['rec'][:12]}); byte-exact round trips {trips}")
    assert ok
