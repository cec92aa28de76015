"""``implicithair`` command line: data generation, training, reconstruction, evaluation, benchmarking.

Exit codes: 0 success, 1 other error, 2 bad arguments or config, 3 missing
file, 4 checkpoint digest mismatch, 5 dimension mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import formats
from .config import PipelineConfig, load_config
from .corpus import generate_models
from .errors import ConfigError, DigestMismatchError, DimensionError, HairError, TooShortError
from .fields import OccupancyField, fill_holes, voxelize
from .nn import Checkpoint

log = logging.getLogger("implicithair")

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_MISSING, EXIT_DIGEST, EXIT_DIMENSION = 0, 1, 2, 3, 4, 5

MAP_FILES = {"rgb": "RGB", "mask": "MASK", "lum": "LUMA", "ori2d": "ORI2D", "bust_depth": "DEPTH"}


def _start(cfg: PipelineConfig, out: Path, command: str):
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json(indent=2) + "\n")
    handler = logging.FileHandler(out / f"{command}.log", mode="w")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    logging.getLogger().addHandler(handler)
    log.info("%s: config digest=%s seed=%d", command, cfg.digest(), cfg.seed)
    return handler


def _model_dirs(data_dir: Path):
    if not (data_dir / "manifest.json").exists():
        raise FileNotFoundError(f"no manifest.json in {data_dir}")
    man = json.loads((data_dir / "manifest.json").read_text())
    return [data_dir / m["dir"] for m in man["models"]]


def _split(dirs, n_test):
    n_train = len(dirs) - n_test
    if n_train < 1:
        raise ConfigError(f"{len(dirs)} models leave nothing to train on with n_test={n_test}")
    return dirs[:n_train], dirs[n_train:]


def load_maps(model_dir: Path):
    return {k: formats.read_pfm(model_dir / f"{k}.pfm", kind) for k, kind in MAP_FILES.items()}


def _history_csv(path, rows):
    lines = ["stage,epoch,split,value"] + [f"{s},{e},{split},{v:.8g}" for s, e, split, v in rows]
    Path(path).write_text("\n".join(lines) + "\n")


# --- commands -----------------------------------------------------------------------------------

def gen_data(cfg: PipelineConfig, out: Path):
    """Corpus models with their voxel fields and rendered maps, one directory per model."""
    from .irhairnet import render_maps

    spec = cfg.grid_spec
    dc = cfg.data
    models = generate_models(dc.n_models, tuple(dc.styles), cfg.seed, cfg.box, dc.strand_count, dc.augmentation)
    entries = []
    for m in models:
        name = f"model_{m.meta['index']:04d}"
        d = out / name
        d.mkdir(parents=True, exist_ok=True)
        formats.write_strands(d / "strands.hstr", m)
        ori = fill_holes(voxelize(m, spec)[0])
        formats.write_field(d / "ori.hfld", ori)
        formats.write_field(d / "occ.hfld", OccupancyField(spec, ori.occupied.astype(np.float32)))
        maps = render_maps(m, cfg.irhairnet, spec)
        for k, img in maps.items():
            formats.write_pfm(d / f"{k}.pfm", img)
        formats.write_pgm(d / "preview.pgm", maps["lum"])
        entries.append({"dir": name, "style": m.meta.get("style"), "strands": len(m.strands),
                        "digest": m.digest()})
        log.info("wrote %s (%s, %d strands)", name, m.meta.get("style"), len(m.strands))
    manifest = {"config_digest": cfg.digest(), "seed": cfg.seed, "models": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def train_irhairnet_cmd(cfg: PipelineConfig, data_dir: Path, out: Path):
    from .irhairnet import build_item, train_irhairnet

    train_dirs, _ = _split(_model_dirs(data_dir), cfg.data.n_test)
    spec = cfg.grid_spec
    items = []
    for i, d in enumerate(train_dirs):
        model = formats.read_strands(d / "strands.hstr")
        items.append(build_item(model, cfg.irhairnet, spec, cfg.data.n_points, cfg.data.sigma,
                                seed=cfg.seed * 100003 + i, maps=load_maps(d)))
    t0 = time.perf_counter()
    net, hist, ck = train_irhairnet(items, cfg.irhairnet_train, net_cfg=cfg.irhairnet)
    log.info("irhairnet trained in %.1fs, digest %s", time.perf_counter() - t0, net.digest()[:16])
    ck.save(out / "irhairnet.hnnc")
    rows = [(s, e, "train", v) for s, e, v in hist.train] + [(s, e, "val", v) for s, e, v in hist.val]
    _history_csv(out / "irhairnet_history.csv", rows)
    return ck


def train_growingnet_cmd(cfg: PipelineConfig, data_dir: Path, out: Path):
    from .growingnet import train_growingnet
    from .strands import resample_uniform

    train_dirs, _ = _split(_model_dirs(data_dir), cfg.data.n_test)
    fields, strands = [], []
    for d in train_dirs:
        fields.append(formats.read_field(d / "ori.hfld"))
        model = formats.read_strands(d / "strands.hstr")
        rs = []
        for s in model.strands:
            try:
                rs.append(resample_uniform(s, cfg.growingnet.step).points)
            except TooShortError:
                continue
        strands.append(rs)
    t0 = time.perf_counter()
    net, hist, ck = train_growingnet(fields, strands, cfg.growingnet_train, net_cfg=cfg.growingnet)
    log.info("growingnet trained in %.1fs, %d strands skipped", time.perf_counter() - t0, hist.skipped)
    ck.save(out / "growingnet.hnnc")
    rows = [("growth", e, "train", v) for e, v in hist.train] + [("growth", e, "val", v) for e, v in hist.val]
    _history_csv(out / "growingnet_history.csv", rows)
    return ck


def reconstruct(cfg: PipelineConfig, maps_dir: Path, ckpt_dir: Path, out: Path):
    """Maps -> inferred fields -> latent patches -> grown strands, all written to ``out``."""
    from .growingnet import PatchLattice, encode_patches, grow, load_growingnet, sample_seeds
    from .irhairnet import export_fields, load_irhairnet, network_inputs

    spec = cfg.grid_spec
    rc = cfg.reconstruct
    timings = {}
    ir = load_irhairnet(Checkpoint.load(ckpt_dir / "irhairnet.hnnc"), cfg.irhairnet, spec)
    gn = load_growingnet(Checkpoint.load(ckpt_dir / "growingnet.hnnc"), cfg.growingnet)
    coarse, lum = network_inputs(load_maps(maps_dir), cfg.irhairnet, float(spec.dims[0]))

    t0 = time.perf_counter()
    ori, occ = export_fields(ir, coarse, lum, 1, rc.threshold)
    timings["fields"] = time.perf_counter() - t0
    formats.write_field(out / "ori.hfld", ori)
    formats.write_field(out / "occ.hfld", occ)
    if rc.supersample > 1:
        ori_k, occ_k = export_fields(ir, coarse, lum, rc.supersample, rc.threshold)
        formats.write_field(out / f"ori_x{rc.supersample}.hfld", ori_k)
        formats.write_field(out / f"occ_x{rc.supersample}.hfld", occ_k)

    t0 = time.perf_counter()
    lattice = PatchLattice(spec, gn.cfg.d)
    latents = encode_patches(ori, lattice, gn)
    timings["encode"] = time.perf_counter() - t0
    formats.write_latents(out / "latents.hlat", latents.grid, lattice.d, spec)

    t0 = time.perf_counter()
    occ_bin = OccupancyField(spec, (occ.data >= rc.threshold).astype(np.float32))
    seeds = sample_seeds(occ_bin, rc.n_seeds, cfg.seed, rc.threshold)
    model = grow(seeds, latents, gn, occ_bin, cfg.growth)
    timings["grow"] = time.perf_counter() - t0
    formats.write_strands(out / "strands.hstr", model)
    if rc.export_ply:
        formats.write_ply(out / "strands.ply", model)
    summary = {"strands": len(model.strands), "seeds": int(len(seeds)), "model_digest": model.digest(),
               "irhairnet_digest": ir.digest(), "growingnet_digest": gn.digest(), "config_digest": cfg.digest()}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    for k, v in timings.items():
        log.info("time %s %.3fs", k, v)
    return summary


def evaluate(cfg: PipelineConfig, pred_dir: Path, gt_dir: Path, out: Path | None = None):
    from .imaging import Projection
    from .metrics import MetricsReport, l1_projection, l2_orientation, precision_occ, strand_deviation

    rep = MetricsReport()
    p_ori, g_ori = formats.read_field(pred_dir / "ori.hfld"), formats.read_field(gt_dir / "ori.hfld")
    p_occ, g_occ = formats.read_field(pred_dir / "occ.hfld"), formats.read_field(gt_dir / "occ.hfld")
    if p_ori.spec.dims != g_ori.spec.dims:
        raise DimensionError(f"predicted grid {p_ori.spec.dims} vs ground truth {g_ori.spec.dims}")
    rep.precision, rep.precision_flag = precision_occ(p_occ, g_occ, cfg.reconstruct.threshold)
    rep.l2_orientation = l2_orientation(p_ori, g_ori)
    if (pred_dir / "strands.hstr").exists():
        model = formats.read_strands(pred_dir / "strands.hstr")
        ori2d = formats.read_pfm(gt_dir / "ori2d.pfm", "ORI2D")
        proj = Projection(g_ori.spec, ori2d.width, ori2d.height)
        rep.l1_projection, _ = l1_projection(model, ori2d, proj)
        if (gt_dir / "strands.hstr").exists():
            st = strand_deviation(model.strands, formats.read_strands(gt_dir / "strands.hstr").strands)
            rep.strand_mean, rep.strand_max = st["mean"], st["max"]
    lines = rep.to_lines()
    print("\n".join(lines))
    if out is not None:
        (out / "metrics.txt").write_text("\n".join(lines) + "\n")
    return rep


def bench_cmd(cfg: PipelineConfig, out: Path | None = None):
    from .bench import run_benchmark

    res = run_benchmark(cfg.bench)
    lines = [f"config_digest={cfg.digest()}"] + res.to_lines()
    print("\n".join(lines))
    if out is not None:
        (out / "bench.txt").write_text("\n".join(lines) + "\n")
    return res


# --- argument handling --------------------------------------------------------------------------

def _apply_overrides(cfg: PipelineConfig, sets):
    d = cfg.to_dict()
    for item in sets or ():
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            val = json.loads(raw)
        except json.JSONDecodeError:
            val = raw
        node = d
        parts = key.split(".")
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"unknown config section {p!r} in {key!r}")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[parts[-1]] = val
    return PipelineConfig.from_dict(d)


def build_parser():
    p = argparse.ArgumentParser(prog="implicithair", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="JSON pipeline config (defaults when omitted)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key, e.g. data.n_models=4 (repeatable)")
        sp.add_argument("--seed", type=int, help="override the top-level seed")

    sp = sub.add_parser("gen-data", help="generate the synthetic corpus")
    common(sp)
    sp.add_argument("--n-models", type=int)
    sp.add_argument("--styles", nargs="+")
    sp.add_argument("--out", type=Path, required=True)

    for name in ("train-irhairnet", "train-growingnet"):
        sp = sub.add_parser(name, help=f"train {name.split('-')[1]}; writes a checkpoint and loss history")
        common(sp)
        sp.add_argument("--data", type=Path, required=True, help="gen-data output directory")
        sp.add_argument("--out", type=Path, required=True, help="checkpoint directory")

    sp = sub.add_parser("reconstruct", help="maps -> fields -> strands")
    common(sp)
    sp.add_argument("--maps", type=Path, required=True, help="directory holding lum/ori2d/bust_depth PFM maps")
    sp.add_argument("--ckpt", type=Path, required=True, help="directory with irhairnet.hnnc and growingnet.hnnc")
    sp.add_argument("--out", type=Path, required=True)

    sp = sub.add_parser("eval", help="metrics of a reconstruction against ground truth")
    common(sp)
    sp.add_argument("--pred", type=Path, required=True, help="reconstruct output directory")
    sp.add_argument("--gt", type=Path, required=True, help="gen-data model directory")
    sp.add_argument("--out", type=Path, help="directory for metrics.txt")

    sp = sub.add_parser("bench", help="tracer versus learned growth timings")
    common(sp)
    sp.add_argument("--out", type=Path, help="directory for bench.txt")
    return p


def _resolve(args) -> PipelineConfig:
    cfg = _apply_overrides(load_config(args.config), args.set)
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "n_models", None) is not None:
        cfg.data.n_models = args.n_models
    if getattr(args, "styles", None):
        cfg.data.styles = tuple(args.styles)
    return cfg.resolved()


def run(args) -> int:
    cfg = _resolve(args)
    out = getattr(args, "out", None)
    handler = _start(cfg, out, args.command) if out is not None else None
    if handler is None:
        log.info("%s: config digest=%s seed=%d", args.command, cfg.digest(), cfg.seed)
    try:
        if args.command == "gen-data":
            gen_data(cfg, out)
        elif args.command == "train-irhairnet":
            train_irhairnet_cmd(cfg, args.data, out)
        elif args.command == "train-growingnet":
            train_growingnet_cmd(cfg, args.data, out)
        elif args.command == "reconstruct":
            reconstruct(cfg, args.maps, args.ckpt, out)
        elif args.command == "eval":
            evaluate(cfg, args.pred, args.gt, out)
        elif args.command == "bench":
            bench_cmd(cfg, out)
    finally:
        if handler is not None:
            logging.getLogger().removeHandler(handler)
            handler.close()
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except FileNotFoundError as e:
        log.error("missing file: %s", e)
        return EXIT_MISSING
    except DigestMismatchError as e:
        log.error("digest mismatch: %s", e)
        return EXIT_DIGEST
    except DimensionError as e:
        log.error("dimension mismatch: %s", e)
        return EXIT_DIMENSION
    except ConfigError as e:
        log.error("config error: %s", e)
        return EXIT_USAGE
    except HairError as e:
        log.error("%s: %s", type(e).__name__, e)
        return EXIT_ERROR
    except Exception:
        log.exception("unexpected error")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
