"""Wall-clock comparison of the sequential tracer and lockstep learned growth."""

from __future__ import annotations

import logging
import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .analytic import HelixField, sample_field
from .fields import GridSpec
from .growingnet import GrowingNet, GrowthConfig, GrowthNetConfig, PatchLattice, encode_patches, grow_direction, step
from .tracer import PointSampler, trace_one

log = logging.getLogger(__name__)


@dataclass
class BenchScenario:
    dims: tuple = (96, 128, 128)  # (D, H, W)
    n_seeds: int = 10000
    n_steps: int = 200
    repetitions: int = 3
    tracer_repetitions: int | None = None  # defaults to ``repetitions``
    patch_sizes: tuple = (4, 8, 16, 32)
    step: float = 0.5
    seed: int = 0
    warmup: bool = True

    def to_dict(self):
        return asdict(self)


@dataclass
class BenchResult:
    times: dict = field(default_factory=dict)  # name -> list of seconds
    scenario: dict = field(default_factory=dict)

    def median(self, name):
        return statistics.median(self.times[name])

    def to_lines(self):
        out = [f"scenario.{k}={v}" for k, v in self.scenario.items()]
        for name in self.times:
            ts = self.times[name]
            out.append(f"{name}.median_s={self.median(name):.6f}")
            out.append(f"{name}.runs={len(ts)}")
        return out


def bench_field(dims):
    """Full-occupancy helix field around the vertical axis through the volume center."""
    spec = GridSpec(tuple(dims))
    c = (spec.box_min + spec.box_max) / 2
    return sample_field(HelixField((0.0, 0.05, 0.0), tuple(c), (0.0, 0.3, 0.0)), spec)


def _time(fn, reps):
    out = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return out


def run_benchmark(scenario: BenchScenario | None = None, nets: dict | None = None) -> BenchResult:
    """Time the tracer, growth with and without overlap (d=8) and growth at each patch size.

    Every method runs ``n_steps`` forward steps from the same seeds with
    termination disabled, and GrowingNet timings include patch encoding.
    ``nets`` maps patch size to a network; untrained ones are built otherwise,
    which does not change the cost.
    """
    sc = scenario or BenchScenario()
    f, occ = bench_field(sc.dims)
    rng = np.random.default_rng(sc.seed)
    spec = f.spec
    seeds = spec.box_min + rng.uniform(0.1, 0.9, size=(sc.n_seeds, 3)) * (spec.box_max - spec.box_min)
    gcfg = GrowthConfig(max_steps=sc.n_steps, fixed_steps=True)
    nets = dict(nets or {})
    sizes = sorted(set(sc.patch_sizes) | {8})
    for d in sizes:
        nets.setdefault(d, GrowingNet(GrowthNetConfig(d=d), seed=sc.seed))

    def tracer(pts):
        sampler = PointSampler(f, occ)
        for s in pts:
            trace_one(sampler, s, sc.step, gcfg)

    def growth(d, overlap):
        net = nets[d]

        def run(pts):
            lat = encode_patches(f, PatchLattice(spec, d), net)
            grow_direction(pts, lambda x: step(x, lat, net, "fwd", overlap, check=False), occ, gcfg)
        return run

    jobs = [("tracer", tracer, sc.tracer_repetitions or sc.repetitions),
            ("growingnet_overlap", growth(8, True), sc.repetitions),
            ("growingnet_no_overlap", growth(8, False), sc.repetitions)]
    jobs += [(f"growingnet_d{d}", growth(d, True), sc.repetitions) for d in sc.patch_sizes]
    res = BenchResult(scenario=sc.to_dict())
    for name, fn, reps in jobs:
        if sc.warmup:
            fn(seeds[:64])
        res.times[name] = _time(lambda: fn(seeds), reps)
        log.info("%s median %.3fs", name, statistics.median(res.times[name]))
    return res
