"""Compare the sequential tracer against lockstep growth on a small scene.

The full-size comparison (10k strands x 200 steps on a 128x128x96 volume) is the
``implicithair bench`` command with default settings; this keeps to a few seconds.

Run: python3 demos/05_benchmark.py
"""

from implicithair.bench import BenchScenario, run_benchmark

res = run_benchmark(BenchScenario(dims=(48, 64, 64), n_seeds=1000, n_steps=50, repetitions=1))
t = {k: res.median(k) for k in res.times}
for k, v in t.items():
    print(f"{k:24s} {v:7.3f}s")
print(f"tracer / overlap growth: {t['tracer'] / t['growingnet_overlap']:.1f}x")
print(f"overlap / nearest-patch: {t['growingnet_overlap'] / t['growingnet_no_overlap']:.1f}x")
