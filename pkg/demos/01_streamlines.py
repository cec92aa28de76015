"""Trace streamlines through an analytic orientation field and grow them with an untrained GrowingNet.

Run: python3 demos/01_streamlines.py
"""

import numpy as np

from implicithair.analytic import HelixField, sample_field
from implicithair.fields import GridSpec
from implicithair.growingnet import GrowingNet, GrowthConfig, GrowthNetConfig, PatchLattice, encode_patches, grow
from implicithair.tracer import trace_traditional

spec = GridSpec((24, 32, 32))
ori, occ = sample_field(HelixField((0.0, 0.15, 0.0), (16.0, 16.0, 12.0), (0.0, 0.5, 0.0)), spec)
seeds = np.array([[22.0, 4.0, 12.0], [16.0, 6.0, 18.0], [10.0, 8.0, 12.0]])

# The tracer integrates the field one point at a time (midpoint rule, sign consistency).
model = trace_traditional(ori, occ, seeds, 0.5, GrowthConfig(max_steps=120))
for s in model.strands:
    r = np.hypot(s.points[:, 0] - 16.0, s.points[:, 2] - 12.0)
    print(f"traced {len(s.points):4d} points, distance to helix axis {r.min():.3f}..{r.max():.3f}")

# GrowingNet advances every seed in lockstep from patch latents. Untrained, its
# strands are arbitrary, but the machinery (encoding, overlap blending, termination) is the same.
net = GrowingNet(GrowthNetConfig(d=8), seed=0)
latents = encode_patches(ori, PatchLattice(spec, 8), net)
print("latent grid", latents.grid.shape)
grown = grow(seeds, latents, net, occ, GrowthConfig(max_steps=120, min_length=2))
print("grown strands", [len(s.points) for s in grown.strands])
