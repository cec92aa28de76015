"""Why patches overlap: the growth map jumps at patch borders without blending.

Two constant fields pointing in different directions fill the left and right halves.
Walking across the border, the nearest-patch decoder switches latents abruptly while
the blended decoder changes smoothly.

Run: python3 demos/04_overlap_continuity.py
"""

import numpy as np

from implicithair.fields import GridSpec, OrientationField
from implicithair.growingnet import GrowingNet, GrowthNetConfig, PatchLattice, encode_patches, step

spec = GridSpec((16, 16, 16))
data = np.zeros(spec.dims + (3,), np.float32)
data[:, :, :8] = [0.0, 1.0, 0.0]
data[:, :, 8:] = [1.0, 0.0, 0.0]
net = GrowingNet(GrowthNetConfig(d=8), seed=0)
latents = encode_patches(OrientationField(spec, data), PatchLattice(spec, 8), net)

xs = np.linspace(5.0, 11.0, 601)
line = np.stack([xs, np.full_like(xs, 8.3), np.full_like(xs, 7.9)], axis=1)
for overlap in (True, False):
    d = step(line, latents, net, overlap=overlap) - line
    jumps = np.linalg.norm(np.diff(d, axis=0), axis=1)
    print(f"overlap={overlap!s:5s}  largest change between neighbouring samples {jumps.max():.2e} "
          f"at x={xs[1:][jumps.argmax()]:.2f}")
