"""Generate a few synthetic hairstyles, voxelise them and render the image-space network inputs.

Run: python3 demos/02_corpus_and_maps.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np

from implicithair import formats
from implicithair.corpus import generate_models
from implicithair.fields import GridSpec, fill_holes, voxelize
from implicithair.irhairnet import IRHairConfig, render_maps

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/corpus")
out.mkdir(parents=True, exist_ok=True)
cfg = IRHairConfig()
spec = GridSpec(cfg.grid_dims)

for m in generate_models(4, seed=1, strand_count=120):
    name = f"{m.meta['index']:02d}_{m.meta['style']}"
    ori = fill_holes(voxelize(m, spec)[0])
    maps = render_maps(m, cfg, spec)
    ori2d = maps["ori2d"].data
    print(f"{name:12s} strands={len(m.strands):4d} occupied voxels={int(ori.occupied.sum()):5d} "
          f"hair pixels={int((ori2d >= 0).sum()):6d} mean L*={maps['lum'].data[ori2d >= 0].mean():.1f}")
    formats.write_strands(out / f"{name}.hstr", m)
    formats.write_field(out / f"{name}_ori.hfld", ori)
    formats.write_pgm(out / f"{name}_lum.pgm", maps["lum"])
    formats.write_pgm(out / f"{name}_ori2d.pgm", maps["ori2d"])
    formats.write_obj(out / f"{name}.obj", m)

print("wrote", sorted(p.name for p in out.iterdir())[:6], "...")
# the strand file round-trips byte for byte
b = (out / f"{name}.hstr").read_bytes()
assert formats.strands_to_bytes(formats.strands_from_bytes(b)) == b
print("HSTR round trip ok;", np.round(np.degrees(np.median(ori2d[ori2d >= 0])), 1), "deg median 2D angle")
