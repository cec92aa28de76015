"""Train both networks on a handful of corpus models and reconstruct a held-out one.

This is a small, minutes-long version of the full pipeline:
maps -> IRHairNet fields -> GrowingNet strands. Expect rough results at this scale.

Run: python3 demos/03_train_small.py
"""

import time

import numpy as np

from implicithair.corpus import generate_models
from implicithair.errors import TooShortError
from implicithair.growingnet import (GrowthConfig, GrowthTrainConfig, PatchLattice, encode_patches, grow,
                                     sample_seeds, train_growingnet)
from implicithair.irhairnet import IRHairConfig, IRHairTrainConfig, build_item, export_fields, train_irhairnet
from implicithair.metrics import constant_field_like, l2_orientation, mean_direction_baseline, precision_occ
from implicithair.strands import resample_uniform

cfg = IRHairConfig()
models = generate_models(10, seed=3, strand_count=150)
items = [build_item(m, cfg, seed=i, n_points=4096) for i, m in enumerate(models)]
train, test = items[:8], items[8:]

t0 = time.perf_counter()
ir, hist, _ = train_irhairnet(train, IRHairTrainConfig(epochs_coarse=15, epochs_fine=5, batch_models=2,
                                                       samples_per_model=1024, lam=0.35))
print(f"IRHairNet: {time.perf_counter() - t0:.0f}s, coarse val loss {hist.stage('coarse')[0]:.3f} -> "
      f"{hist.stage('coarse')[-1]:.3f}")

base_dir = mean_direction_baseline([it.fields[0] for it in train])
for it in test:
    ori, occ = export_fields(ir, it.coarse, it.lum)
    gt_ori, gt_occ = it.fields
    base = l2_orientation(constant_field_like(gt_ori, base_dir), gt_ori)
    print(f"  held-out precision {precision_occ(occ, gt_occ)[0]:.3f}  L2 {l2_orientation(ori, gt_ori):.3f} "
          f"(mean-direction baseline {base:.3f})")

# GrowingNet learns steps from the ground-truth strands inside the ground-truth fields.
fields, strands = [], []
for m, it in zip(models[:8], train):
    fields.append(it.fields[0])
    rs = []
    for s in m.strands:
        try:
            rs.append(resample_uniform(s, 0.5).points)
        except TooShortError:
            pass
    strands.append(rs)
t0 = time.perf_counter()
gn, ghist, _ = train_growingnet(fields, strands, GrowthTrainConfig(epochs=6, batch=256, batches_per_epoch=10))
print(f"GrowingNet: {time.perf_counter() - t0:.0f}s, val loss {ghist.val[0][1]:.3f} -> {ghist.val[-1][1]:.3f}")

ori, occ = export_fields(ir, test[0].coarse, test[0].lum)
latents = encode_patches(ori, PatchLattice(ori.spec, gn.cfg.d), gn)
seeds = sample_seeds(occ, 300, seed=0)
model = grow(seeds, latents, gn, occ, GrowthConfig(max_steps=150))
lengths = [len(s.points) for s in model.strands]
print(f"reconstructed {len(model.strands)} strands from {len(seeds)} seeds, median length "
      f"{np.median(lengths) if lengths else 0:.0f} points")
