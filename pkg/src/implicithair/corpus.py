"""Procedural training corpus: randomised hairstyles with light augmentation."""

from __future__ import annotations

import numpy as np

from .strands import STYLES, SynthStyleParams, augment, canonical_bbox, synth_hairstyle


def random_style_params(rng, style, box=(32, 32, 24), strand_count=200) -> SynthStyleParams:
    """Draw generator parameters for one model of ``style``."""
    if style not in STYLES:
        raise ValueError(f"unknown style {style!r}")
    amp, freq = 0.0, 0.0
    if style == "wavy":
        amp, freq = rng.uniform(0.5, 1.5), rng.uniform(0.15, 0.35)
    elif style == "curly":
        amp, freq = rng.uniform(0.6, 1.2), rng.uniform(0.25, 0.5)
    elif style == "bun-like":
        amp, freq = rng.uniform(0.2, 0.6), rng.uniform(0.2, 0.4)
    lo = rng.uniform(8.0, 14.0)
    return SynthStyleParams(
        style=style, strand_count=strand_count, box=tuple(box),
        cap_angle=float(np.deg2rad(rng.uniform(85.0, 110.0))),
        curl_amplitude=float(amp), curl_frequency=float(freq),
        length_range=(float(lo), float(lo + rng.uniform(4.0, 10.0))),
        noise_scale=float(rng.uniform(0.0, 0.3)),
        droop=float(rng.uniform(0.15, 0.5)),
        seed=int(rng.integers(2 ** 31)),
    )


def augment_randomly(model, rng, max_box):
    """Random horizontal flip, small rotation and scale; ops that would leave ``max_box`` are skipped."""
    ops = []
    if rng.uniform() < 0.5:
        ops.append(("hflip", None))
    ops.append(("rotate", float(np.deg2rad(rng.uniform(-12.0, 12.0)))))
    ops.append(("scale", float(rng.uniform(0.94, 1.04))))
    for op, val in ops:
        try:
            model = augment(model, op, val, max_box)
        except ValueError:
            pass
    return model


def generate_models(n, styles=STYLES, seed=0, box=(32, 32, 24), strand_count=200, augmentation=True):
    """``n`` models cycling through ``styles``; model ``i`` depends only on (seed, i)."""
    out = []
    max_box = canonical_bbox(box)
    children = np.random.SeedSequence(seed).spawn(n)
    for i, ss in enumerate(children):
        rng = np.random.default_rng(ss)
        params = random_style_params(rng, styles[i % len(styles)], box, strand_count)
        m = synth_hairstyle(params)
        if augmentation:
            m = augment_randomly(m, rng, max_box)
        m.meta.update(index=i, corpus_seed=int(seed))
        out.append(m)
    return out
