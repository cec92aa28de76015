"""Hair modeling from a single view through implicit fields.

IRHairNet infers occupancy and orientation volumes from 2D maps; GrowingNet
grows strands through latent patches of an orientation field. A plain
streamline tracer serves as reference and timing baseline.

Set ``IMPLICITHAIR_THREADS`` to cap BLAS threads; it must be set before the
first numpy import.
"""

import os as _os

if _os.environ.get("IMPLICITHAIR_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["IMPLICITHAIR_THREADS"])

from .errors import (ConfigError, DigestMismatchError, DimensionError, DivergenceError, EscapedError,  # noqa: E402
                     FormatError, HairError, TooShortError)
from .fields import GridSpec, OccupancyField, OrientationField, fill_holes, sample_trilinear, voxelize  # noqa: E402
from .strands import STYLES, HairModel, Strand, SynthStyleParams, resample_uniform, synth_hairstyle  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DigestMismatchError", "DimensionError", "DivergenceError", "EscapedError", "FormatError",
    "GridSpec", "HairError", "HairModel", "OccupancyField", "OrientationField", "STYLES", "Strand",
    "SynthStyleParams", "TooShortError", "fill_holes", "resample_uniform", "sample_trilinear", "synth_hairstyle",
    "voxelize",
]
