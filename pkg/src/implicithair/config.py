"""Pipeline configuration: one JSON document with a fixed key set per section.

Every section maps onto a dataclass; unknown keys anywhere raise
:class:`~implicithair.errors.ConfigError`. The digest is the sha256 of the
resolved document in canonical form (sorted keys, compact separators).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .bench import BenchScenario
from .errors import ConfigError
from .growingnet import GrowthConfig, GrowthNetConfig, GrowthTrainConfig
from .irhairnet import IRHairConfig, IRHairTrainConfig
from .strands import STYLES


@dataclass
class DataConfig:
    n_models: int = 8
    styles: tuple = STYLES
    strand_count: int = 200
    augmentation: bool = True
    n_points: int = 8192  # supervised samples per model
    sigma: float = 2.0  # voxels
    n_test: int = 0  # trailing models held out from training


@dataclass
class ReconstructConfig:
    n_seeds: int = 1000
    supersample: int = 1
    threshold: float = 0.5
    export_ply: bool = True


@dataclass
class PathsConfig:
    data_dir: str = "data"
    ckpt_dir: str = "ckpt"
    out_dir: str = "out"


_SECTIONS = {
    "data": DataConfig,
    "irhairnet": IRHairConfig,
    "irhairnet_train": IRHairTrainConfig,
    "growingnet": GrowthNetConfig,
    "growingnet_train": GrowthTrainConfig,
    "growth": GrowthConfig,
    "reconstruct": ReconstructConfig,
    "bench": BenchScenario,
    "paths": PathsConfig,
}


@dataclass
class PipelineConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    irhairnet: IRHairConfig = field(default_factory=IRHairConfig)
    irhairnet_train: IRHairTrainConfig = field(default_factory=IRHairTrainConfig)
    growingnet: GrowthNetConfig = field(default_factory=GrowthNetConfig)
    growingnet_train: GrowthTrainConfig = field(default_factory=GrowthTrainConfig)
    growth: GrowthConfig = field(default_factory=GrowthConfig)
    reconstruct: ReconstructConfig = field(default_factory=ReconstructConfig)
    bench: BenchScenario = field(default_factory=BenchScenario)
    paths: PathsConfig = field(default_factory=PathsConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        top = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - top
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for k, v in d.items():
            if k in _SECTIONS:
                kw[k] = _section(k, _SECTIONS[k], v)
            else:
                kw[k] = v
        try:
            return cls(**kw)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def to_json(self, indent=None) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=indent,
                          separators=(",", ":") if indent is None else None)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def resolved(self) -> "PipelineConfig":
        """Copy with the top-level seed pushed into every seeded section."""
        cfg = PipelineConfig.from_dict(self.to_dict())
        cfg.irhairnet_train.seed = self.seed
        cfg.growingnet_train.seed = self.seed
        cfg.bench.seed = self.seed
        return cfg

    @property
    def grid_spec(self):
        from .fields import GridSpec

        return GridSpec(self.irhairnet.grid_dims)

    @property
    def box(self):
        D, H, W = self.irhairnet.grid_dims
        return (W, H, D)


def _section(name, cls, values):
    if not isinstance(values, dict):
        raise ConfigError(f"section {name!r} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    try:
        return cls(**kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{name}: {e}") from e


def load_config(path=None) -> PipelineConfig:
    """Defaults when ``path`` is None, else the JSON file merged over defaults."""
    if path is None:
        return PipelineConfig()
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        d = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{p}: invalid JSON ({e})") from e
    return PipelineConfig.from_dict(d)
