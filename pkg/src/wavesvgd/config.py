"""Experiment configuration: a YAML file validated against a versioned schema.

Speeds in the file are in m/s; the sampled parameters are squared speeds.
Every error carries the dotted location of the offending field.
"""
import hashlib
import json
import math
from pathlib import Path
from typing import List, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

SCHEMA_VERSION = 1

__all__ = [
    "SCHEMA_VERSION",
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "config_hash",
]


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists ``{"loc", "msg"}`` entries."""

    def __init__(self, errors):
        self.errors = errors
        super().__init__("; ".join(f"{e['loc']}: {e['msg']}" for e in errors))


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _positive(v, name):
    if not v > 0:
        raise ValueError(f"{name} must be positive")
    return v


class SourceConfig(_Strict):
    kind: Literal["gaussian_pulse", "cosine", "zero"] = "gaussian_pulse"
    amplitude: float = 1.0
    center: float = 1.5
    width: float = 0.5
    frequency: float = 1.0
    phase: float = 0.0

    @field_validator("width")
    @classmethod
    def _width(cls, v):
        return _positive(v, "width")


class GridConfig(_Strict):
    dx: float = 100.0
    t_end: float = 5.0
    courant: float = 0.5
    courant_limit: float = 0.5
    max_speed: Optional[float] = None

    @field_validator("dx", "t_end", "courant", "courant_limit")
    @classmethod
    def _pos(cls, v, info):
        return _positive(v, info.field_name)

    @model_validator(mode="after")
    def _courant(self):
        if self.courant > self.courant_limit:
            raise ValueError("courant must not exceed courant_limit")
        return self


class ObservationConfig(_Strict):
    positions: Optional[List[float]] = None
    spacing: Optional[float] = 200.0

    @model_validator(mode="after")
    def _one(self):
        if self.positions is None and self.spacing is None:
            raise ValueError("give observation positions or a spacing")
        if self.spacing is not None and not self.spacing > 0:
            raise ValueError("spacing must be positive")
        return self


class NoiseConfig(_Strict):
    fraction: float = 0.01
    seed: int = 1

    @field_validator("fraction")
    @classmethod
    def _frac(cls, v):
        if v < 0:
            raise ValueError("noise fraction must be nonnegative")
        return v


class SpeedBounds(_Strict):
    lower: float = 1500.0
    upper: float = 3000.0

    @model_validator(mode="after")
    def _order(self):
        if not 0 < self.lower < self.upper:
            raise ValueError("need 0 < lower < upper")
        return self


class HighContrastConfig(_Strict):
    lengths: List[float] = [1000.0, 1000.0]
    speeds_true: List[float] = [2000.0, 2600.0]
    bounds: SpeedBounds = SpeedBounds()

    @model_validator(mode="after")
    def _shape(self):
        if len(self.lengths) != len(self.speeds_true) or not self.lengths:
            raise ValueError("lengths and speeds_true need the same nonzero length")
        if any(not L > 0 for L in self.lengths):
            raise ValueError("layer lengths must be positive")
        if any(not c > 0 for c in self.speeds_true):
            raise ValueError("speeds must be positive")
        return self


class TrueFieldConfig(_Strict):
    """Smooth speed profile ``c(x) = c_left + (c_right - c_left) / (1 + exp(-(x - center) / width))``."""

    kind: Literal["sigmoid"] = "sigmoid"
    c_left: float = 2000.0
    c_right: float = 2600.0
    center: float = 1000.0
    width: float = 300.0


class LowContrastConfig(_Strict):
    length: float = 2000.0
    true_field: TrueFieldConfig = TrueFieldConfig()
    degrees: List[int] = [0, 1, 2]
    n_coeffs: int = 4
    bounds: SpeedBounds = SpeedBounds()

    @model_validator(mode="after")
    def _check(self):
        if not self.length > 0:
            raise ValueError("length must be positive")
        if not self.degrees or any(k < 0 for k in self.degrees):
            raise ValueError("degrees must be a nonempty list of nonnegative integers")
        if self.n_coeffs < max(self.degrees) + 1:
            raise ValueError("n_coeffs must be at least max(degree) + 1")
        return self


class PriorConfig(_Strict):
    std_fraction: float = 0.5

    @field_validator("std_fraction")
    @classmethod
    def _pos(cls, v):
        return _positive(v, "std_fraction")


class GsvgdConfig(_Strict):
    omega: float = 0.5
    xi: float = 1.0
    epsilon: Optional[float] = None
    elbo_samples: int = 32
    max_iters: int = 60
    probes: int = 10
    alpha_min_ratio: float = 1e-8
    alpha_scale: Literal["log", "linear"] = "log"

    @field_validator("omega")
    @classmethod
    def _omega(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError("omega must lie in [0, 1]")
        return v


class AsvgdConfig(_Strict):
    lr: float = 0.01
    iters: int = 100
    report_every: int = 10


class RwmConfig(_Strict):
    n_samples: int = 5000
    proposal_scale: float = 0.05
    adapt: bool = True


class SamplerConfig(_Strict):
    method: Literal["gsvgd", "asvgd", "rwm"] = "gsvgd"
    particles: int = 50
    gsvgd: GsvgdConfig = GsvgdConfig()
    asvgd: AsvgdConfig = AsvgdConfig()
    rwm: RwmConfig = RwmConfig()

    @field_validator("particles")
    @classmethod
    def _m(cls, v):
        if v < 2:
            raise ValueError("need at least two particles")
        return v


class SweepConfig(_Strict):
    omegas: List[float] = [0.0, 0.5, 1.0]

    @field_validator("omegas")
    @classmethod
    def _om(cls, v):
        if any(not 0 <= w <= 1 for w in v):
            raise ValueError("every omega must lie in [0, 1]")
        return v


class ForwardConfig(_Strict):
    studies: bool = True
    ppw: List[int] = [8, 12, 16, 24, 32, 48, 64]
    boundary_ppw: List[int] = [4, 6, 8, 12, 16, 24, 32, 48]


class CompareConfig(_Strict):
    runs: List[str] = []
    omegas: List[float] = [0.0, 0.5, 1.0]


class ExperimentConfig(_Strict):
    schema_version: Literal[1] = 1
    kind: Literal["high_contrast", "low_contrast"] = "high_contrast"
    seed: int = 0
    output_dir: str = "out"
    workers: int = 1
    backend: Optional[Literal["numba", "numpy"]] = None
    source: SourceConfig = SourceConfig()
    grid: GridConfig = GridConfig()
    observation: ObservationConfig = ObservationConfig()
    noise: NoiseConfig = NoiseConfig()
    high_contrast: HighContrastConfig = HighContrastConfig()
    low_contrast: LowContrastConfig = LowContrastConfig()
    prior: PriorConfig = PriorConfig()
    sampler: SamplerConfig = SamplerConfig()
    sweep: SweepConfig = SweepConfig()
    forward: ForwardConfig = ForwardConfig()
    compare: CompareConfig = CompareConfig()

    @field_validator("workers")
    @classmethod
    def _workers(cls, v):
        if v < 1:
            raise ValueError("workers must be at least 1")
        return v

    def with_overrides(self, **kw):
        data = self.model_dump()
        data.update({k: v for k, v in kw.items() if v is not None})
        return ExperimentConfig.model_validate(data)

    @property
    def domain_length(self):
        if self.kind == "high_contrast":
            return float(sum(self.high_contrast.lengths))
        return float(self.low_contrast.length)


def _loc(loc):
    return ".".join(str(p) for p in loc) or "<root>"


def parse_config(data, base_dir=None):
    """Validate a mapping; raises :class:`ConfigError` with field locations."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError([{"loc": "<root>", "msg": "configuration must be a mapping"}])
    try:
        cfg = ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError([{"loc": _loc(e["loc"]), "msg": e["msg"]} for e in exc.errors()]) from None
    errors = _semantic_errors(cfg, base_dir)
    if errors:
        raise ConfigError(errors)
    return cfg


def _semantic_errors(cfg, base_dir):
    errors = []
    L = cfg.domain_length
    if cfg.observation.positions is not None:
        for k, x in enumerate(cfg.observation.positions):
            if not 0 <= x <= L:
                errors.append({"loc": f"observation.positions.{k}", "msg": f"{x} lies outside [0, {L}]"})
    try:
        from .experiments import grid_nodes_per_segment
        grid_nodes_per_segment(cfg)
    except ValueError as exc:
        errors.append({"loc": "grid.dx", "msg": str(exc)})
    base = Path(base_dir) if base_dir else Path.cwd()
    for k, run in enumerate(cfg.compare.runs):
        if not (base / run).exists():
            errors.append({"loc": f"compare.runs.{k}", "msg": f"path {run!r} does not exist"})
    return errors


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError([{"loc": "<file>", "msg": f"config file {str(path)!r} not found"}])
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError([{"loc": "<file>", "msg": f"YAML parse error: {exc}"}]) from None
    return parse_config(data, base_dir=path.parent)


def config_hash(cfg):
    """SHA-256 of the canonical JSON dump (output_dir and workers excluded)."""
    data = cfg.model_dump(exclude={"output_dir", "workers"})
    text = json.dumps(data, sort_keys=True, default=lambda v: None if isinstance(v, float) and math.isnan(v) else v)
    return hashlib.sha256(text.encode()).hexdigest()[:16]
