"""Pipeline configuration: strict JSON loading and a stable content hash."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .closure import ClosureConfig
from .evaluation import EvalConfig
from .geometry.volume import GridSpec
from .hand import GripperParams
from .io import sha256_text
from .sampling import SamplerConfig
from .scene import GravityProjectionParams
from .wrench import F_MAX, RESOLUTION, ContactForceLimits


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class OracleSettings:
    cone_edges: int = 8
    f_max: float = F_MAX
    resolution: float = RESOLUTION

    def __post_init__(self):
        if self.cone_edges < 4:
            raise ValueError("cone_edges must be at least 4")
        if not (self.f_max > 0 and self.resolution > 0):
            raise ValueError("f_max and resolution must be positive")


@dataclass(frozen=True)
class SceneSettings:
    count: int = 4
    seed: int = 0
    min_objects: int = 1
    max_objects: int = 5
    workspace: float = 0.15
    max_retries: int = 50

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("scene count must be non-negative")
        if not 1 <= self.min_objects <= self.max_objects <= 5:
            raise ValueError("object counts must satisfy 1 <= min <= max <= 5")


@dataclass(frozen=True)
class PipelineConfig:
    gripper: GripperParams = field(default_factory=GripperParams)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    closure: ClosureConfig = field(default_factory=ClosureConfig)
    oracle: OracleSettings = field(default_factory=OracleSettings)
    projection: GravityProjectionParams = field(default_factory=GravityProjectionParams)
    grid: GridSpec = field(default_factory=GridSpec)
    scenes: SceneSettings = field(default_factory=SceneSettings)
    evaluation: EvalConfig = field(default_factory=EvalConfig)

    @property
    def limits(self) -> ContactForceLimits:
        return ContactForceLimits.from_gripper(self.gripper, self.oracle.cone_edges)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            section = getattr(self, f.name)
            out[f.name] = {k.name: _plain(getattr(section, k.name)) for k in dataclasses.fields(section)}
        return out

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return sha256_text(self.canonical_json())


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for k, v in data.items():
        if isinstance(v, list):
            v = tuple(v)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data: dict) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    sections = {f.name: f for f in dataclasses.fields(PipelineConfig)}
    unknown = sorted(set(data) - set(sections))
    if unknown:
        raise ConfigError(f"unknown section(s) {', '.join(unknown)}")
    defaults = PipelineConfig()
    kwargs = {}
    for name in sections:
        if name in data:
            kwargs[name] = _build(type(getattr(defaults, name)), data[name], name)
    cfg = PipelineConfig(**kwargs)
    if cfg.sampler.max_aperture > cfg.gripper.max_aperture + 1e-12:
        raise ConfigError("sampler.max_aperture exceeds gripper.max_aperture")
    return cfg


def load_config(path=None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data)
