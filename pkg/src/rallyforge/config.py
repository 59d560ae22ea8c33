"""Engine configuration: one JSON document wiring every module's knobs.

Schema (all sections optional; defaults are the module defaults):

    {
      "court":      {... CourtSpec fields ...},
      "flight":     {... FlightParams fields ...},
      "bins":       {"v_max": 8.0, "n_bins": 5},
      "weights":    {... CostWeights fields ...},
      "thresholds": {... SearchThresholds fields ...},
      "kde":        {"velocity_bandwidths": [...], "position_bandwidths": [...]},
      "grid":       {... GridSpec fields ...},
      "engine":     {"max_shots": 100, "returner_lateral": 1.8,
                     "returner_depth": 0.9}
    }

Unknown keys are rejected at every level.  The --config CLI flag wins;
the RALLYFORGE_CONFIG environment variable is the fallback path.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

from .court import BinConfig, CourtSpec
from .physics import FlightParams, GridSpec
from .search import CostWeights, SearchThresholds

ENV_VAR = "RALLYFORGE_CONFIG"


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class KdeConfig:
    velocity_bandwidths: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)
    position_bandwidths: tuple[float, ...] = (0.25, 0.5, 0.75, 1.0, 1.5)

    def __post_init__(self) -> None:
        for grid in (self.velocity_bandwidths, self.position_bandwidths):
            if not grid or any(b <= 0 for b in grid):
                raise ConfigError("bandwidth grids must be non-empty and positive")


@dataclass(frozen=True)
class EngineKnobs:
    max_shots: int = 100
    returner_lateral: float = 1.8
    returner_depth: float = 0.9

    def __post_init__(self) -> None:
        if self.max_shots < 1:
            raise ConfigError("max_shots must be >= 1")


@dataclass(frozen=True)
class EngineConfig:
    court: CourtSpec = field(default_factory=CourtSpec)
    flight: FlightParams = field(default_factory=FlightParams)
    bins: BinConfig = field(default_factory=BinConfig)
    weights: CostWeights = field(default_factory=CostWeights)
    thresholds: SearchThresholds = field(default_factory=SearchThresholds)
    kde: KdeConfig = field(default_factory=KdeConfig)
    grid: GridSpec = field(default_factory=GridSpec)
    engine: EngineKnobs = field(default_factory=EngineKnobs)


_SECTIONS = {
    "court": CourtSpec,
    "flight": FlightParams,
    "bins": BinConfig,
    "weights": CostWeights,
    "thresholds": SearchThresholds,
    "kde": KdeConfig,
    "grid": GridSpec,
    "engine": EngineKnobs,
}


def _build_section(cls, data: dict, section: str):
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(
            f"unknown key(s) in {section!r}: {', '.join(sorted(unknown))}")
    coerced = {}
    for key, value in data.items():
        if isinstance(value, list):
            value = tuple(value)
        coerced[key] = value
    try:
        return cls(**coerced)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid value in section {section!r}: {e}") from e


def config_from_dict(doc: dict) -> EngineConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(doc) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    parts = {name: _build_section(cls, doc.get(name, {}), name)
             for name, cls in _SECTIONS.items()}
    return EngineConfig(**parts)


def load_config(path: str | None = None) -> EngineConfig:
    """Config from an explicit path, the environment fallback, or defaults."""
    if path is None:
        path = os.environ.get(ENV_VAR)
    if path is None:
        return EngineConfig()
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    return config_from_dict(doc)


def default_config_dict() -> dict:
    """The full defaults as a plain dict (for --print-config style output)."""
    out = {}
    for name, cls in _SECTIONS.items():
        section = {}
        for f in dataclasses.fields(cls):
            v = getattr(getattr(EngineConfig(), name), f.name)
            section[f.name] = list(v) if isinstance(v, tuple) else v
        out[name] = section
    return out
