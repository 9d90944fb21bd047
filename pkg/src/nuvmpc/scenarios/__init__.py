"""Scenario registry: JSON configs, default solver settings and a single run entry point.

A scenario config is a JSON object::

    {"kind": "corridor",
     "params": {"version": 4},
     "iake": {"max_iters": 500},
     "output": {"dir": "out", "prefix": "corridor_v4", "svg": true}}

Only ``kind`` is required.  ``params`` maps onto the scenario's config
dataclass, ``iake`` onto :class:`~nuvmpc.iake.IakeConfig` (unset fields take
the scenario default).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Callable, Optional

from ..iake import IakeConfig
from ..priors import ContractError
from .base import ConfigError, Outcome, config_from_mapping, config_to_mapping
from .corridor import CorridorConfig, build_corridor, run_corridor
from .dac import DacConfig, build_dac, run_dac
from .flappy import FlappyConfig, build_flappy, run_flappy
from .obstacle import ObstacleConfig, build_obstacle, run_obstacle
from .racetrack import RaceTrackConfig, build_racetrack, run_racetrack


@dataclass(frozen=True)
class ScenarioKind:
    name: str
    config_cls: type
    build: Callable
    run: Callable
    iake: IakeConfig
    linear: bool


REGISTRY = {
    "dac": ScenarioKind("dac", DacConfig, build_dac, run_dac, IakeConfig(max_iters=500), True),
    "corridor": ScenarioKind("corridor", CorridorConfig, build_corridor, run_corridor,
                             IakeConfig(max_iters=500), True),
    "flappy": ScenarioKind("flappy", FlappyConfig, build_flappy, run_flappy,
                           IakeConfig(max_iters=500), True),
    "obstacle": ScenarioKind("obstacle", ObstacleConfig, build_obstacle, run_obstacle,
                             IakeConfig(max_iters=500, relinearize=True, relin_max_outer=10), False),
    # The weak total-acceleration slope needs many short inner loops.
    "racetrack": ScenarioKind("racetrack", RaceTrackConfig, build_racetrack, run_racetrack,
                              IakeConfig(max_iters=20, relinearize=True, relin_max_outer=60,
                                         relin_inner_iters=20), False),
}


def default_iake(kind: str) -> IakeConfig:
    return dataclasses.replace(_kind(kind).iake)


def _kind(kind) -> ScenarioKind:
    if not isinstance(kind, str) or kind.lower() not in REGISTRY:
        raise ConfigError(f"unknown scenario {kind!r}; expected one of {', '.join(REGISTRY)}",
                          "kind")
    return REGISTRY[kind.lower()]


@dataclass
class OutputSpec:
    dir: str = "."
    prefix: str = ""
    svg: bool = False


@dataclass
class ScenarioConfig:
    kind: str
    params: object  # the scenario's config dataclass
    iake: IakeConfig
    output: OutputSpec = field(default_factory=OutputSpec)

    @property
    def prefix(self) -> str:
        if self.output.prefix:
            return self.output.prefix
        if self.kind == "corridor":
            return f"corridor_v{self.params.version}"
        return self.kind

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "params": config_to_mapping(self.params),
            "iake": dataclasses.asdict(self.iake),
            "output": dataclasses.asdict(self.output),
        }


def config_from_dict(doc, overrides: Optional[dict] = None,
                     iake_overrides: Optional[dict] = None) -> ScenarioConfig:
    """Validate a parsed config document.

    ``overrides`` and ``iake_overrides`` are merged over ``params`` and
    ``iake`` (command-line flags).
    """
    if not isinstance(doc, dict):
        raise ConfigError("top level must be a JSON object")
    unknown = sorted(set(doc) - {"kind", "params", "iake", "output"})
    if unknown:
        raise ConfigError(f"unknown field(s) {', '.join(unknown)}", "<root>")
    if "kind" not in doc:
        raise ConfigError("missing required field", "kind")
    sk = _kind(doc["kind"])
    for name in ("params", "iake", "output"):
        if name in doc and not isinstance(doc[name], dict):
            raise ConfigError("expected an object", name)
    params = dict(doc.get("params", {}))
    params.update(overrides or {})
    cfg = config_from_mapping(sk.config_cls, params, "params")
    iake_doc = dataclasses.asdict(sk.iake)
    unknown = sorted(set(doc.get("iake", {})) - set(iake_doc))
    if unknown:
        raise ConfigError(f"unknown field(s) {', '.join(unknown)}", "iake")
    iake_doc.update(doc.get("iake", {}))
    iake_doc.update(iake_overrides or {})
    try:
        iake = config_from_mapping(IakeConfig, iake_doc, "iake")
    except ContractError as err:
        raise ConfigError(str(err), "iake") from err
    out = config_from_mapping(OutputSpec, doc.get("output", {}), "output")
    return ScenarioConfig(sk.name, cfg, iake, out)


def _line_of(text: str, pos: int) -> int:
    return text.count("\n", 0, pos) + 1


def parse_config(text: str, overrides=None, iake_overrides=None) -> ScenarioConfig:
    """Parse JSON text; syntax errors are reported with line and column."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"invalid JSON at line {err.lineno}, column {err.colno}: {err.msg}") from err
    return config_from_dict(doc, overrides, iake_overrides)


def load_config(path, overrides=None, iake_overrides=None) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_config(text, overrides, iake_overrides)


def build_scenario(cfg: ScenarioConfig):
    return REGISTRY[cfg.kind].build(cfg.params)


def run_scenario(cfg: ScenarioConfig, callback=None) -> Outcome:
    return REGISTRY[cfg.kind].run(cfg.params, cfg.iake, callback)


__all__ = [
    "REGISTRY",
    "ConfigError",
    "CorridorConfig",
    "DacConfig",
    "FlappyConfig",
    "ObstacleConfig",
    "Outcome",
    "OutputSpec",
    "RaceTrackConfig",
    "ScenarioConfig",
    "build_scenario",
    "config_from_dict",
    "default_iake",
    "load_config",
    "parse_config",
    "run_scenario",
]
