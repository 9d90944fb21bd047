"""Shared plumbing for scenario configs, problems and run outcomes."""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np

from ..iake import IakeConfig, IakeResult, iake_solve, relinearized_solve
from ..lssm import BoundaryCond, Lssm, PriorAttachment


class ConfigError(ValueError):
    """Invalid scenario configuration; ``field`` names the offending entry."""

    def __init__(self, message, field=None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


def _coerce(value, default, path):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"expected a boolean, got {value!r}", path)
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"expected an integer, got {value!r}", path)
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", path)
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", path)
        return value
    return value


def config_from_mapping(cls, data: Optional[dict], path: str = "params"):
    """Instantiate dataclass ``cls`` from ``data``, rejecting unknown keys.

    Values are coerced to the type of the field default; list-valued and
    optional fields are passed through for the class to validate.
    """
    data = dict(data or {})
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown field(s) {', '.join(unknown)}", path)
    kwargs = {}
    for name, value in data.items():
        f = known[name]
        if f.default is not dataclasses.MISSING:
            default = f.default
        elif f.default_factory is not dataclasses.MISSING:  # type: ignore[misc]
            default = f.default_factory()  # type: ignore[misc]
        else:
            default = None
        kwargs[name] = value if default is None else _coerce(value, default, f"{path}.{name}")
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err), path) from err


def _plain(v):
    if dataclasses.is_dataclass(v) and not isinstance(v, type):
        return {f.name: _plain(getattr(v, f.name)) for f in dataclasses.fields(v)}
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def config_to_mapping(cfg) -> dict:
    """JSON-ready dict of a config dataclass; the inverse of :func:`config_from_mapping`."""
    return {f.name: _plain(getattr(cfg, f.name)) for f in dataclasses.fields(cfg)}


def require(cond: bool, message: str, field: str):
    if not cond:
        raise ConfigError(message, field)


@dataclass
class LinearProblem:
    model: Lssm
    bc: BoundaryCond
    attachments: list


@dataclass
class NonlinearProblem:
    linearize: Callable  # (x, u) -> (Lssm, BoundaryCond)
    attachments: list
    x_init: np.ndarray
    u_init: np.ndarray


@dataclass
class Outcome:
    """What a scenario run produces.

    ``u``, ``y`` and ``x`` are the user-facing signals (one row per step,
    ``x`` without the initial state).  ``metrics`` holds scalar checks for
    the run summary; ``bands`` maps an output column to ``(lower, upper)``
    arrays for plotting; ``levels`` lists discrete input levels.
    """

    kind: str
    u: np.ndarray
    y: np.ndarray
    x: np.ndarray
    u_names: list
    y_names: list
    x_names: list
    result: IakeResult
    metrics: dict = field(default_factory=dict)
    bands: dict = field(default_factory=dict)
    levels: Sequence[float] = ()
    path: Optional[np.ndarray] = None  # (K, 2) planar trajectory, if any
    obstacles: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def iterations(self) -> int:
        return self.result.iterations

    @property
    def converged(self) -> bool:
        return self.result.converged


def solve_problem(problem, iake: IakeConfig, callback=None) -> tuple[IakeResult, float]:
    t0 = time.perf_counter()
    if isinstance(problem, LinearProblem):
        res = iake_solve(problem.model, problem.bc, problem.attachments, iake, callback)
    else:
        res = relinearized_solve(problem.linearize, problem.attachments, problem.x_init,
                                 problem.u_init, iake, callback)
    return res, time.perf_counter() - t0


def band_violation(y, lo, hi) -> float:
    """Largest distance of ``y`` outside ``[lo, hi]`` (zero if inside)."""
    y, lo, hi = (np.asarray(v, float) for v in (y, lo, hi))
    return float(np.max(np.maximum(lo - y, 0.0) + np.maximum(y - hi, 0.0), initial=0.0))


def level_distance(u, levels) -> np.ndarray:
    """Distance of every entry of ``u`` to the nearest of ``levels``."""
    u = np.asarray(u, float)
    lv = np.asarray(levels, float)
    return np.min(np.abs(u[..., None] - lv), axis=-1)


def pinned_attachments(target: str, K: int, index: int, spec) -> list:
    return [PriorAttachment(target, k, index, spec) for k in range(K)]
