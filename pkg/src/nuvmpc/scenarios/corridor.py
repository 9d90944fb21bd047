"""Keep the output of a triple integrator inside a corridor under five input regimes.

Versions:
    1. quadratic input penalty (fixed Gaussian prior),
    2. lower bound on the input increment,
    3. sparse input,
    4. three-level input {-1, 0, 1},
    5. sparse input increment.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..iake import IakeConfig
from ..lssm import (
    BoundaryCond,
    FixedGaussian,
    Lssm,
    PriorAttachment,
    augment_derivative_input,
    augment_m_level_input,
)
from ..priors import NuvKind, NuvSpec, expand_m_level
from .base import LinearProblem, Outcome, band_violation, level_distance, require, solve_problem

COR_A = np.array([[1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.5, 1.0, 1.0]])
COR_B = 0.0015 * np.array([[1.0], [0.5], [1.0 / 3.0]])
COR_C = np.array([[0.0, 0.0, 1.0]])

# (start, stop, lower, upper) on the output, relative to a zero target.
DEFAULT_SEGMENTS = (
    (0, 30, -0.5, 0.5),
    (30, 80, -0.5, 4.0),
    (80, 110, 2.0, 3.0),
    (110, 140, -1.0, 3.0),
    (140, 175, -1.0, 0.0),
)


@dataclass
class CorridorConfig:
    version: int = 1
    K: int = 175
    gamma_out: float = 10.0
    v_in: float = 10.0  # version 1 input variance
    du_min: float = -0.03  # version 2 increment bound
    gamma_in: float = 10.0  # version 2 slope
    levels: tuple = (-1.0, 0.0, 1.0)  # version 4
    u_state_var: float = 10.0  # prior variance of the initial input in versions 2 and 5
    segments: tuple = DEFAULT_SEGMENTS
    target: Optional[list] = None  # y-breve; bounds are relative to it
    sparsity_rel_tol: float = 1e-3  # "nonzero" means above this fraction of the peak

    def __post_init__(self):
        require(self.version in (1, 2, 3, 4, 5), f"unknown version {self.version}", "params.version")
        require(self.K >= 1, "must be at least 1", "params.K")
        require(self.gamma_out > 0, "must be positive", "params.gamma_out")
        require(self.v_in > 0, "must be positive", "params.v_in")
        require(self.gamma_in > 0, "must be positive", "params.gamma_in")
        require(self.u_state_var > 0, "must be positive", "params.u_state_var")
        self.segments = tuple(tuple(s) for s in self.segments)
        covered = np.zeros(self.K, bool)
        for i, seg in enumerate(self.segments):
            require(len(seg) == 4, "each segment is [start, stop, lower, upper]",
                    f"params.segments[{i}]")
            s, e, lo, hi = seg
            require(0 <= s < e <= self.K, f"range [{s}, {e}) outside horizon {self.K}",
                    f"params.segments[{i}]")
            require(lo < hi, "lower bound must be below upper bound", f"params.segments[{i}]")
            covered[int(s):int(e)] = True
        require(bool(covered.all()), "segments must cover every step", "params.segments")
        if self.target is not None:
            require(len(self.target) == self.K, f"needs {self.K} values", "params.target")

    def bounds(self):
        """Absolute output bounds ``(lower, upper)`` per step."""
        lo = np.empty(self.K)
        hi = np.empty(self.K)
        for s, e, a, b in self.segments:
            lo[int(s):int(e)] = a
            hi[int(s):int(e)] = b
        tgt = np.zeros(self.K) if self.target is None else np.asarray(self.target, float)
        return lo + tgt, hi + tgt


def corridor_model(K: int) -> Lssm:
    return Lssm.constant(COR_A, COR_B, COR_C, K)


def build_corridor(cfg: CorridorConfig = CorridorConfig()) -> LinearProblem:
    K = cfg.K
    lo, hi = cfg.bounds()
    base = corridor_model(K)
    out = [PriorAttachment("output", k, 0, NuvSpec(NuvKind.BOX, gamma=cfg.gamma_out,
                                                   a=float(lo[k]), b=float(hi[k])))
           for k in range(K)]
    x0 = np.zeros(3)
    bc = BoundaryCond(x0, 1e-12 * np.eye(3))
    v = cfg.version
    if v in (2, 5):
        model = augment_derivative_input(base)
        cov = 1e-12 * np.eye(4)
        cov[0, 0] = cfg.u_state_var
        bc = BoundaryCond(np.zeros(4), cov)
        spec = NuvSpec(NuvKind.HALF_SPACE_LOWER, a=cfg.du_min, gamma=cfg.gamma_in) if v == 2 \
            else NuvSpec(NuvKind.PLAIN)
        inp = [PriorAttachment("input", k, 0, spec) for k in range(K)]
    elif v == 4:
        ex = expand_m_level(cfg.levels)
        model = augment_m_level_input(base, ex.coeffs, ex.offset)
        inits = ex.initial_params()
        inp = [PriorAttachment("input", k, j, ex.binary_spec(em=True), inits[j])
               for k in range(K) for j in range(ex.n_binaries)]
    else:
        model = base
        spec = FixedGaussian(0.0, cfg.v_in) if v == 1 else NuvSpec(NuvKind.PLAIN)
        inp = [PriorAttachment("input", k, 0, spec) for k in range(K)]
    return LinearProblem(model, bc, inp + out)


def applied_input(cfg: CorridorConfig, res) -> np.ndarray:
    """The physical input sequence ``u`` (K,) recovered from the solved model."""
    if cfg.version in (2, 5):
        # u is state 0; the state at step k drives x[k+1].
        return res.x_hat[:-1, 0]
    if cfg.version == 4:
        ex = expand_m_level(cfg.levels)
        return ex.combine(res.u_hat)
    return res.u_hat[:, 0]


def run_corridor(cfg: CorridorConfig = CorridorConfig(), iake: IakeConfig = IakeConfig(),
                 callback=None) -> Outcome:
    prob = build_corridor(cfg)
    res, wall = solve_problem(prob, iake, callback)
    lo, hi = cfg.bounds()
    u = applied_input(cfg, res)
    y = res.y_hat[:, 0]
    metrics = {"corridor_violation": band_violation(y, lo, hi)}
    cols = [u]
    names = ["u"]
    if cfg.version in (2, 5):
        du = res.u_hat[:, 0]
        cols.append(du)
        names.append("du")
        if cfg.version == 2:
            metrics["min_du"] = float(du.min())
        else:
            thr = cfg.sparsity_rel_tol * float(np.max(np.abs(du)))
            metrics["nonzero_du"] = int(np.sum(np.abs(du) > thr))
    if cfg.version == 3:
        thr = cfg.sparsity_rel_tol * float(np.max(np.abs(u)))
        metrics["nonzero_u"] = int(np.sum(np.abs(u) > thr))
    if cfg.version == 4:
        metrics["max_level_distance"] = float(level_distance(u, cfg.levels).max())
    state_names = (["u_state"] if cfg.version in (2, 5) else []) + ["x1", "x2", "x3"]
    return Outcome(f"corridor_v{cfg.version}", np.column_stack(cols),
                   np.column_stack([y, lo, hi]), res.x_hat[1:], names, ["y", "lower", "upper"],
                   state_names, res, metrics, bands={"y": (lo, hi)},
                   levels=cfg.levels if cfg.version == 4 else (), wall_time=wall)
