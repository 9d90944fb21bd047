"""Steer a falling point mass through double slits with binary flaps.

At a slit step ``k`` the augmented output ``y~ = position + s_k`` is boxed to
``[a_k, b_k]`` while the selector ``s_k`` is binarized to ``{0, d_k}``; the
position therefore lies in ``[a_k, b_k]`` or in ``[a_k - d_k, b_k - d_k]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..iake import IakeConfig
from ..lssm import BoundaryCond, FixedGaussian, Lssm, PriorAttachment, augment_output_selector
from ..priors import NuvKind, NuvSpec
from .base import LinearProblem, Outcome, level_distance, require, solve_problem

# (step, a, b, d): upper slit [a, b], lower slit [a - d, b - d].
DEFAULT_SLITS = (
    (80, 1.0, 2.0, 3.0),
    (160, 2.0, 3.0, 4.5),
    (240, 0.5, 1.5, 3.0),
)


@dataclass
class FlappyConfig:
    K: int = 300
    mass: float = 1.0
    T: float = 0.1
    g: float = 0.2
    gamma: float = 100.0
    x0: tuple = (0.0, 0.0)
    slits: tuple = DEFAULT_SLITS

    def __post_init__(self):
        require(self.K >= 1, "must be at least 1", "params.K")
        for name in ("mass", "T", "gamma"):
            require(getattr(self, name) > 0, "must be positive", f"params.{name}")
        require(len(self.x0) == 2, "needs position and velocity", "params.x0")
        self.slits = tuple(tuple(s) for s in self.slits)
        seen = set()
        for i, s in enumerate(self.slits):
            require(len(s) == 4, "each slit is [step, a, b, d]", f"params.slits[{i}]")
            k, a, b, d = s
            require(int(k) == k and 0 <= k < self.K, f"slit step {k} outside horizon {self.K}",
                    f"params.slits[{i}]")
            require(a < b, "needs a < b", f"params.slits[{i}]")
            require(d > b - a, "slits overlap (need d > b - a)", f"params.slits[{i}]")
            require(k not in seen, "duplicate slit step", f"params.slits[{i}]")
            seen.add(k)


def flappy_model(cfg: FlappyConfig) -> Lssm:
    A = np.array([[1.0, cfg.T], [0.0, 1.0]])
    B = np.array([[0.0], [1.0 / cfg.mass]])
    C = np.array([[1.0, 0.0]])
    c = np.array([0.0, -cfg.T * cfg.g])
    return Lssm.constant(A, B, C, cfg.K, c=c)


def build_flappy(cfg: FlappyConfig = FlappyConfig()) -> LinearProblem:
    K = cfg.K
    steps = [int(s[0]) for s in cfg.slits]
    model = augment_output_selector(flappy_model(cfg), steps)
    atts = [PriorAttachment("input", k, 0, NuvSpec(NuvKind.BINARIZING_EM, a=0.0, b=1.0))
            for k in range(K)]
    slit_at = {int(s[0]): s for s in cfg.slits}
    for k in range(K):
        if k in slit_at:
            _, a, b, d = slit_at[k]
            atts.append(PriorAttachment("input", k, 1, NuvSpec(NuvKind.BINARIZING_EM, a=0.0, b=float(d))))
            atts.append(PriorAttachment("output", k, 0, NuvSpec(NuvKind.BOX, gamma=cfg.gamma,
                                                                a=float(a), b=float(b))))
        else:
            # The selector is unused here; a fixed prior keeps it proper.
            atts.append(PriorAttachment("input", k, 1, FixedGaussian(0.0, 1.0)))
    x0 = np.array([*cfg.x0, 0.0])
    bc = BoundaryCond(x0, 1e-12 * np.eye(3))
    return LinearProblem(model, bc, atts)


def slit_membership(cfg: FlappyConfig, position: np.ndarray, tol: float = 1e-6):
    """Per slit: ``(in_upper, in_lower)`` for the physical position."""
    out = []
    for k, a, b, d in cfg.slits:
        p = position[int(k)]
        out.append((a - tol <= p <= b + tol, a - d - tol <= p <= b - d + tol))
    return out


def run_flappy(cfg: FlappyConfig = FlappyConfig(), iake: IakeConfig = IakeConfig(),
               callback=None) -> Outcome:
    prob = build_flappy(cfg)
    res, wall = solve_problem(prob, iake, callback)
    pos = res.x_hat[1:, 0]
    u = res.u_hat[:, 0]
    member = slit_membership(cfg, pos)
    lo = np.full(cfg.K, np.nan)
    hi = np.full(cfg.K, np.nan)
    for k, a, b, d in cfg.slits:
        k = int(k)
        lower = bool(res.u_hat[k, 1] > 0.5 * d)
        lo[k], hi[k] = (a - d, b - d) if lower else (a, b)
    metrics = {
        "max_level_distance": float(level_distance(u, (0.0, 1.0)).max()),
        "slits_passed_exactly_once": int(sum(up != low for up, low in member)),
        "n_slits": len(cfg.slits),
        "flaps": int(np.sum(u > 0.5)),
    }
    return Outcome("flappy", res.u_hat, np.column_stack([pos, res.y_hat[:, 0]]),
                   res.x_hat[1:, :2], ["u", "selector"], ["position", "augmented"],
                   ["position", "velocity"], res, metrics, bands={"position": (lo, hi)},
                   levels=(0.0, 1.0), wall_time=wall)
