"""Binary-input digital-to-analog conversion through a third-order low-pass filter."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..iake import IakeConfig, IakeResult, iake_solve
from ..lssm import BoundaryCond, FixedGaussian, Lssm, PriorAttachment
from ..oracles import exhaustive_binary
from ..priors import NuvKind, NuvSpec
from .base import LinearProblem, Outcome, level_distance, require, solve_problem

# Discretized filter (sampling interval 3 ms).
DAC_A = np.array([
    [0.7967, -6.3978, -94.2123],
    [0.0027, 0.9902, -0.1467],
    [0.0, 0.0030, 0.9999],
])
DAC_B = np.array([[0.0027], [0.0], [0.0]])
DAC_C = np.array([[0.0, 0.0, 35037.9]])
DAC_T = 0.003


def dc_gain() -> float:
    return (DAC_C @ np.linalg.solve(np.eye(3) - DAC_A, DAC_B)).item()


def steady_state(u: float) -> np.ndarray:
    """State reached under the constant input ``u``."""
    return np.linalg.solve(np.eye(3) - DAC_A, DAC_B[:, 0] * u)


def default_target(K: int, T: float = DAC_T) -> np.ndarray:
    """In-band sinusoid for the first half, then a step with an out-of-band ripple.

    Values are scaled by the filter's DC gain so that the in-band part is
    reachable with a {0, 1} input.
    """
    t = np.arange(1, K + 1) * T
    g = dc_gain()
    y = g * (0.5 + 0.3 * np.sin(2 * np.pi * 3.0 * t))
    half = K // 2
    y[half:] = g * (0.65 + 0.2 * np.sin(2 * np.pi * 40.0 * t[half:]))
    return y


@dataclass
class DacConfig:
    K: int = 450
    v_out: float = 0.045
    levels: tuple = (0.0, 1.0)
    target: Optional[list] = None
    x0: Optional[list] = None  # default: steady state of the level midpoint
    # receding horizon: solve this many steps ahead, commit the first input, slide by one
    online_horizon: Optional[int] = None

    def __post_init__(self):
        require(self.K >= 1, "must be at least 1", "params.K")
        require(self.v_out > 0, "must be positive", "params.v_out")
        self.levels = tuple(float(v) for v in self.levels)
        require(len(self.levels) == 2 and self.levels[0] < self.levels[1],
                "needs two increasing levels", "params.levels")
        if self.target is not None:
            require(len(self.target) == self.K, f"needs {self.K} values", "params.target")
        if self.x0 is not None:
            require(len(self.x0) == 3, "needs 3 values", "params.x0")
        if self.online_horizon is not None:
            require(self.online_horizon >= 1, "must be at least 1", "params.online_horizon")

    def target_array(self) -> np.ndarray:
        return default_target(self.K) if self.target is None else np.asarray(self.target, float)

    def x0_array(self) -> np.ndarray:
        if self.x0 is not None:
            return np.asarray(self.x0, float)
        return steady_state(0.5 * (self.levels[0] + self.levels[1]))


def dac_model(K: int) -> Lssm:
    return Lssm.constant(DAC_A, DAC_B, DAC_C, K)


def build_dac(cfg: DacConfig = DacConfig()) -> LinearProblem:
    K = cfg.K
    target = cfg.target_array()
    a, b = cfg.levels
    spec = NuvSpec(NuvKind.BINARIZING_EM, a=a, b=b)
    atts = [PriorAttachment("input", k, 0, spec) for k in range(K)]
    atts += [PriorAttachment("output", k, 0, FixedGaussian(float(target[k]), cfg.v_out))
             for k in range(K)]
    bc = BoundaryCond(cfg.x0_array(), 1e-12 * np.eye(3))
    return LinearProblem(dac_model(K), bc, atts)


def quantize(u, levels=(0.0, 1.0)) -> np.ndarray:
    lv = np.asarray(levels, float)
    return lv[np.argmin(np.abs(np.asarray(u, float)[..., None] - lv), axis=-1)]


def binary_mse(model: Lssm, x0, u, target) -> float:
    """Mean squared tracking error of the (already binary) input ``u``."""
    _, y = model.simulate(np.asarray(u, float).reshape(-1, 1), x0)
    return float(np.mean((y[:, 0] - np.asarray(target)) ** 2))


def exhaustive_binary_oracle(model: Lssm, x0, target, levels=(0.0, 1.0), max_K: int = 14):
    """Globally optimal binary input sequence by enumeration."""
    return exhaustive_binary(model, x0, target, levels, max_K)


def _online(cfg: DacConfig, iake: IakeConfig, callback=None):
    """Receding-horizon run; returns an :class:`IakeResult` of the committed inputs."""
    K, H = cfg.K, cfg.online_horizon
    target = cfg.target_array()
    x = np.empty((K + 1, 3))
    x[0] = cfg.x0_array()
    u = np.empty((K, 1))
    total, conv = 0, True
    for k in range(K):
        n = min(H, K - k)
        win = DacConfig(K=n, v_out=cfg.v_out, levels=cfg.levels, target=list(target[k:k + n]),
                        x0=list(x[k]))
        prob = build_dac(win)
        res = iake_solve(prob.model, prob.bc, prob.attachments, iake)
        total += res.iterations
        conv &= res.converged
        u[k, 0] = quantize(res.u_hat[0, 0], cfg.levels)
        x[k + 1] = DAC_A @ x[k] + DAC_B[:, 0] * u[k, 0]
        if callback is not None:
            callback(k + 1, float(not res.converged))
    y = x[1:] @ DAC_C.T
    return IakeResult(u, y, x, total, conv, model=dac_model(K))


def run_dac(cfg: DacConfig = DacConfig(), iake: IakeConfig = IakeConfig(), callback=None) -> Outcome:
    prob = build_dac(cfg)
    if cfg.online_horizon is None:
        res, wall = solve_problem(prob, iake, callback)
    else:
        t0 = time.perf_counter()
        res = _online(cfg, iake, callback)
        wall = time.perf_counter() - t0
    target = cfg.target_array()
    dist = level_distance(res.u_hat[:, 0], cfg.levels)
    uq = quantize(res.u_hat[:, 0], cfg.levels)
    metrics = {
        "max_level_distance": float(dist.max()),
        "mse": float(np.mean((res.y_hat[:, 0] - target) ** 2)),
        "mse_quantized": binary_mse(prob.model, prob.bc.x0_mean, uq, target),
    }
    y = np.column_stack([res.y_hat[:, 0], target])
    return Outcome("dac", res.u_hat, y, res.x_hat[1:], ["u"], ["y", "target"],
                   ["x1", "x2", "x3"], res, metrics, levels=cfg.levels, wall_time=wall)


def random_band_limited_target(rng: np.random.Generator, K: int, n_tones: int = 3,
                               f_max: float = 10.0) -> np.ndarray:
    """Sum of a few random in-band sinusoids around mid-scale."""
    t = np.arange(1, K + 1) * DAC_T
    g = dc_gain()
    y = np.full(K, 0.5)
    for _ in range(n_tones):
        f = rng.uniform(0.5, f_max)
        y += rng.uniform(0.05, 0.15) * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    return g * y


def random_initial_state(rng: np.random.Generator, preroll: int = 60) -> np.ndarray:
    """State after driving the filter with random bits from the mid-scale steady state."""
    m = dac_model(preroll)
    x, _ = m.simulate(rng.integers(0, 2, size=(preroll, 1)).astype(float), steady_state(0.5))
    return x[-1]


def short_horizon_comparison(seed: int, n_runs: int = 20, K: int = 8, v_out: float = 0.045,
                             iake: IakeConfig = IakeConfig()):
    """IAKE against exhaustive search on random short instances.

    Returns a list of ``(mse_iake, mse_opt)``; the IAKE input is quantized to
    the nearest level before simulating, so both numbers refer to binary inputs.
    """
    rng = np.random.default_rng(seed)
    model = dac_model(K)
    rows = []
    for _ in range(n_runs):
        x0 = random_initial_state(rng)
        target = random_band_limited_target(rng, K)
        cfg = DacConfig(K=K, v_out=v_out, target=list(target), x0=list(x0))
        prob = build_dac(cfg)
        res = iake_solve(prob.model, prob.bc, prob.attachments, iake)
        mse_iake = binary_mse(model, x0, quantize(res.u_hat[:, 0]), target)
        _, mse_opt = exhaustive_binary_oracle(model, x0, target)
        rows.append((mse_iake, float(mse_opt)))
    return rows
