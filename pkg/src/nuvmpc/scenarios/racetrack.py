"""Minimal-time driving along a track in curvilinear, arc-length-indexed coordinates.

State ``x = [z, theta, v, a, delta, t]`` (lateral offset, relative heading,
speed, longitudinal acceleration, steering angle, elapsed time), input
``u = [delta_dot, a_dot]``.  With the arc length ``s`` as independent variable::

    dz/ds     = (1 - kappa z) tan(theta)
    dtheta/ds = (1 - kappa z) tan(delta) / (l cos(theta)) - kappa
    dv/ds     = (1 - kappa z) a / (v cos(theta))
    da/ds     = (1 - kappa z) a_dot / (v cos(theta))
    ddelta/ds = (1 - kappa z) delta_dot / (v cos(theta))
    dt/ds     = (1 - kappa z) / (v cos(theta))

Outputs ``[z, a, delta, a_tot^2, t]`` with
``a_tot^2 = a^2 + psi v^4 tan(delta)^2 / l^2``; the first four carry box
priors, ``t`` carries a zero-mean Gaussian at the final sample only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..iake import IakeConfig
from ..lssm import BoundaryCond, FixedGaussian, LinearizationError, Lssm, PriorAttachment
from ..priors import NuvKind, NuvSpec
from .base import ConfigError, NonlinearProblem, Outcome, band_violation, require, solve_problem

N_STATE = 6
Z, TH, V, ACC, DEL, TIME = range(N_STATE)
OUT_NAMES = ["z", "a", "delta", "a_tot2", "t"]


def hairpin_track(K: int, straight: float = 0.15, turn: float = 0.1):
    """Curvature samples of a stadium-shaped track: straight, hairpin, straight, hairpin.

    Each hairpin turns by pi with a raised-cosine curvature profile, so the
    curvature is continuous and peaks at ``2 pi / turn``.  The default
    dimensions are small because the box slopes are weak: with
    ``gamma = 1e-8`` on the total acceleration, the time penalty only loses
    against the box when the lap time itself is short.
    Returns ``(kappa (K,), spatial step)``.
    """
    length = 2 * (straight + turn)
    ds = length / K
    s = (np.arange(K) + 0.5) * ds
    kappa = np.zeros(K)
    for start in (straight, 2 * straight + turn):
        inside = (s >= start) & (s < start + turn)
        phase = (s[inside] - start) / turn
        kappa[inside] = (2 * np.pi / turn) * 0.5 * (1 - np.cos(2 * np.pi * phase))
    return kappa, ds


def centerline_xy(kappa, ds):
    """Cartesian centerline (K+1, 2) obtained by integrating the curvature."""
    heading = np.concatenate([[0.0], np.cumsum(kappa * ds)])
    mid = 0.5 * (heading[1:] + heading[:-1])
    steps = ds * np.column_stack([np.cos(mid), np.sin(mid)])
    return np.vstack([[0.0, 0.0], np.cumsum(steps, axis=0)])


@dataclass
class RaceTrackConfig:
    K: int = 1000
    wheelbase: float = 0.005
    psi: float = 25.0
    z_max: float = 0.006
    gamma_z: float = 0.005
    a_max: float = 1.0
    gamma_a: float = 0.001
    delta_max: float = 0.35
    gamma_delta: float = 0.001
    atot2_max: float = 150.0
    gamma_atot2: float = 1e-8
    v_time: float = 500.0
    v_in: float = 1e8
    v_start: float = 0.15
    v_init: float = 0.15  # speed of the centerline initialization
    straight: float = 0.15
    turn: float = 0.1
    kappa: Optional[list] = None  # user curvature samples (length K) override the default track
    track_length: Optional[float] = None  # required with ``kappa``

    def __post_init__(self):
        require(self.K >= 2, "must be at least 2", "params.K")
        for name in ("wheelbase", "psi", "z_max", "gamma_z", "a_max", "gamma_a", "delta_max",
                     "gamma_delta", "atot2_max", "gamma_atot2", "v_time", "v_in", "v_start",
                     "v_init", "straight", "turn"):
            require(getattr(self, name) > 0, "must be positive", f"params.{name}")
        if self.kappa is not None:
            require(len(self.kappa) == self.K, f"needs {self.K} values", "params.kappa")
            require(self.track_length is not None and self.track_length > 0,
                    "a positive track_length is required with kappa", "params.track_length")
        k, _ = self.track()
        require(bool(np.all(np.abs(k) * self.z_max < 1)),
                "curvature times lateral bound reaches 1", "params.kappa")

    def track(self):
        if self.kappa is not None:
            return np.asarray(self.kappa, float), self.track_length / self.K
        return hairpin_track(self.K, self.straight, self.turn)


# -- vectorized model ------------------------------------------------------------


def dynamics(x, u, kappa, wheelbase):
    """``f_s`` for arrays of states (..., 6), inputs (..., 2) and curvatures (...)."""
    z, th, v, a, de = (x[..., i] for i in range(5))
    g = (1 - kappa * z) / (v * np.cos(th))
    f = np.empty(x.shape)
    f[..., Z] = (1 - kappa * z) * np.tan(th)
    f[..., TH] = (1 - kappa * z) * np.tan(de) / (wheelbase * np.cos(th)) - kappa
    f[..., V] = g * a
    f[..., ACC] = g * u[..., 1]
    f[..., DEL] = g * u[..., 0]
    f[..., TIME] = g
    return f


def dynamics_jacobians(x, u, kappa, wheelbase):
    """``(df/dx (..., 6, 6), df/du (..., 6, 2))``."""
    z, th, v, a, de = (x[..., i] for i in range(5))
    w = 1 - kappa * z
    c, s = np.cos(th), np.sin(th)
    g = w / (v * c)
    g_z = -kappa / (v * c)
    g_th = g * s / c
    g_v = -g / v
    J = np.zeros(x.shape[:-1] + (N_STATE, N_STATE))
    J[..., Z, Z] = -kappa * np.tan(th)
    J[..., Z, TH] = w / c ** 2
    td = np.tan(de)
    J[..., TH, Z] = -kappa * td / (wheelbase * c)
    J[..., TH, TH] = w * td * s / (wheelbase * c ** 2)
    J[..., TH, DEL] = w / (wheelbase * c * np.cos(de) ** 2)
    for row, mult in ((V, a), (ACC, u[..., 1]), (DEL, u[..., 0]), (TIME, 1.0)):
        J[..., row, Z] = g_z * mult
        J[..., row, TH] = g_th * mult
        J[..., row, V] = g_v * mult
    J[..., V, ACC] = g
    Ju = np.zeros(x.shape[:-1] + (N_STATE, 2))
    Ju[..., DEL, 0] = g
    Ju[..., ACC, 1] = g
    return J, Ju


def outputs(x, wheelbase, psi):
    """``[z, a, delta, a_tot^2, t]`` for states (..., 6)."""
    v, a, de = x[..., V], x[..., ACC], x[..., DEL]
    lat = v ** 2 * np.tan(de) / wheelbase
    return np.stack([x[..., Z], a, de, a ** 2 + psi * lat ** 2, x[..., TIME]], axis=-1)


def output_jacobian(x, wheelbase, psi):
    v, a, de = x[..., V], x[..., ACC], x[..., DEL]
    td = np.tan(de)
    C = np.zeros(x.shape[:-1] + (5, N_STATE))
    C[..., 0, Z] = 1.0
    C[..., 1, ACC] = 1.0
    C[..., 2, DEL] = 1.0
    C[..., 3, ACC] = 2 * a
    C[..., 3, V] = 4 * psi * v ** 3 * td ** 2 / wheelbase ** 2
    C[..., 3, DEL] = 2 * psi * v ** 4 * td / (wheelbase ** 2 * np.cos(de) ** 2)
    C[..., 4, TIME] = 1.0
    return C


def linearize_track(x_star, u_star, kappa, ds, wheelbase, psi) -> Lssm:
    """Euler-discretized affine model around the trajectory ``(x*, u*)``."""
    K = kappa.size
    xs = x_star[:-1]
    if np.any(xs[:, V] <= 0):
        raise LinearizationError("speed must stay positive", int(np.argmax(xs[:, V] <= 0)))
    if np.any(np.abs(kappa * xs[:, Z]) >= 1):
        raise LinearizationError("lateral offset reached the curvature radius",
                                 int(np.argmax(np.abs(kappa * xs[:, Z]) >= 1)))
    f = dynamics(xs, u_star, kappa, wheelbase)
    Jx, Ju = dynamics_jacobians(xs, u_star, kappa, wheelbase)
    A = np.eye(N_STATE)[None] + ds * Jx
    B = ds * Ju
    c = xs + ds * f - np.einsum("kij,kj->ki", A, xs) - np.einsum("kij,kj->ki", B, u_star)
    xn = x_star[1:]
    C = output_jacobian(xn, wheelbase, psi)
    d = outputs(xn, wheelbase, psi) - np.einsum("khn,kn->kh", C, xn)
    for name, arr in (("A", A), ("B", B), ("c", c), ("C", C), ("d", d)):
        if not np.all(np.isfinite(arr)):
            raise LinearizationError(f"non-finite {name} in track linearization")
    return Lssm(A, B, C, c, d)


def centerline_init(cfg: RaceTrackConfig):
    """Constant-speed trajectory on the centerline: ``(x (K+1, 6), u (K, 2))``."""
    kappa, ds = cfg.track()
    K = cfg.K
    v = cfg.v_init
    x = np.zeros((K + 1, N_STATE))
    x[:, V] = v
    # step k steers with the angle stored at node k
    kap_node = np.concatenate([kappa, kappa[-1:]])
    x[:, DEL] = np.arctan(cfg.wheelbase * kap_node)
    x[:, TIME] = np.arange(K + 1) * ds / v
    u = np.zeros((K, 2))
    u[:, 0] = np.diff(x[:, DEL]) / ds * v  # delta_dot = d delta/ds * ds/dt
    x[0, V] = cfg.v_start
    return x, u


def build_racetrack(cfg: RaceTrackConfig = RaceTrackConfig()) -> NonlinearProblem:
    K = cfg.K
    kappa, ds = cfg.track()
    x_init, u_init = centerline_init(cfg)
    x0 = x_init[0].copy()
    bc = BoundaryCond(x0, 1e-12 * np.eye(N_STATE))

    def linearize(x, u):
        return linearize_track(x, u, kappa, ds, cfg.wheelbase, cfg.psi), bc

    boxes = [
        (0, -cfg.z_max, cfg.z_max, cfg.gamma_z),
        (1, -cfg.a_max, cfg.a_max, cfg.gamma_a),
        (2, -cfg.delta_max, cfg.delta_max, cfg.gamma_delta),
        (3, 0.0, cfg.atot2_max, cfg.gamma_atot2),
    ]
    atts = [PriorAttachment("input", k, i, FixedGaussian(0.0, cfg.v_in))
            for k in range(K) for i in range(2)]
    for idx, lo, hi, gam in boxes:
        spec = NuvSpec(NuvKind.BOX, gamma=gam, a=lo, b=hi)
        atts += [PriorAttachment("output", k, idx, spec) for k in range(K)]
    # Time penalty: the output row selecting t at the last step is t at x[K].
    atts.append(PriorAttachment("output", K - 1, 4, FixedGaussian(0.0, cfg.v_time)))
    return NonlinearProblem(linearize, atts, x_init, u_init)


def simulate_track(cfg: RaceTrackConfig, x0, u):
    """Nonlinear Euler rollout of the input sequence ``u`` (K, 2)."""
    kappa, ds = cfg.track()
    x = np.empty((cfg.K + 1, N_STATE))
    x[0] = x0
    for k in range(cfg.K):
        x[k + 1] = x[k] + ds * dynamics(x[k], u[k], kappa[k], cfg.wheelbase)
    return x


def cartesian_path(cfg: RaceTrackConfig, z):
    """Planar positions of the lateral offsets ``z`` (K+1,) along the centerline."""
    kappa, ds = cfg.track()
    c = centerline_xy(kappa, ds)
    tang = np.gradient(c, axis=0)
    tang /= np.linalg.norm(tang, axis=1, keepdims=True)
    normal = np.column_stack([-tang[:, 1], tang[:, 0]])
    return c + z[:, None] * normal


def run_racetrack(cfg: RaceTrackConfig = RaceTrackConfig(), iake: IakeConfig = IakeConfig(),
                  callback=None) -> Outcome:
    prob = build_racetrack(cfg)
    res, wall = solve_problem(prob, iake, callback)
    kappa, ds = cfg.track()
    x = res.x_hat
    y = outputs(x[1:], cfg.wheelbase, cfg.psi)
    spans = {
        "z": (0, -cfg.z_max, cfg.z_max),
        "a": (1, -cfg.a_max, cfg.a_max),
        "delta": (2, -cfg.delta_max, cfg.delta_max),
        "a_tot2": (3, 0.0, cfg.atot2_max),
    }
    metrics = {}
    bands = {}
    for name, (i, lo, hi) in spans.items():
        metrics[f"{name}_violation_rel"] = band_violation(y[:, i], lo, hi) / (hi - lo)
        bands[name] = (np.full(cfg.K, lo), np.full(cfg.K, hi))
    sharp = int(np.argmax(np.abs(kappa)))
    metrics.update({
        "final_time": float(x[-1, TIME]),
        "centerline_time": float(ds * cfg.K / cfg.v_init),
        "speed_at_sharpest": float(x[sharp + 1, V]),
        "mean_speed": float(np.mean(x[1:, V])),
        "outer_iterations": res.outer_iterations,
    })
    path = cartesian_path(cfg, x[:, Z])[1:]
    return Outcome("racetrack", res.u_hat, y, x[1:], ["delta_dot", "a_dot"], OUT_NAMES,
                   ["z", "theta", "v", "a", "delta", "t"], res, metrics, bands=bands,
                   path=path, wall_time=wall)
