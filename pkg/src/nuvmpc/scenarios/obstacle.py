"""Minimum-energy planar trajectory around obstacles via repeated linearization.

Each obstacle contributes a scalar output ``f(y_k)`` (a distance-like
function of the position) with a lower half-space prior ``f >= threshold``.
The output is linearized around the previous position estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..iake import IakeConfig
from ..lssm import BoundaryCond, FixedGaussian, Lssm, PriorAttachment
from ..mbf import GaussianPriors, smooth
from ..priors import NuvKind, NuvSpec, PriorParams
from .base import NonlinearProblem, Outcome, require, solve_problem

# Smooth-max exponent for rectangles.
RECT_P = 8.0


def _rotation(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, s], [-s, c]])


@dataclass(frozen=True)
class Obstacle:
    """``shape`` is ``circle`` (uses ``radius``), ``ellipse`` or ``rectangle``
    (use ``half_axes`` and ``angle``)."""

    center: tuple = (1.5, 1.5)
    shape: str = "circle"
    radius: float = 0.75
    half_axes: tuple = (1.0, 0.5)
    angle: float = 0.0

    def threshold(self) -> float:
        return self.radius if self.shape == "circle" else 1.0

    def value_and_grad(self, y):
        """``f(y)`` and its gradient; the set ``f < threshold`` is the obstacle."""
        d = np.asarray(y, float) - np.asarray(self.center, float)
        if self.shape == "circle":
            r = float(np.hypot(d[0], d[1]))
            if r < 1e-12:
                return 0.0, np.array([1.0, 0.0])
            return r, d / r
        R = _rotation(self.angle)
        h = np.asarray(self.half_axes, float)
        q = (R @ d) / h
        if self.shape == "ellipse":
            r = float(np.hypot(q[0], q[1]))
            if r < 1e-12:
                return 0.0, R.T @ (np.array([1.0, 0.0]) / h)
            return r, R.T @ ((q / r) / h)
        p = RECT_P
        aq = np.abs(q)
        s = float(np.sum(aq ** p))
        if s < 1e-300:
            return 0.0, R.T @ (np.array([1.0, 0.0]) / h)
        f = s ** (1.0 / p)
        dq = (aq / f) ** (p - 1) * np.sign(q)
        return f, R.T @ (dq / h)

    def value(self, y) -> float:
        return self.value_and_grad(y)[0]


@dataclass
class ObstacleConfig:
    K: int = 50
    T: float = 1.0
    gamma: float = 5.0
    v_in: float = 0.1
    start: tuple = (0.0, 0.0)
    goal: tuple = (3.0, 3.0)
    obstacles: list = field(default_factory=lambda: [{"center": [1.5, 1.5], "radius": 0.75}])
    bump: float = 0.1  # initial path offset that picks a side of symmetric obstacles
    boundary_var: float = 1e-12

    def __post_init__(self):
        require(self.K >= 2, "must be at least 2", "params.K")
        for name in ("T", "gamma", "v_in", "boundary_var"):
            require(getattr(self, name) > 0, "must be positive", f"params.{name}")
        require(len(self.start) == 2, "needs two coordinates", "params.start")
        require(len(self.goal) == 2, "needs two coordinates", "params.goal")
        objs = []
        for i, o in enumerate(self.obstacles):
            if isinstance(o, Obstacle):
                objs.append(o)
                continue
            require(isinstance(o, dict), "expected an object", f"params.obstacles[{i}]")
            unknown = set(o) - {"center", "shape", "radius", "half_axes", "angle"}
            require(not unknown, f"unknown field(s) {sorted(unknown)}", f"params.obstacles[{i}]")
            ob = Obstacle(tuple(o.get("center", (1.5, 1.5))), o.get("shape", "circle"),
                          float(o.get("radius", 0.75)), tuple(o.get("half_axes", (1.0, 0.5))),
                          float(o.get("angle", 0.0)))
            require(ob.shape in ("circle", "ellipse", "rectangle"),
                    f"unknown shape {ob.shape!r}", f"params.obstacles[{i}].shape")
            require(ob.radius >= 0, "must be nonnegative", f"params.obstacles[{i}].radius")
            require(min(ob.half_axes) > 0, "must be positive", f"params.obstacles[{i}].half_axes")
            objs.append(ob)
        self.obstacles = objs
        for i, ob in enumerate(objs):
            thr = ob.threshold()
            if thr > 0 and ob.value(self.start) < thr and ob.value(self.goal) < thr:
                raise_infeasible(i)

    def obstacle_dicts(self):
        return [{"center": list(o.center), "shape": o.shape, "radius": o.radius,
                 "half_axes": list(o.half_axes), "angle": o.angle} for o in self.obstacles]


def raise_infeasible(i):
    from .base import ConfigError

    raise ConfigError("obstacle covers both endpoints", f"params.obstacles[{i}]")


def obstacle_matrices(T: float):
    """State ``[v1, p1, v2, p2]``, input acceleration, output position."""
    A = np.array([[1, 0, 0, 0], [T, 1, 0, 0], [0, 0, 1, 0], [0, 0, T, 1]], float)
    B = np.array([[T, 0], [0, 0], [0, T], [0, 0]], float)
    C = np.array([[0, 1, 0, 0], [0, 0, 0, 1]], float)
    return A, B, C


def boundary(cfg: ObstacleConfig) -> BoundaryCond:
    x0 = np.array([0.0, cfg.start[0], 0.0, cfg.start[1]])
    xK = np.array([0.0, cfg.goal[0], 0.0, cfg.goal[1]])
    return BoundaryCond.pinned(x0, xK, cfg.boundary_var)


def unconstrained_problem(cfg: ObstacleConfig):
    """The same planning problem without obstacles (a single linear smoothing)."""
    A, B, C = obstacle_matrices(cfg.T)
    model = Lssm.constant(A, B, C, cfg.K)
    atts = [PriorAttachment("input", k, i, FixedGaussian(0.0, cfg.v_in))
            for k in range(cfg.K) for i in range(2)]
    return model, boundary(cfg), atts


def unconstrained_plan(cfg: ObstacleConfig):
    """States (K+1, 4) and inputs (K, 2) of the obstacle-free minimum-energy plan."""
    model, bc, _ = unconstrained_problem(cfg)
    pri = GaussianPriors.empty(model, u_var=cfg.v_in)
    res = smooth(model, bc, pri, variances=False)
    return res.x_mean, res.u_mean


def initial_path(cfg: ObstacleConfig):
    """Initial ``(x, u)``: the obstacle-free plan, bent sideways if it enters an obstacle.

    The bend is a sine-shaped offset of size ``bump`` normal to the
    start-goal line; it only serves to pick a side of symmetric obstacles.
    """
    x, u = unconstrained_plan(cfg)
    _, _, C = obstacle_matrices(cfg.T)
    pos = x[1:] @ C.T
    hits = any(ob.value(p) < ob.threshold() for ob in cfg.obstacles for p in pos)
    if not hits or cfg.bump == 0.0:
        return x, u
    s = np.linspace(0.0, 1.0, cfg.K + 1)
    dirn = np.asarray(cfg.goal, float) - np.asarray(cfg.start, float)
    nrm = np.array([-dirn[1], dirn[0]]) / max(np.linalg.norm(dirn), 1e-12)
    off = cfg.bump * np.sin(np.pi * s)[:, None] * nrm
    x = x.copy()
    x[:, 1] += off[:, 0]
    x[:, 3] += off[:, 1]
    return x, u


def build_obstacle(cfg: ObstacleConfig = ObstacleConfig()) -> NonlinearProblem:
    K = cfg.K
    A, B, C = obstacle_matrices(cfg.T)
    n_obs = len(cfg.obstacles)
    bc = boundary(cfg)

    def linearize(x, u):
        # outputs: two position rows (no prior) then one row per obstacle
        Cs = np.zeros((K, 2 + n_obs, 4))
        ds = np.zeros((K, 2 + n_obs))
        Cs[:, :2] = C
        for k in range(K):
            pos = C @ x[k + 1]
            for j, ob in enumerate(cfg.obstacles):
                f, g = ob.value_and_grad(pos)
                Cs[k, 2 + j] = g @ C
                ds[k, 2 + j] = f - g @ pos
        model = Lssm(np.broadcast_to(A, (K, 4, 4)), np.broadcast_to(B, (K, 4, 2)), Cs,
                     np.zeros((K, 4)), ds)
        return model, bc

    x_init, u_init = initial_path(cfg)
    pos = x_init[1:] @ C.T
    atts = [PriorAttachment("input", k, i, FixedGaussian(0.0, cfg.v_in))
            for k in range(K) for i in range(2)]
    for j, ob in enumerate(cfg.obstacles):
        spec = NuvSpec(NuvKind.HALF_SPACE_LOWER, a=ob.threshold(), gamma=cfg.gamma)
        # Start centered on the initial path instead of pulling the distance towards zero.
        atts += [PriorAttachment("output", k, 2 + j, spec, PriorParams(ob.value(pos[k]), 1.0))
                 for k in range(K)]
    return NonlinearProblem(linearize, atts, x_init, u_init)


def run_obstacle(cfg: ObstacleConfig = ObstacleConfig(), iake: IakeConfig = IakeConfig(),
                 callback=None) -> Outcome:
    prob = build_obstacle(cfg)
    res, wall = solve_problem(prob, iake, callback)
    _, _, C = obstacle_matrices(cfg.T)
    pos = res.x_hat[1:] @ C.T
    clearance = [min(ob.value(p) for p in pos) - ob.threshold() for ob in cfg.obstacles]
    end_err = float(np.max(np.abs(res.x_hat[-1] - boundary(cfg).xK_mean)))
    start_err = float(np.max(np.abs(res.x_hat[0] - boundary(cfg).x0_mean)))
    metrics = {
        "min_clearance": float(min(clearance)) if clearance else float("inf"),
        "endpoint_error": max(end_err, start_err),
        "energy": float(np.sum(res.u_hat ** 2)),
        "outer_iterations": res.outer_iterations,
    }
    return Outcome("obstacle", res.u_hat, pos, res.x_hat[1:], ["a1", "a2"], ["p1", "p2"],
                   ["v1", "p1", "v2", "p2"], res, metrics, path=pos,
                   obstacles=cfg.obstacle_dicts(), wall_time=wall)
