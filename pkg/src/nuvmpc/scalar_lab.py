"""Scalar test bed: one variable, one Gaussian likelihood, one NUV prior.

Runs the AM/EM fixed-point loops and provides the threshold formulas that
predict when a box, half-space or binarizing prior becomes a hard constraint,
plus brute-force oracles used to check them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .priors import (
    ContractError,
    NuvKind,
    NuvSpec,
    Posterior,
    PriorParams,
    update,
)


class NumericFailure(ArithmeticError):
    """An iteration produced a non-finite value."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class OracleFailure(RuntimeError):
    """A brute-force oracle could not bracket its answer."""


@dataclass(frozen=True)
class ScalarLikelihood:
    mu: float
    s2: float

    def __post_init__(self):
        if not self.s2 > 0:
            raise ContractError(f"likelihood variance must be positive, got {self.s2}")


@dataclass
class ScalarTrace:
    estimates: list[float] = field(default_factory=list)
    params: list[PriorParams] = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.estimates)

    @property
    def x_hat(self) -> float:
        return self.estimates[-1]


def scalar_map_step(prior: PriorParams, lik: ScalarLikelihood) -> float:
    """Precision-weighted combination of prior and likelihood."""
    wp = 1.0 / prior.fwd_variance
    wl = 1.0 / lik.s2
    return (wp * prior.fwd_mean + wl * lik.mu) / (wp + wl)


def posterior_variance(prior: PriorParams, lik: ScalarLikelihood) -> float:
    return 1.0 / (1.0 / prior.fwd_variance + 1.0 / lik.s2)


def run_scalar(prior_spec: NuvSpec, lik: ScalarLikelihood,
               init: PriorParams = PriorParams(0.0, 1.0),
               max_iters: int = 10_000, tol: float = 1e-9) -> ScalarTrace:
    """Alternate the MAP step and the prior update until the estimate settles."""
    if not init.fwd_variance > 0:
        raise ContractError("initial forward variance must be positive")
    trace = ScalarTrace()
    prior = init
    for i in range(1, max_iters + 1):
        x = scalar_map_step(prior, lik)
        v = posterior_variance(prior, lik)
        if not (math.isfinite(x) and math.isfinite(v)):
            raise NumericFailure(f"non-finite estimate at iteration {i}", iteration=i)
        prior = update(prior_spec, Posterior(x, v))
        trace.estimates.append(x)
        trace.params.append(prior)
        if i > 1 and abs(x - trace.estimates[-2]) < tol:
            trace.converged = True
            break
    return trace


# -- threshold formulas ---------------------------------------------------------


def box_threshold(a: float, b: float, gamma: float, mu: float) -> float:
    """Likelihood variance above which the box estimate lies inside [a, b]."""
    if not a < b or not gamma > 0:
        raise ContractError("need a < b and gamma > 0")
    if a <= mu <= b:
        return 0.0
    return min(abs(a - mu), abs(b - mu)) / (2.0 * gamma)


def half_space_threshold(side: str, a: float, gamma: float, mu: float) -> float:
    """``side`` is ``"lower"`` for x >= a or ``"upper"`` for x <= a."""
    if not gamma > 0:
        raise ContractError("gamma must be positive")
    if side not in ("lower", "upper"):
        raise ContractError(f"side must be 'lower' or 'upper', got {side!r}")
    feasible = mu >= a if side == "lower" else mu <= a
    return 0.0 if feasible else abs(a - mu) / (2.0 * gamma)


def em_threshold(a: float, b: float, mu: float) -> float:
    """Closed-form EM binarization threshold; +inf at the midpoint."""
    if not a < b:
        raise ContractError("need a < b")
    width = b - a
    da, db = mu - a, b - mu  # signed distances to the levels
    far = (3.0 - math.sqrt(8.0)) * (a - mu) * (b - mu)
    if da < db:
        if mu < a - width / math.sqrt(2.0):
            return far
        return da ** 2 * width / (db - da)
    if db < da:
        if mu > b + width / math.sqrt(2.0):
            return far
        return db ** 2 * width / (da - db)
    return math.inf


# -- brute-force oracles -----------------------------------------------------------


def am_objective_has_interior_max(a: float, b: float, mu: float, s2: float,
                                  resolution: float = 1e-4, guard: float = 1e-3) -> bool:
    """Grid scan of log N(x; mu, s2) - log|x-a| - log|x-b| for local maxima.

    Points within ``guard * (b - a)`` of the levels are excluded; outside
    [a, b] the objective is monotone towards the nearer level, so only the
    interior is scanned.
    """
    w = b - a
    x = np.arange(a + guard * w, b - guard * w, resolution * w)
    g = -(x - mu) ** 2 / (2.0 * s2) - np.log(np.abs(x - a)) - np.log(np.abs(x - b))
    d = np.diff(g)
    return bool(np.any((d[:-1] > 0) & (d[1:] <= 0)))


def _bisect(predicate, lo, hi, tol):
    """Smallest value (within tol) above which ``predicate`` is False."""
    if not predicate(lo):
        raise OracleFailure(f"predicate already false at lower bracket {lo}")
    grow = 0
    while predicate(hi):
        hi *= 2.0
        grow += 1
        if grow > 40:
            raise OracleFailure("could not bracket the threshold")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if predicate(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def am_threshold_numeric(a: float, b: float, mu: float, tol: float = 1e-5) -> float:
    """Smallest s2 above which the AM objective has no interior local maximum."""
    if not a < b:
        raise ContractError("need a < b")
    if mu == a or mu == b:
        raise ContractError("mu must differ from both levels")
    w = b - a
    return _bisect(lambda s2: am_objective_has_interior_max(a, b, mu, s2),
                   1e-8 * w * w, w * w, tol)


def log_evidence(sa2, sb2, mu, s2, a, b):
    """log of  int N(x; mu, s2) N(x; a, sa2) N(x; b, sb2) dx  (closed form)."""
    v = 1.0 / (1.0 / sa2 + 1.0 / sb2)
    m = v * (a / sa2 + b / sb2)

    def lognorm(x, mean, var):
        return -0.5 * np.log(2 * np.pi * var) - (x - mean) ** 2 / (2 * var)

    return lognorm(a, b, sa2 + sb2) + lognorm(m, mu, s2 + v)


def _variance_grid(a, b, n=1201):
    w2 = (b - a) ** 2
    g = w2 * np.logspace(-10, 2, n)
    return np.meshgrid(g, g, indexing="ij")


def evidence_has_interior_max(a, b, mu, s2, grid=None) -> bool:
    """True if the type-II evidence has a local maximum with both variances positive."""
    from scipy.ndimage import maximum_filter

    sa, sb = grid if grid is not None else _variance_grid(a, b)
    L = log_evidence(sa, sb, mu, s2, a, b)
    peak = L == maximum_filter(L, size=3, mode="nearest")
    return bool(peak[1:-1, 1:-1].any())


def em_threshold_numeric(a: float, b: float, mu: float, tol: float = 1e-5) -> float:
    """Brute-force counterpart of :func:`em_threshold` via a 2-D variance scan."""
    if not a < b:
        raise ContractError("need a < b")
    grid = _variance_grid(a, b)
    w = b - a
    return _bisect(lambda s2: evidence_has_interior_max(a, b, mu, s2, grid),
                   1e-4 * w * w, w * w, tol)


def scalar_cost(prior_spec: NuvSpec, lik: ScalarLikelihood, x):
    """Exact negative log objective (up to constants) of the scalar MAP problem."""
    x = np.asarray(x, dtype=float)
    quad = (x - lik.mu) ** 2 / (2.0 * lik.s2)
    k, a, b, g = prior_spec.kind, prior_spec.a, prior_spec.b, prior_spec.gamma
    if k == NuvKind.BOX:
        return quad + g * np.abs(x - a) + g * np.abs(x - b)
    if k == NuvKind.HALF_SPACE_LOWER:
        return quad + np.where(x < a, 2.0 * g * (a - x), 0.0)
    if k == NuvKind.HALF_SPACE_UPPER:
        return quad + np.where(x > a, 2.0 * g * (x - a), 0.0)
    if k in (NuvKind.BINARIZING_AM, NuvKind.BINARIZING_EM):
        with np.errstate(divide="ignore"):
            return quad + np.log(np.abs(x - a)) + np.log(np.abs(x - b))
    if k == NuvKind.L1:
        return quad + g * np.abs(x)
    raise ContractError(f"no scalar cost for {k.value}")


def default_grid(prior_spec: NuvSpec, lik: ScalarLikelihood, n: int = 200_001):
    s = math.sqrt(lik.s2)
    lo = min(prior_spec.a, lik.mu) - 5 * s
    hi = max(prior_spec.b, lik.mu) + 5 * s
    return np.linspace(lo, hi, n)


def brute_force_scalar_map(prior_spec: NuvSpec, lik: ScalarLikelihood, grid=None) -> float:
    """Grid argmin of :func:`scalar_cost`.

    The binarizing cost is unbounded below at both levels; the tie is broken
    by the likelihood, i.e. the level nearer to ``mu`` wins.
    """
    if prior_spec.kind in (NuvKind.BINARIZING_AM, NuvKind.BINARIZING_EM):
        a, b = prior_spec.a, prior_spec.b
        return a if abs(a - lik.mu) <= abs(b - lik.mu) else b
    if grid is None:
        grid = default_grid(prior_spec, lik)
    grid = np.asarray(grid, dtype=float)
    return float(grid[np.argmin(scalar_cost(prior_spec, lik, grid))])


def sweep(prior_spec: NuvSpec, mus, s2s, init: PriorParams = PriorParams(0.0, 1.0),
          max_iters: int = 10_000, tol: float = 1e-9):
    """Rows ``(mu, s2, x_hat, iterations, converged)`` for every grid pair."""
    rows = []
    for s2 in s2s:
        for mu in mus:
            tr = run_scalar(prior_spec, ScalarLikelihood(float(mu), float(s2)), init, max_iters, tol)
            rows.append((float(mu), float(s2), tr.x_hat, tr.iterations, tr.converged))
    return rows
