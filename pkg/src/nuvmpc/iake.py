"""Iterative augmented Kalman estimation.

Each iteration runs one forward/backward smoothing pass under the current
Gaussian parameters of all priors and then re-estimates those parameters in
closed form.  Attachments are compiled into groups of equal prior kind so the
update step is a handful of vectorized numpy calls per iteration.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .lssm import BoundaryCond, FixedGaussian, Lssm, PriorAttachment, check_attachments
from .mbf import GaussianPriors, SmoothResult, SmootherSingularity, smooth
from .priors import ContractError, NuvSpec, initial_params, rule_arrays
from .scalar_lab import NumericFailure

log = logging.getLogger(__name__)


@dataclass
class IakeConfig:
    """Iteration controls.

    ``param_tol`` bounds the largest change of any forward mean or variance
    between two iterations; changes of parameters larger than one in
    magnitude are measured relative to the old value.
    ``relin_inner_iters`` limits the inner IAKE iterations per linearization
    (``1`` relinearizes after every smoothing pass, ``None`` runs the inner
    loop to convergence).
    """

    max_iters: int = 500
    param_tol: float = 1e-8
    relinearize: bool = False
    relin_max_outer: int = 50
    relin_damping: float = 1.0
    relin_inner_iters: Optional[int] = None

    def __post_init__(self):
        if self.max_iters < 1:
            raise ContractError("max_iters must be at least 1")
        if not self.param_tol > 0:
            raise ContractError("param_tol must be positive")
        if not 0 < self.relin_damping <= 1:
            raise ContractError("relin_damping must lie in (0, 1]")
        if self.relin_max_outer < 1:
            raise ContractError("relin_max_outer must be at least 1")


@dataclass
class IakeResult:
    u_hat: np.ndarray
    y_hat: np.ndarray
    x_hat: np.ndarray
    iterations: int
    converged: bool
    history: list = field(default_factory=list)
    priors: Optional[GaussianPriors] = None
    outer_iterations: int = 0
    model: Optional[Lssm] = None


@dataclass
class _Group:
    target: str
    spec: NuvSpec  # representative; kind and use_posterior_variance are shared
    k: np.ndarray
    idx: np.ndarray
    gamma: np.ndarray
    p: np.ndarray
    r2: np.ndarray
    a: np.ndarray
    b: np.ndarray


class PriorBank:
    """Current parameters of every attachment plus the compiled update groups."""

    def __init__(self, model: Lssm, attachments: Sequence[PriorAttachment]):
        check_attachments(model, attachments)
        self.priors = GaussianPriors.empty(model)
        buckets: dict = {}
        for att in attachments:
            mean_arr, var_arr = self._arrays(att.target)
            if isinstance(att.spec, FixedGaussian):
                mean_arr[att.k, att.index] = att.spec.mean
                var_arr[att.k, att.index] = att.spec.variance
                continue
            init = att.init if att.init is not None else initial_params(att.spec)
            if not init.fwd_variance > 0:
                raise ContractError("initial forward variance must be positive")
            mean_arr[att.k, att.index] = init.fwd_mean
            var_arr[att.k, att.index] = init.fwd_variance
            key = (att.target, att.spec.kind, att.spec.use_posterior_variance)
            buckets.setdefault(key, []).append(att)
        self.groups = []
        for (target, _, _), atts in buckets.items():
            col = lambda name: np.array([getattr(a.spec, name) for a in atts], float)
            self.groups.append(_Group(
                target, atts[0].spec,
                np.array([a.k for a in atts]), np.array([a.index for a in atts]),
                col("gamma"), col("p"), col("r2"), col("a"), col("b"),
            ))
        self.needs_variance = any(g.spec.needs_variance for g in self.groups)

    def _arrays(self, target):
        if target == "input":
            return self.priors.u_mean, self.priors.u_var
        return self.priors.y_mean, self.priors.y_var

    def update(self, res: SmoothResult) -> float:
        """Re-estimate all NUV parameters from ``res``; returns the largest change."""
        delta = 0.0
        for g in self.groups:
            if g.target == "input":
                m = res.u_mean[g.k, g.idx]
                v = res.u_var_diag[g.k, g.idx] if g.spec.needs_variance else 0.0
            else:
                m = res.y_mean[g.k, g.idx]
                v = res.y_var_diag[g.k, g.idx] if g.spec.needs_variance else 0.0
            if g.spec.needs_variance:
                v = np.maximum(v, 0.0)  # round-off can push tiny variances below zero
            mean, var = rule_arrays(g.spec.kind, m, v, g.gamma, g.p, g.r2, g.a, g.b,
                                    g.spec.use_posterior_variance)
            mean = np.broadcast_to(mean, g.k.shape)
            var = np.broadcast_to(var, g.k.shape)
            if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(var))):
                raise NumericFailure(f"non-finite {g.spec.kind.value} parameter")
            mean_arr, var_arr = self._arrays(g.target)
            old_m = mean_arr[g.k, g.idx]
            old_v = var_arr[g.k, g.idx]
            dm = np.abs(mean - old_m) / np.maximum(1.0, np.abs(old_m))
            dv = np.abs(var - old_v) / np.maximum(1.0, old_v)
            if dm.size:
                delta = max(delta, float(dm.max()), float(dv.max()))
            mean_arr[g.k, g.idx] = mean
            var_arr[g.k, g.idx] = var
        return delta


def _smooth_checked(model, bc, priors, variances, iteration):
    try:
        res = smooth(model, bc, priors, variances=variances)
    except SmootherSingularity as err:
        err.iteration = iteration
        raise
    if not (np.all(np.isfinite(res.u_mean)) and np.all(np.isfinite(res.y_mean))):
        raise NumericFailure(f"non-finite posterior mean at iteration {iteration}", iteration)
    return res


def _run(model, bc, bank: PriorBank, max_iters, tol, callback, history, start=0):
    """Inner loop on a fixed model; returns ``(res, iterations, converged)``."""
    res = None
    for i in range(1, max_iters + 1):
        it = start + i
        res = _smooth_checked(model, bc, bank.priors, bank.needs_variance, it)
        try:
            delta = bank.update(res)
        except NumericFailure as err:
            err.iteration = it
            raise
        history.append(delta)
        if callback is not None:
            callback(it, delta)
        if delta < tol:
            return res, i, True
    return res, max_iters, False


def iake_solve(model: Lssm, bc: BoundaryCond, attachments: Sequence[PriorAttachment],
               cfg: IakeConfig = IakeConfig(), callback: Optional[Callable] = None,
               bank: Optional[PriorBank] = None) -> IakeResult:
    """Alternate smoothing and NUV re-estimation until the parameters settle.

    The returned estimates are the posterior means of the last smoothing pass.
    Posterior variances are computed only if some attached rule needs them.
    """
    if bank is None:
        bank = PriorBank(model, attachments)
    history: list = []
    res, iters, conv = _run(model, bc, bank, cfg.max_iters, cfg.param_tol, callback, history)
    return IakeResult(res.u_mean, res.y_mean, res.x_mean, iters, conv, history,
                      bank.priors, 0, model)


def relinearized_solve(linearize: Callable, attachments: Sequence[PriorAttachment],
                       x_init, u_init, cfg: IakeConfig = IakeConfig(),
                       callback: Optional[Callable] = None) -> IakeResult:
    """Outer loop for nonlinear scenarios.

    ``linearize(x, u)`` returns ``(Lssm, BoundaryCond)`` for the state
    trajectory ``x`` (K+1, N) and input trajectory ``u`` (K, L).  After each
    inner solve the linearization point moves to the damped posterior means;
    NUV parameters are carried over (warm start).  If the trajectory change
    more than doubles, damping falls back to 0.5.
    """
    x = np.array(x_init, float)
    u = np.array(u_init, float)
    lam = cfg.relin_damping
    inner = cfg.max_iters if cfg.relin_inner_iters is None else cfg.relin_inner_iters
    bank = None
    history: list = []
    total = 0
    prev_change = np.inf
    res = model = None
    converged = False
    for outer in range(1, cfg.relin_max_outer + 1):
        try:
            model, bc = linearize(x, u)
        except ArithmeticError as err:
            err.outer_iteration = outer
            raise
        if bank is None:
            bank = PriorBank(model, attachments)
        res, iters, _ = _run(model, bc, bank, inner, cfg.param_tol, callback,
                                      history, start=total)
        total += iters
        change = max(float(np.max(np.abs(res.x_mean - x))), float(np.max(np.abs(res.u_mean - u))))
        if change > 2.0 * prev_change and lam > 0.5:
            lam = 0.5
            log.info("relinearization diverging at outer step %d; damping 0.5", outer)
        prev_change = change
        x = (1.0 - lam) * x + lam * res.x_mean
        u = (1.0 - lam) * u + lam * res.u_mean
        log.debug("outer %d: %d inner iterations, change %.3e", outer, iters, change)
        if change < cfg.param_tol and history[-1] < cfg.param_tol:
            converged = True
            break
        if total >= cfg.max_iters * cfg.relin_max_outer:
            break
    return IakeResult(res.u_mean, res.y_mean, res.x_mean, total, converged, history,
                      bank.priors, outer, model)
