"""Kalman forward recursion and modified Bryson-Frazier backward recursion
with input estimation.

Input priors are independent scalar Gaussians (diagonal ``V_U``).  Output
priors are independent scalar Gaussians on the rows of ``C[k]``; a row with
infinite variance carries no factor and is skipped, so ``G[k]`` is only as
large as the number of active rows at step ``k``.  For one active row the
gain is a scalar division; for several it is a Cholesky-based inverse.
No ``N x N`` inverse is formed except for the Gaussian terminal message.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .lssm import BoundaryCond, Lssm


class SmootherSingularity(np.linalg.LinAlgError):
    def __init__(self, message, k=None):
        super().__init__(message)
        self.k = k


@dataclass
class GaussianPriors:
    """Current Gaussian parameters of all input and output factors."""

    u_mean: np.ndarray  # (K, L)
    u_var: np.ndarray  # (K, L)
    y_mean: np.ndarray  # (K, H)
    y_var: np.ndarray  # (K, H), inf where inactive

    @classmethod
    def empty(cls, m: Lssm, u_var: float = 1.0) -> "GaussianPriors":
        return cls(np.zeros((m.K, m.L)), np.full((m.K, m.L), float(u_var)),
                   np.zeros((m.K, m.H)), np.full((m.K, m.H), np.inf))

    def copy(self) -> "GaussianPriors":
        return GaussianPriors(self.u_mean.copy(), self.u_var.copy(),
                              self.y_mean.copy(), self.y_var.copy())


@dataclass
class ForwardState:
    m_pred: np.ndarray  # m_{X_k'}, (K, N)
    V_pred: np.ndarray  # V_{X_k'}, (K, N, N)
    m_filt: np.ndarray  # m_{X_k}, (K+1, N); row 0 is the initial state
    V_filt: np.ndarray  # (K+1, N, N)
    E: np.ndarray  # (K, N)
    F: np.ndarray  # (K, N, N)
    G: list  # per step (h_k, h_k) arrays
    CtGC: np.ndarray  # (K, N, N), cached C^T G C
    active: list  # per step index arrays of active output rows


@dataclass
class BackwardState:
    xi: np.ndarray  # xi~_{X_k}, (K+1, N)
    W: np.ndarray  # W~_{X_k}, (K+1, N, N)
    xi_pred: np.ndarray  # xi~_{X_k'}, (K, N)
    W_pred: np.ndarray  # W~_{X_k'}, (K, N, N)


@dataclass
class SmoothResult:
    u_mean: np.ndarray  # (K, L)
    y_mean: np.ndarray  # (K, H)
    x_mean: np.ndarray  # (K+1, N)
    u_var: Optional[np.ndarray] = None  # (K, L, L)
    y_var: Optional[np.ndarray] = None  # (K, H, H)

    @property
    def u_var_diag(self):
        return None if self.u_var is None else np.diagonal(self.u_var, axis1=1, axis2=2)

    @property
    def y_var_diag(self):
        return None if self.y_var is None else np.diagonal(self.y_var, axis1=1, axis2=2)


def _sym(M):
    return 0.5 * (M + M.T)


def _gain(S, k):
    """Inverse of the small innovation covariance ``S``."""
    if S.shape[0] == 1:
        s = S[0, 0]
        if not s > 0:
            raise SmootherSingularity(f"innovation variance {s} is not positive at step {k}", k)
        return np.array([[1.0 / s]])
    try:
        Lc = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise SmootherSingularity(f"innovation covariance not positive definite at step {k}", k)
    Li = np.linalg.inv(Lc)
    return Li.T @ Li


def forward_pass(m: Lssm, bc: BoundaryCond, priors: GaussianPriors) -> ForwardState:
    K, N = m.K, m.N
    m_pred = np.empty((K, N))
    V_pred = np.empty((K, N, N))
    m_filt = np.empty((K + 1, N))
    V_filt = np.empty((K + 1, N, N))
    E = np.zeros((K, N))
    F = np.empty((K, N, N))
    CtGC = np.zeros((K, N, N))
    G, active = [], []
    eye = np.eye(N)
    m_filt[0] = bc.x0_mean
    V_filt[0] = bc.x0_cov
    mx, Vx = m_filt[0], V_filt[0]
    finite = np.isfinite(priors.y_var)
    for k in range(K):
        A, B = m.A[k], m.B[k]
        mp = A @ mx + B @ priors.u_mean[k] + m.c[k]
        Vp = A @ Vx @ A.T + (B * priors.u_var[k]) @ B.T
        Vp = _sym(Vp)
        idx = np.flatnonzero(finite[k])
        active.append(idx)
        if idx.size:
            C = m.C[k][idx]
            VCt = Vp @ C.T
            g = _gain(C @ VCt + np.diag(priors.y_var[k, idx]), k)
            resid = priors.y_mean[k, idx] - m.d[k, idx] - C @ mp
            E[k] = C.T @ (g @ resid)
            CtGC[k] = C.T @ g @ C
            F[k] = eye - VCt @ g @ C
            mx = mp + Vp @ E[k]
            Vx = _sym(F[k] @ Vp)
            G.append(g)
        else:
            F[k] = eye
            mx, Vx = mp, Vp
            G.append(np.zeros((0, 0)))
        m_pred[k], V_pred[k] = mp, Vp
        m_filt[k + 1], V_filt[k + 1] = mx, Vx
    return ForwardState(m_pred, V_pred, m_filt, V_filt, E, F, G, CtGC, active)


def backward_pass(fwd: ForwardState, m: Lssm, bc: BoundaryCond) -> BackwardState:
    K, N = m.K, m.N
    xi = np.empty((K + 1, N))
    W = np.empty((K + 1, N, N))
    xi_pred = np.empty((K, N))
    W_pred = np.empty((K, N, N))
    if bc.has_terminal:
        S = fwd.V_filt[K] + bc.xK_cov
        try:
            Wk = np.linalg.inv(S)
        except np.linalg.LinAlgError:
            raise SmootherSingularity("terminal covariance sum is singular", K)
        if not np.all(np.isfinite(Wk)):
            raise SmootherSingularity("terminal covariance sum is singular", K)
        Wk = _sym(Wk)
        xik = Wk @ (fwd.m_filt[K] - bc.xK_mean)
    else:
        Wk = np.zeros((N, N))
        xik = np.zeros(N)
    xi[K], W[K] = xik, Wk
    for k in range(K - 1, -1, -1):
        Fk, A = fwd.F[k], m.A[k]
        xp = Fk.T @ xik - fwd.E[k]
        Wp = _sym(Fk.T @ Wk @ Fk + fwd.CtGC[k])
        xi_pred[k], W_pred[k] = xp, Wp
        xik = A.T @ xp
        Wk = _sym(A.T @ Wp @ A)
        xi[k], W[k] = xik, Wk
    return BackwardState(xi, W, xi_pred, W_pred)


def posterior_io(fwd: ForwardState, bwd: BackwardState, m: Lssm, priors: GaussianPriors,
                 variances: bool = True) -> SmoothResult:
    """Posterior means (and optionally covariances) of inputs, outputs and states."""
    Bt_xi = np.einsum("knl,kn->kl", m.B, bwd.xi_pred)
    u_mean = priors.u_mean - priors.u_var * Bt_xi
    x_mean = fwd.m_filt - np.einsum("kij,kj->ki", fwd.V_filt, bwd.xi)
    y_mean = np.einsum("khn,kn->kh", m.C, x_mean[1:]) + m.d
    res = SmoothResult(u_mean, y_mean, x_mean)
    if variances:
        VB = m.B * priors.u_var[:, None, :]  # B V_U, (K, N, L)
        Vu = np.einsum("knl,knm,kmj->klj", VB, bwd.W_pred, VB)
        res.u_var = -Vu
        diag = np.arange(m.L)
        res.u_var[:, diag, diag] += priors.u_var
        Vf = fwd.V_filt[1:]
        Vx = Vf - np.einsum("kij,kjl,klm->kim", Vf, bwd.W[1:], Vf)
        res.y_var = np.einsum("khn,knm,kgm->khg", m.C, Vx, m.C)
    return res


def smooth(m: Lssm, bc: BoundaryCond, priors: GaussianPriors, variances: bool = True) -> SmoothResult:
    fwd = forward_pass(m, bc, priors)
    bwd = backward_pass(fwd, m, bc)
    return posterior_io(fwd, bwd, m, priors, variances)


def state_covariances(fwd: ForwardState, bwd: BackwardState) -> np.ndarray:
    """Posterior state covariances ``V_X - V_X W~ V_X`` for ``k = 0..K``."""
    V = fwd.V_filt
    return V - np.einsum("kij,kjl,klm->kim", V, bwd.W, V)
