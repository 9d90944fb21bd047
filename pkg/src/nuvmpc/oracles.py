"""Brute-force references for the message-passing code.

``dense_smooth`` builds the full joint Gaussian of the initial state and all
inputs, writes every state and output as an explicit affine map of them, and
conditions on all output and terminal factors in one batch.  It shares no
code with :mod:`nuvmpc.mbf` and costs O((N + K L)^3).
"""

from __future__ import annotations

import itertools

import numpy as np

from .lssm import BoundaryCond, Lssm
from .mbf import GaussianPriors, SmoothResult


def _affine_states(m: Lssm):
    """Maps ``(S_k, o_k)`` with ``x_k = S_k z + o_k`` for ``z = [x0; u_flat]``."""
    K, N, L = m.K, m.N, m.L
    dim = N + K * L
    S = np.zeros((K + 1, N, dim))
    o = np.zeros((K + 1, N))
    S[0, :, :N] = np.eye(N)
    for k in range(K):
        S[k + 1] = m.A[k] @ S[k]
        S[k + 1][:, N + k * L:N + (k + 1) * L] += m.B[k]
        o[k + 1] = m.A[k] @ o[k] + m.c[k]
    return S, o


def dense_smooth(m: Lssm, bc: BoundaryCond, priors: GaussianPriors) -> SmoothResult:
    K, N, L, H = m.K, m.N, m.L, m.H
    S, o = _affine_states(m)
    dim = N + K * L
    mz = np.concatenate([bc.x0_mean, priors.u_mean.ravel()])
    Vz = np.zeros((dim, dim))
    Vz[:N, :N] = bc.x0_cov
    Vz[N:, N:] = np.diag(priors.u_var.ravel())

    rows, targets, noise = [], [], []
    for k in range(K):
        for h in range(H):
            if np.isfinite(priors.y_var[k, h]):
                rows.append(m.C[k, h] @ S[k + 1])
                targets.append(priors.y_mean[k, h] - m.d[k, h] - m.C[k, h] @ o[k + 1])
                noise.append(priors.y_var[k, h])
    J = np.array(rows).reshape(-1, dim)
    R = np.diag(noise) if noise else np.zeros((0, 0))
    t = np.array(targets)
    if bc.has_terminal:
        J = np.vstack([J, S[K]])
        t = np.concatenate([t, bc.xK_mean - o[K]])
        Rt = np.zeros((R.shape[0] + N, R.shape[0] + N))
        Rt[:R.shape[0], :R.shape[0]] = R
        Rt[R.shape[0]:, R.shape[0]:] = bc.xK_cov
        R = Rt

    if J.shape[0]:
        VJt = Vz @ J.T
        Sinn = J @ VJt + R
        gain = np.linalg.solve(Sinn, VJt.T).T
        mz_post = mz + gain @ (t - J @ mz)
        Vz_post = Vz - gain @ VJt.T
    else:
        mz_post, Vz_post = mz, Vz
    Vz_post = 0.5 * (Vz_post + Vz_post.T)

    u_mean = mz_post[N:].reshape(K, L)
    u_var = np.stack([Vz_post[N + k * L:N + (k + 1) * L, N + k * L:N + (k + 1) * L]
                      for k in range(K)])
    x_mean = np.einsum("kni,i->kn", S, mz_post) + o
    y_mean = np.einsum("khn,kn->kh", m.C, x_mean[1:]) + m.d
    Cy = np.einsum("khn,kni->khi", m.C, S[1:])
    y_var = np.einsum("khi,ij,kgj->khg", Cy, Vz_post, Cy)
    return SmoothResult(u_mean, y_mean, x_mean, u_var, y_var)


def exhaustive_binary(m: Lssm, x0, y_target, levels=(0.0, 1.0), max_K: int = 14):
    """Globally optimal input sequence from a finite alphabet by enumeration.

    Minimizes ``sum_k (y_k - y_target_k)^2`` over all ``len(levels)**K``
    sequences for a single-input, single-output model.
    """
    if m.K > max_K:
        raise ValueError(f"exhaustive search refused for K={m.K} > {max_K}")
    if m.L != 1 or m.H != 1:
        raise ValueError("exhaustive search needs L = H = 1")
    y_target = np.asarray(y_target, float).ravel()
    K = m.K
    # Output is affine in u: y = Y0 + M u.
    _, y0 = m.simulate(np.zeros(K), x0)
    M = np.empty((K, K))
    for j in range(K):
        e = np.zeros(K)
        e[j] = 1.0
        _, yj = m.simulate(e, np.zeros(m.N))
        M[:, j] = yj[:, 0] - m.simulate(np.zeros(K), np.zeros(m.N))[1][:, 0]
    U = np.array(list(itertools.product(levels, repeat=K)), dtype=float)
    resid = y0[:, 0][None, :] + U @ M.T - y_target[None, :]
    sse = np.einsum("ij,ij->i", resid, resid)
    best = int(np.argmin(sse))
    return U[best], sse[best] / K


def random_problem(rng: np.random.Generator, K: int, N: int, L: int, H: int,
                   terminal: bool = False, inactive_frac: float = 0.2):
    """Random stable time-varying model with random Gaussian factors.

    Returns ``(model, bc, priors)``; about ``inactive_frac`` of the output
    factors are switched off (infinite variance).
    """
    A = rng.normal(size=(K, N, N))
    A *= 0.9 / np.maximum(np.abs(np.linalg.eigvals(A)).max(axis=1), 1e-9)[:, None, None]
    B = rng.normal(size=(K, N, L))
    C = rng.normal(size=(K, H, N))
    model = Lssm(A, B, C, rng.normal(scale=0.1, size=(K, N)), rng.normal(scale=0.1, size=(K, H)))
    Q = rng.normal(size=(N, N))
    x0_cov = Q @ Q.T + 0.1 * np.eye(N)
    if terminal:
        bc = BoundaryCond(rng.normal(size=N), x0_cov, rng.normal(size=N), 0.5 * np.eye(N))
    else:
        bc = BoundaryCond(rng.normal(size=N), x0_cov)
    y_var = rng.uniform(0.05, 2.0, size=(K, H))
    y_var[rng.random((K, H)) < inactive_frac] = np.inf
    priors = GaussianPriors(rng.normal(size=(K, L)), rng.uniform(0.1, 3.0, size=(K, L)),
                            rng.normal(size=(K, H)), y_var)
    return model, bc, priors


def max_rel_diff(a, b) -> float:
    """Largest elementwise ``|a - b| / max(1, |b|)``."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b)), initial=0.0))


def smoother_discrepancy(res, ref) -> float:
    """Largest relative difference of all posterior moments of two smoother results."""
    return max(max_rel_diff(res.u_mean, ref.u_mean), max_rel_diff(res.x_mean, ref.x_mean),
               max_rel_diff(res.y_mean, ref.y_mean), max_rel_diff(res.u_var, ref.u_var),
               max_rel_diff(res.y_var, ref.y_var))
