"""Affine, time-varying linear state space models.

Convention: steps are indexed ``k = 0..K-1`` in arrays and correspond to
time ``k + 1``::

    x[k+1] = A[k] x[k] + B[k] u[k] + c[k]
    y[k]   = C[k] x[k+1] + d[k]

where ``x[0]`` is the initial state.  Per-step matrices are stored even when
the model is time invariant.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .priors import ContractError, NuvSpec, PriorParams


class LinearizationError(ArithmeticError):
    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage


def _frozen(x):
    x = np.array(x, dtype=float)
    x.setflags(write=False)
    return x


@dataclass(frozen=True, eq=False)
class Lssm:
    A: np.ndarray  # (K, N, N)
    B: np.ndarray  # (K, N, L)
    C: np.ndarray  # (K, H, N)
    c: Optional[np.ndarray] = None  # (K, N)
    d: Optional[np.ndarray] = None  # (K, H)

    def __post_init__(self):
        A, B, C = (np.asarray(self.A, float), np.asarray(self.B, float), np.asarray(self.C, float))
        if A.ndim != 3 or B.ndim != 3 or C.ndim != 3:
            raise ContractError("A, B, C must be stacked per step: (K, ., .)")
        K, N, _ = A.shape
        if K < 1:
            raise ContractError("horizon must be at least 1")
        if A.shape != (K, N, N) or B.shape[:2] != (K, N) or C.shape[0] != K or C.shape[2] != N:
            raise ContractError(f"inconsistent shapes A{A.shape} B{B.shape} C{C.shape}")
        c = np.zeros((K, N)) if self.c is None else np.asarray(self.c, float)
        d = np.zeros((K, C.shape[1])) if self.d is None else np.asarray(self.d, float)
        if c.shape != (K, N) or d.shape != (K, C.shape[1]):
            raise ContractError(f"offset shapes c{c.shape} d{d.shape} do not match")
        for name, val in zip("ABCcd", (A, B, C, c, d)):
            object.__setattr__(self, name, _frozen(val))

    @classmethod
    def constant(cls, A, B, C, K: int, c=None, d=None) -> "Lssm":
        """Time-invariant model repeated over ``K`` steps."""
        A, B, C = np.atleast_2d(A), np.atleast_2d(B), np.atleast_2d(C)
        rep = lambda M: np.repeat(M[None], K, axis=0)
        return cls(rep(A), rep(B), rep(C),
                   None if c is None else rep(np.atleast_1d(c)),
                   None if d is None else rep(np.atleast_1d(d)))

    @property
    def K(self) -> int:
        return self.A.shape[0]

    @property
    def N(self) -> int:
        return self.A.shape[1]

    @property
    def L(self) -> int:
        return self.B.shape[2]

    @property
    def H(self) -> int:
        return self.C.shape[1]

    def is_constant(self) -> bool:
        return all(np.all(M == M[0]) for M in (self.A, self.B, self.C, self.c, self.d))

    def simulate(self, u, x0):
        """Deterministic rollout; returns states ``(K+1, N)`` and outputs ``(K, H)``."""
        u = np.asarray(u, float).reshape(self.K, self.L)
        x = np.empty((self.K + 1, self.N))
        x[0] = x0
        for k in range(self.K):
            x[k + 1] = self.A[k] @ x[k] + self.B[k] @ u[k] + self.c[k]
        y = np.einsum("khn,kn->kh", self.C, x[1:]) + self.d
        return x, y

    def replace(self, **kw) -> "Lssm":
        cur = dict(A=self.A, B=self.B, C=self.C, c=self.c, d=self.d)
        cur.update(kw)
        return Lssm(**cur)


@dataclass(frozen=True, eq=False)
class BoundaryCond:
    """Gaussian prior on ``x[0]`` and optional Gaussian terminal message on ``x[K]``."""

    x0_mean: np.ndarray
    x0_cov: np.ndarray
    xK_mean: Optional[np.ndarray] = None
    xK_cov: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "x0_mean", _frozen(np.atleast_1d(self.x0_mean)))
        object.__setattr__(self, "x0_cov", _frozen(np.atleast_2d(self.x0_cov)))
        if (self.xK_mean is None) != (self.xK_cov is None):
            raise ContractError("terminal mean and covariance must be given together")
        if self.xK_mean is not None:
            object.__setattr__(self, "xK_mean", _frozen(np.atleast_1d(self.xK_mean)))
            object.__setattr__(self, "xK_cov", _frozen(np.atleast_2d(self.xK_cov)))
        for cov in (self.x0_cov, self.xK_cov):
            if cov is not None and not np.allclose(cov, cov.T):
                raise ContractError("boundary covariances must be symmetric")

    @property
    def has_terminal(self) -> bool:
        return self.xK_mean is not None

    @classmethod
    def pinned(cls, x0, xK=None, var: float = 1e-12) -> "BoundaryCond":
        x0 = np.atleast_1d(np.asarray(x0, float))
        n = x0.size
        if xK is None:
            return cls(x0, var * np.eye(n))
        return cls(x0, var * np.eye(n), np.asarray(xK, float), var * np.eye(n))


@dataclass(frozen=True)
class FixedGaussian:
    mean: float
    variance: float

    def __post_init__(self):
        if not self.variance > 0:
            raise ContractError(f"fixed Gaussian variance must be positive, got {self.variance}")

    def to_dict(self):
        return {"kind": "FixedGaussian", "mean": self.mean, "variance": self.variance}


PriorSpec = Union[NuvSpec, FixedGaussian]


@dataclass(frozen=True)
class PriorAttachment:
    """A prior on one scalar: input ``u[k][index]`` or output ``y[k][index]``."""

    target: str  # "input" | "output"
    k: int
    index: int
    spec: PriorSpec
    init: Optional[PriorParams] = None

    def __post_init__(self):
        if self.target not in ("input", "output"):
            raise ContractError(f"target must be 'input' or 'output', got {self.target!r}")

    def to_dict(self):
        d = {"target": self.target, "k": self.k, "index": self.index, "spec": self.spec.to_dict()}
        if self.init is not None:
            d["init"] = list(self.init)
        return d

    @classmethod
    def from_dict(cls, d):
        s = dict(d["spec"])
        spec = FixedGaussian(s["mean"], s["variance"]) if s.get("kind") == "FixedGaussian" \
            else NuvSpec.from_dict(s)
        init = PriorParams(*d["init"]) if d.get("init") is not None else None
        return cls(d["target"], int(d["k"]), int(d["index"]), spec, init)


def attach_all(target: str, K: int, index: int, spec: PriorSpec, steps=None):
    return [PriorAttachment(target, k, index, spec) for k in (range(K) if steps is None else steps)]


def check_attachments(model: Lssm, attachments: Sequence[PriorAttachment]):
    seen = set()
    for att in attachments:
        dim = model.L if att.target == "input" else model.H
        if not (0 <= att.k < model.K and 0 <= att.index < dim):
            raise ContractError(f"attachment {att.target}[{att.k}][{att.index}] out of range")
        key = (att.target, att.k, att.index)
        if key in seen:
            raise ContractError(f"more than one prior on {att.target}[{att.k}][{att.index}]")
        seen.add(key)
    for k in range(model.K):
        for l in range(model.L):
            if ("input", k, l) not in seen:
                raise ContractError(f"input u[{k}][{l}] has no prior")


# -- augmentations ----------------------------------------------------------------


def augment_derivative_input(m: Lssm) -> Lssm:
    """Make the input increment the new input; the old input becomes state 0.

    New state ``[u_prev; x]``: ``A~ = [[1, 0], [B, A]]``, ``B~ = [1; 0]``,
    ``C~ = [0, C]``.  The state ``x`` is driven by the input stored in the
    previous state, i.e. a one-step delay relative to the original model.
    """
    if m.L != 1:
        raise ContractError(f"derivative augmentation needs a scalar input, got L={m.L}")
    K, N = m.K, m.N
    A = np.zeros((K, N + 1, N + 1))
    A[:, 0, 0] = 1.0
    A[:, 1:, :1] = m.B
    A[:, 1:, 1:] = m.A
    B = np.zeros((K, N + 1, 1))
    B[:, 0, 0] = 1.0
    C = np.concatenate([np.zeros((K, m.H, 1)), m.C], axis=2)
    c = np.concatenate([np.zeros((K, 1)), m.c], axis=1)
    return Lssm(A, B, C, c, m.d)


def augment_output_selector(m: Lssm, k_set: Sequence[int], output: int = 0) -> Lssm:
    """Add a selector input ``s[k]`` that is added to output ``output`` at steps in ``k_set``.

    The selector is carried through a memoryless extra state (its row of A is
    zero), so it enters the output equation only.  The caller attaches a
    binarizing prior over ``{0, d_k}`` to input ``L`` at each selected step.
    """
    K, N, L = m.K, m.N, m.L
    for k in k_set:
        if not 0 <= k < K:
            raise ContractError(f"selector step {k} outside horizon {K}")
    A = np.zeros((K, N + 1, N + 1))
    A[:, :N, :N] = m.A
    B = np.zeros((K, N + 1, L + 1))
    B[:, :N, :L] = m.B
    B[:, N, L] = 1.0
    C = np.concatenate([m.C, np.zeros((K, m.H, 1))], axis=2)
    for k in k_set:
        C[k, output, N] = 1.0
    c = np.concatenate([m.c, np.zeros((K, 1))], axis=1)
    return Lssm(A, B, C, c, m.d)


def augment_m_level_input(m: Lssm, coeffs: Sequence[float], offset: float, index: int = 0) -> Lssm:
    """Replace input ``index`` by ``offset + sum_j coeffs[j] * v_j`` with new inputs ``v_j``."""
    coeffs = np.asarray(coeffs, float)
    cols = [m.B[:, :, i:i + 1] for i in range(m.L) if i != index]
    b = m.B[:, :, index]
    new = b[:, :, None] * coeffs[None, None, :]
    B = np.concatenate([new] + cols, axis=2)
    c = m.c + offset * b
    return m.replace(B=B, c=c)


# -- linearization ------------------------------------------------------------------


@dataclass
class NonlinearStage:
    """Continuous-time (or spatial) dynamics ``dx = f(x, u)`` and output ``y = f_o(x)``.

    Jacobians are optional; missing ones are obtained by central differences.
    Either part may be ``None`` for pure-output or pure-dynamics stages.
    """

    f: Optional[Callable] = None
    f_o: Optional[Callable] = None
    jac_x: Optional[Callable] = None
    jac_u: Optional[Callable] = None
    jac_o: Optional[Callable] = None


@dataclass
class AffineStep:
    A: Optional[np.ndarray] = None
    B: Optional[np.ndarray] = None
    c: Optional[np.ndarray] = None
    C: Optional[np.ndarray] = None
    d: Optional[np.ndarray] = None


def fd_jacobian(fun, x, rel_step: float = 1e-6):
    """Central-difference Jacobian with step ``rel_step * (1 + |x_i|)``."""
    x = np.asarray(x, float)
    f0 = np.atleast_1d(fun(x))
    J = np.empty((f0.size, x.size))
    for i in range(x.size):
        h = rel_step * (1.0 + abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        J[:, i] = (np.atleast_1d(fun(xp)) - np.atleast_1d(fun(xm))) / (2 * h)
    return J


def linearize_stage(stage: NonlinearStage, x_star, u_star=None, step: float = 1.0,
                    index=None) -> AffineStep:
    """First-order (Euler) affine approximation around ``(x*, u*)``.

    ``A = I + step * df/dx``, ``B = step * df/du``,
    ``c = x* + step * f(x*, u*) - A x* - B u*``; ``C = df_o/dx``,
    ``d = f_o(x*) - C x*``.
    """
    x_star = np.asarray(x_star, float)
    out = AffineStep()
    if stage.f is not None:
        if not step > 0:
            raise LinearizationError("step must be positive for dynamics stages", index)
        u_star = np.asarray(u_star, float)
        fx = stage.jac_x(x_star, u_star) if stage.jac_x else \
            fd_jacobian(lambda x: stage.f(x, u_star), x_star)
        fu = stage.jac_u(x_star, u_star) if stage.jac_u else \
            fd_jacobian(lambda u: stage.f(x_star, u), u_star)
        f0 = np.asarray(stage.f(x_star, u_star), float)
        if not (np.all(np.isfinite(fx)) and np.all(np.isfinite(fu)) and np.all(np.isfinite(f0))):
            raise LinearizationError(f"non-finite dynamics Jacobian at stage {index}", index)
        out.A = np.eye(x_star.size) + step * fx
        out.B = step * fu
        out.c = x_star + step * f0 - out.A @ x_star - out.B @ u_star
    if stage.f_o is not None:
        Co = stage.jac_o(x_star) if stage.jac_o else fd_jacobian(stage.f_o, x_star)
        Co = np.atleast_2d(Co)
        y0 = np.atleast_1d(stage.f_o(x_star))
        if not (np.all(np.isfinite(Co)) and np.all(np.isfinite(y0))):
            raise LinearizationError(f"non-finite output Jacobian at stage {index}", index)
        out.C = Co
        out.d = y0 - Co @ x_star
    return out


# -- JSON ----------------------------------------------------------------------------


def model_to_dict(m: Lssm, bc: Optional[BoundaryCond] = None, attachments=()) -> dict:
    doc = {"dims": {"K": m.K, "N": m.N, "L": m.L, "H": m.H}}
    if m.is_constant():
        doc["constant"] = True
        doc.update({k: getattr(m, k)[0].tolist() for k in ("A", "B", "C", "c", "d")})
    else:
        doc["constant"] = False
        doc.update({k: getattr(m, k).tolist() for k in ("A", "B", "C", "c", "d")})
    if bc is not None:
        doc["boundary"] = {
            "x0_mean": bc.x0_mean.tolist(), "x0_cov": bc.x0_cov.tolist(),
            "xK_mean": None if bc.xK_mean is None else bc.xK_mean.tolist(),
            "xK_cov": None if bc.xK_cov is None else bc.xK_cov.tolist(),
        }
    doc["attachments"] = [a.to_dict() for a in attachments]
    return doc


def model_from_dict(doc: dict):
    dims = doc["dims"]
    K = int(dims["K"])
    if doc.get("constant", False):
        m = Lssm.constant(np.array(doc["A"]), np.array(doc["B"]), np.array(doc["C"]), K,
                          np.array(doc["c"]), np.array(doc["d"]))
    else:
        m = Lssm(*(np.array(doc[k], float) for k in ("A", "B", "C", "c", "d")))
    if (m.K, m.N, m.L, m.H) != (K, dims["N"], dims["L"], dims["H"]):
        raise ContractError(f"dims {dims} do not match matrices")
    bc = None
    if doc.get("boundary"):
        b = doc["boundary"]
        bc = BoundaryCond(b["x0_mean"], b["x0_cov"], b.get("xK_mean"), b.get("xK_cov"))
    atts = [PriorAttachment.from_dict(a) for a in doc.get("attachments", [])]
    return m, bc, atts


def dump_model(path, m, bc=None, attachments=()):
    with open(path, "w") as fh:
        json.dump(model_to_dict(m, bc, attachments), fh, indent=1)


def load_model(path):
    with open(path) as fh:
        return model_from_dict(json.load(fh))
