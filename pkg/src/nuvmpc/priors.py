"""Closed-form NUV parameter updates.

Every update maps posterior statistics of a scalar variable (mean ``m_X`` and,
for the EM-type rules, variance ``V_X``) to new Gaussian message parameters
``(fwd_mean, fwd_variance)``.  The array-level helpers (``box_rule`` and
friends) broadcast over numpy arrays so the IAKE loop can update thousands of
variables at once; the ``update_*`` functions are the scalar, spec-checked
entry points.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

EPS_REL = 1e-12
SYMMETRY_BREAK = 1e-3


class ContractError(ValueError):
    """A precondition of an update rule or builder is violated."""


class NuvKind(str, enum.Enum):
    L1 = "L1"
    LP = "Lp"
    HUBER = "SmoothedL1Huber"
    PLAIN = "PlainNuv"
    SMOOTHED_PLAIN = "SmoothedPlainNuv"
    HALF_SPACE_LOWER = "HalfSpaceLower"
    HALF_SPACE_UPPER = "HalfSpaceUpper"
    BOX = "Box"
    BINARIZING_AM = "BinarizingAM"
    BINARIZING_EM = "BinarizingEM"


BASIC_KINDS = frozenset(
    {NuvKind.L1, NuvKind.LP, NuvKind.HUBER, NuvKind.PLAIN, NuvKind.SMOOTHED_PLAIN}
)
# Rules that read the posterior variance.
VARIANCE_KINDS = frozenset({NuvKind.PLAIN, NuvKind.SMOOTHED_PLAIN, NuvKind.BINARIZING_EM})


@dataclass(frozen=True)
class NuvSpec:
    """Declarative prior on one scalar variable.

    ``a`` and ``b`` are the bounds (box), the threshold (half-space, ``a`` only)
    or the two levels (binarizing).  ``gamma`` is the slope of the L1-type
    costs, ``p`` the Lp exponent and ``r2`` the smoothing floor.
    """

    kind: NuvKind
    gamma: float = 1.0
    p: float = 1.0
    r2: float = 0.0
    a: float = 0.0
    b: float = 1.0
    use_posterior_variance: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kind", NuvKind(self.kind))
        if self.kind in (NuvKind.L1, NuvKind.LP, NuvKind.HUBER, NuvKind.BOX,
                         NuvKind.HALF_SPACE_LOWER, NuvKind.HALF_SPACE_UPPER):
            if not self.gamma > 0:
                raise ContractError(f"{self.kind.value}: gamma must be positive, got {self.gamma}")
        if self.kind == NuvKind.LP and not 0 < self.p <= 2:
            raise ContractError(f"Lp exponent must lie in (0, 2], got {self.p}")
        if self.r2 < 0:
            raise ContractError(f"r2 must be nonnegative, got {self.r2}")
        if self.kind in (NuvKind.BOX, NuvKind.BINARIZING_AM, NuvKind.BINARIZING_EM):
            if not self.a < self.b:
                raise ContractError(f"{self.kind.value}: need a < b, got a={self.a}, b={self.b}")

    @property
    def needs_variance(self) -> bool:
        if self.kind == NuvKind.SMOOTHED_PLAIN:
            return self.use_posterior_variance
        return self.kind in VARIANCE_KINDS

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value, "gamma": self.gamma, "p": self.p, "r2": self.r2,
            "a": self.a, "b": self.b, "use_posterior_variance": self.use_posterior_variance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NuvSpec":
        return cls(**d)


class Posterior(NamedTuple):
    mean: float
    variance: float = 0.0


class PriorParams(NamedTuple):
    fwd_mean: float
    fwd_variance: float


def eps_for(a=0.0, b=0.0):
    """Clamp floor for differences and variances near the levels ``a``, ``b``."""
    return EPS_REL * np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))


# -- array-level rules -------------------------------------------------------


def box_rule(m, a, b, gamma):
    eps = eps_for(a, b)
    wa = gamma / np.maximum(np.abs(m - a), eps)
    wb = gamma / np.maximum(np.abs(m - b), eps)
    var = 1.0 / (wa + wb)
    return var * (wa * a + wb * b), var


def half_space_rule(m, a, gamma, upper):
    """``upper`` selects ``x <= a``; otherwise ``x >= a``."""
    eps = eps_for(a)
    dist = np.abs(m - a)
    var = np.maximum(dist, eps) / gamma
    mean = np.where(upper, a - dist, a + dist)
    return mean, var


def binarizing_rule(m, v, a, b):
    """EM update; with ``v = 0`` it is the AM update."""
    eps = eps_for(a, b)
    sa = np.maximum(v + (m - a) ** 2, eps)
    sb = np.maximum(v + (m - b) ** 2, eps)
    var = 1.0 / (1.0 / sa + 1.0 / sb)
    return var * (a / sa + b / sb), var


def basic_rule(kind, m, v, gamma=1.0, p=1.0, r2=0.0, use_posterior_variance=True):
    kind = NuvKind(kind)
    eps = EPS_REL
    absm = np.maximum(np.abs(m), eps)
    if kind == NuvKind.L1:
        var = absm / gamma
    elif kind == NuvKind.LP:
        var = absm ** (2.0 - p) / (gamma * p)
    elif kind == NuvKind.HUBER:
        var = np.maximum(r2, np.abs(m) / gamma)
    elif kind == NuvKind.PLAIN:
        var = v + m * m
    elif kind == NuvKind.SMOOTHED_PLAIN:
        var = np.maximum(r2, (v if use_posterior_variance else 0.0) + m * m)
    else:
        raise ContractError(f"{kind.value} is not a basic NUV prior")
    var = np.maximum(var, eps)
    return np.zeros_like(var), var


def rule_arrays(kind, m, v, gamma=1.0, p=1.0, r2=0.0, a=0.0, b=1.0,
                use_posterior_variance=True):
    """Vectorized dispatch on ``kind``; every argument may be an array."""
    kind = NuvKind(kind)
    if kind in BASIC_KINDS:
        return basic_rule(kind, m, v, gamma, p, r2, use_posterior_variance)
    if kind == NuvKind.BOX:
        return box_rule(m, a, b, gamma)
    if kind == NuvKind.HALF_SPACE_LOWER:
        return half_space_rule(m, a, gamma, False)
    if kind == NuvKind.HALF_SPACE_UPPER:
        return half_space_rule(m, a, gamma, True)
    if kind == NuvKind.BINARIZING_AM:
        return binarizing_rule(m, 0.0, a, b)
    if kind == NuvKind.BINARIZING_EM:
        return binarizing_rule(m, v, a, b)
    raise ContractError(f"unsupported prior kind {kind!r}")


def apply_rule(spec: NuvSpec, m, v=0.0):
    """Returns ``(fwd_mean, fwd_variance)`` for the prior ``spec``."""
    return rule_arrays(spec.kind, m, v, spec.gamma, spec.p, spec.r2, spec.a, spec.b,
                       spec.use_posterior_variance)


# -- scalar entry points ------------------------------------------------------


def _params(mean, var) -> PriorParams:
    return PriorParams(float(mean), float(var))


def update_basic(spec: NuvSpec, post: Posterior) -> PriorParams:
    """Table-I style update for L1, Lp, Huber and the plain NUV priors.

    The forward mean stays zero; only the variance is re-estimated.
    """
    if spec.kind not in BASIC_KINDS:
        raise ContractError(f"update_basic does not handle {spec.kind.value}")
    return _params(*basic_rule(spec.kind, post.mean, post.variance, spec.gamma,
                               spec.p, spec.r2, spec.use_posterior_variance))


def update_box(spec: NuvSpec, m_x: float) -> PriorParams:
    if spec.kind != NuvKind.BOX:
        raise ContractError(f"update_box needs a Box spec, got {spec.kind.value}")
    return _params(*box_rule(m_x, spec.a, spec.b, spec.gamma))


def update_half_space(spec: NuvSpec, m_x: float) -> PriorParams:
    if spec.kind == NuvKind.HALF_SPACE_LOWER:
        return _params(*half_space_rule(m_x, spec.a, spec.gamma, False))
    if spec.kind == NuvKind.HALF_SPACE_UPPER:
        return _params(*half_space_rule(m_x, spec.a, spec.gamma, True))
    raise ContractError(f"update_half_space needs a half-space spec, got {spec.kind.value}")


def update_binarizing_em(spec: NuvSpec, post: Posterior) -> PriorParams:
    if spec.kind != NuvKind.BINARIZING_EM:
        raise ContractError(f"expected BinarizingEM, got {spec.kind.value}")
    return _params(*binarizing_rule(post.mean, post.variance, spec.a, spec.b))


def update_binarizing_am(spec: NuvSpec, m_x: float) -> PriorParams:
    if spec.kind != NuvKind.BINARIZING_AM:
        raise ContractError(f"expected BinarizingAM, got {spec.kind.value}")
    return _params(*binarizing_rule(m_x, 0.0, spec.a, spec.b))


def update(spec: NuvSpec, post: Posterior) -> PriorParams:
    """Dispatch to the rule matching ``spec.kind``."""
    if not np.isfinite(post.mean) or not np.isfinite(post.variance):
        raise ContractError(f"non-finite posterior {post}")
    return _params(*apply_rule(spec, post.mean, post.variance))


def initial_params(spec: NuvSpec) -> PriorParams:
    """Default starting point: zero mean (level midpoint for binarizing), unit variance."""
    if spec.kind in (NuvKind.BINARIZING_AM, NuvKind.BINARIZING_EM):
        return PriorParams(0.5 * (spec.a + spec.b), 1.0)
    return PriorParams(0.0, 1.0)


# -- M-level priors -----------------------------------------------------------


@dataclass(frozen=True)
class MLevelExpansion:
    """``X = offset + sum_j coeffs[j] * X_j`` with every ``X_j`` binarized to {0, 1}."""

    coeffs: tuple[float, ...]
    offset: float
    levels: tuple[float, ...]
    init_variances: tuple[tuple[float, float], ...] = field(default=())

    @property
    def n_binaries(self) -> int:
        return len(self.coeffs)

    def binary_spec(self, em: bool = True) -> NuvSpec:
        return NuvSpec(NuvKind.BINARIZING_EM if em else NuvKind.BINARIZING_AM, a=0.0, b=1.0)

    def initial_params(self) -> list[PriorParams]:
        """Forward parameters implied by the (slightly asymmetric) initial variances."""
        out = []
        for sa, sb in self.init_variances:
            var = 1.0 / (1.0 / sa + 1.0 / sb)
            out.append(PriorParams(var * (1.0 / sb), var))
        return out

    def combine(self, binaries) -> np.ndarray:
        """Map binary estimates (last axis of length J) back to the level variable."""
        return self.offset + np.asarray(binaries) @ np.asarray(self.coeffs)


def expand_m_level(levels: Sequence[float], equal_coeffs: bool = True,
                   delta_sym: float = SYMMETRY_BREAK) -> MLevelExpansion:
    """Represent M levels as a linear combination of binary variables.

    With ``equal_coeffs`` the M equidistant levels need J = M - 1 binaries of
    equal weight.  Otherwise power-of-two weights are used, which requires
    M = 2**J equidistant levels.
    """
    lv = np.asarray(sorted(levels), dtype=float)
    if lv.size < 2:
        raise ContractError("need at least two levels")
    gaps = np.diff(lv)
    if np.any(gaps <= 0):
        raise ContractError(f"levels must be distinct, got {list(levels)}")
    step = gaps[0]
    if not np.allclose(gaps, step, rtol=1e-9, atol=0.0):
        raise ContractError(f"levels are not equidistant: {list(levels)}")
    m = lv.size
    if equal_coeffs:
        coeffs = [float(step)] * (m - 1)
    else:
        j = int(round(np.log2(m)))
        if 2 ** j != m:
            raise ContractError(f"power-of-two coefficients need 2**J levels, got M={m}")
        coeffs = [float(step) * 2 ** i for i in range(j)]
    init = tuple((1.0 + i * delta_sym, 1.0 + i * delta_sym) for i in range(len(coeffs)))
    return MLevelExpansion(tuple(coeffs), float(lv[0]), tuple(float(x) for x in lv), init)
