"""Constrained model-predictive control with NUV priors and Kalman smoothing."""

__version__ = "0.1.0"

from .iake import IakeConfig, IakeResult, iake_solve, relinearized_solve  # noqa: E402
from .lssm import BoundaryCond, FixedGaussian, Lssm, PriorAttachment  # noqa: E402
from .mbf import GaussianPriors, smooth  # noqa: E402
from .priors import NuvKind, NuvSpec, PriorParams  # noqa: E402

__all__ = [
    "BoundaryCond",
    "FixedGaussian",
    "GaussianPriors",
    "IakeConfig",
    "IakeResult",
    "Lssm",
    "NuvKind",
    "NuvSpec",
    "PriorAttachment",
    "PriorParams",
    "iake_solve",
    "relinearized_solve",
    "smooth",
]
