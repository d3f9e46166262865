"""Numerically stable Gaussian scale parameterizations for VAE training.

Includes emulated float32/float16 arithmetic, stable KL and log-density
kernels, a hand-differentiated MLP VAE, and instability metrics for training
runs.
"""

from .precision import FloatMode, QuotientVariant, q_op, round_to
from .scaleparam import ScaleParameterization, dlog_sigma_dp, dsigma_dp, log_sigma, sigma

__all__ = [
    "FloatMode",
    "QuotientVariant",
    "ScaleParameterization",
    "dlog_sigma_dp",
    "dsigma_dp",
    "log_sigma",
    "q_op",
    "round_to",
    "sigma",
]

__version__ = "0.1.0"
