"""Diagonal Normal distributions parameterized by a mean and a pre-scale ``p``.

The KL divergence and log-density are computed from the log-scale returned by
the parameterization, so a vanishing scale never reaches a logarithm. The
``kl_naive_quotient`` variant keeps the library-style log-quotient for
comparison.

Arrays may carry leading batch axes; the distribution dimension is the last
axis and totals are summed over it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import scaleparam as sp
from .precision import Arith, FloatMode, QuotientVariant, naive_log_ratio
from .rng import make_generator, standard_normal
from .scaleparam import ScaleParameterization

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class DiagGaussian:
    mu: np.ndarray
    p: np.ndarray
    param: ScaleParameterization

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))
        p = np.atleast_1d(np.asarray(self.p, dtype=np.float64))
        if mu.shape != p.shape:
            raise ValueError(f"mu shape {mu.shape} != p shape {p.shape}")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(p))):
            raise ValueError("DiagGaussian parameters must be finite")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "p", p)

    @property
    def dim(self) -> int:
        return self.mu.shape[-1]

    def sigma(self, mode: FloatMode = FloatMode.F64) -> np.ndarray:
        return np.asarray(sp.sigma(self.param, self.p, mode))

    def log_sigma(self, mode: FloatMode = FloatMode.F64) -> np.ndarray:
        return np.asarray(sp.log_sigma(self.param, self.p, mode))


def _check_dims(a: DiagGaussian, b: DiagGaussian):
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")


def kl_terms(mu1, ls1, s1, mu2, ls2, s2, mode: FloatMode = FloatMode.F64, log_ratio=None):
    """Per-dimension KL(N(mu1, s1) || N(mu2, s2)) from precomputed scales.

    ``log_ratio`` overrides ``ls2 - ls1`` (used by the naive variant).
    """
    ar = Arith(mode)
    if log_ratio is None:
        log_ratio = ar.sub(ls2, ls1)
    # ratios before squares: s2**2 alone underflows long before the KL is large;
    # halving before the second multiply keeps r**2 / 2 from overflowing early
    ratio = ar.div(s1, s2)
    dist = ar.div(ar.sub(mu1, mu2), s2)
    quad = ar.add(ar.mul(ar.mul(0.5, ratio), ratio), ar.mul(ar.mul(0.5, dist), dist))
    return np.asarray(ar.sub(ar.add(log_ratio, quad), 0.5))


def kl(q1: DiagGaussian, q2: DiagGaussian, mode: FloatMode = FloatMode.F64):
    """Returns ``(per_dim, total)``."""
    _check_dims(q1, q2)
    per_dim = kl_terms(
        q1.mu, q1.log_sigma(mode), q1.sigma(mode),
        q2.mu, q2.log_sigma(mode), q2.sigma(mode),
        mode,
    )
    return per_dim, Arith(mode).sum(per_dim)


def kl_naive_quotient(
    q1: DiagGaussian,
    q2: DiagGaussian,
    mode: FloatMode = FloatMode.F64,
    variant: QuotientVariant = QuotientVariant.SQUARED,
):
    _check_dims(q1, q2)
    s1, s2 = q1.sigma(mode), q2.sigma(mode)
    log_ratio = naive_log_ratio(mode, variant, s1, s2)
    per_dim = kl_terms(q1.mu, None, s1, q2.mu, None, s2, mode, log_ratio=log_ratio)
    return Arith(mode).sum(per_dim)


def kl_vs_standard_prior(q: DiagGaussian, mode: FloatMode = FloatMode.F64):
    """KL against N(0, 1) with the prior scale held at the exact constant 1."""
    per_dim = kl_terms(q.mu, q.log_sigma(mode), q.sigma(mode), 0.0, 0.0, 1.0, mode)
    return Arith(mode).sum(per_dim)


def kl_grad(q1: DiagGaussian, q2: DiagGaussian):
    """Gradients of the float64 KL total w.r.t. ``(mu1, p1, mu2, p2)``."""
    _check_dims(q1, q2)
    s1, s2 = q1.sigma(), q2.sigma()
    diff = q1.mu - q2.mu
    inv_var2 = 1.0 / (s2 * s2)
    d_mu1 = diff * inv_var2
    d_p1 = -sp.dlog_sigma_dp(q1.param, q1.p) + s1 * inv_var2 * sp.dsigma_dp(q1.param, q1.p)
    d_p2 = sp.dlog_sigma_dp(q2.param, q2.p) - (
        (s1 * s1 + diff * diff) * inv_var2 / s2 * sp.dsigma_dp(q2.param, q2.p)
    )
    return d_mu1, d_p1, -d_mu1, d_p2


def log_prob_terms(x, mu, ls, s, mode: FloatMode = FloatMode.F64) -> np.ndarray:
    ar = Arith(mode)
    r = ar.div(ar.sub(x, mu), s)
    quad = ar.mul(ar.mul(0.5, r), r)
    return np.asarray(ar.neg(ar.add(ar.add(ls, HALF_LOG_2PI), quad)))


def log_prob(x, g: DiagGaussian, mode: FloatMode = FloatMode.F64):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != g.dim:
        raise ValueError(f"x has dimension {x.shape[-1]}, distribution has {g.dim}")
    terms = log_prob_terms(x, g.mu, g.log_sigma(mode), g.sigma(mode), mode)
    return Arith(mode).sum(terms)


def log_prob_grad(x, g: DiagGaussian):
    """Gradients of the float64 log-density w.r.t. ``(mu, p)``."""
    x = np.asarray(x, dtype=np.float64)
    s = g.sigma()
    r = x - g.mu
    d_mu = r / (s * s)
    d_p = -sp.dlog_sigma_dp(g.param, g.p) + r * r / (s * s * s) * sp.dsigma_dp(g.param, g.p)
    return d_mu, d_p


def sample(g: DiagGaussian, eps, mode: FloatMode = FloatMode.F64) -> np.ndarray:
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape[-1] != g.dim:
        raise ValueError(f"eps has dimension {eps.shape[-1]}, distribution has {g.dim}")
    ar = Arith(mode)
    return np.asarray(ar.add(g.mu, ar.mul(g.sigma(mode), eps)))


def optimal_gamma(residuals) -> float:
    """Decoder scale that maximizes a Gaussian likelihood with these residuals."""
    r = np.asarray(residuals, dtype=np.float64).ravel()
    if r.size == 0:
        raise ValueError("optimal_gamma needs at least one residual")
    return float(np.sqrt(np.mean(r * r)))


def mc_kl_estimate(q1: DiagGaussian, q2: DiagGaussian, n: int, seed: int = 0):
    """Monte-Carlo KL(q1 || q2) with its standard error. Returns ``(estimate, std_err)``."""
    _check_dims(q1, q2)
    if n < 1000:
        raise ValueError(f"mc_kl_estimate needs n >= 1000, got {n}")
    eps = standard_normal(make_generator(seed), (n,) + q1.mu.shape)
    s1, s2 = q1.sigma(), q2.sigma()
    z = q1.mu + s1 * eps
    log_q1 = log_prob_terms(z, q1.mu, q1.log_sigma(), s1)
    log_q2 = log_prob_terms(z, q2.mu, q2.log_sigma(), s2)
    diff = (log_q1 - log_q2).reshape(n, -1).sum(axis=1)
    return float(diff.mean()), float(diff.std(ddof=1) / math.sqrt(n))
