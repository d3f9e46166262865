"""Finite-difference checks of every hand-written derivative.

Error metric: ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.
The floor keeps derivatives that are tiny compared with the function value
(saturated sigmoids, ``exp(-10)``) from being judged by their rounding noise
alone; above it the metric is the ordinary relative error.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import scaleparam as sp
from .gaussian import DiagGaussian, kl, kl_grad, log_prob, log_prob_grad
from .nn import Activation, Mlp, backward, forward
from .rng import make_generator, standard_normal
from .scaleparam import ScaleParameterization
from .vae import DecodedScale, Vae, VaeConfig, elbo

ERROR_FLOOR = 1e-3
SCALE_POINTS = (-10.0, -1.0, -1e-3, 0.0, 1e-3, 1.0, 10.0)


def fd_error(analytic, numeric, floor: float = ERROR_FLOOR) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_error: float
    tol: float
    n_points: int
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(self.max_error < self.tol)  # NaN fails


@dataclass(frozen=True)
class ElementwiseCheck:
    """Derivative of an elementwise map, probed at independent points.

    At ``p == 0`` the difference is one-sided from below (second order), since
    piecewise definitions put 0 in the ``p <= 0`` branch.
    """

    name: str
    f: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray]
    points: Sequence[float] = SCALE_POINTS
    h: float = 1e-6
    tol: float = 1e-6

    def run(self) -> CheckResult:
        t0 = time.perf_counter()
        p = np.asarray(self.points, dtype=np.float64)
        h = self.h
        central = (self.f(p + h) - self.f(p - h)) / (2 * h)
        below = (3 * self.f(p) - 4 * self.f(p - h) + self.f(p - 2 * h)) / (2 * h)
        numeric = np.where(p == 0.0, below, central)
        err = fd_error(self.df(p), numeric)
        return CheckResult(self.name, float(np.max(err)), self.tol, p.size, time.perf_counter() - t0)


@dataclass(frozen=True)
class ScalarCheck:
    """Gradient of a scalar function of a vector, probed coordinate by coordinate.

    ``order=4`` switches to the five-point stencil, which tolerates a larger
    ``h`` and so less cancellation noise.
    """

    name: str
    f: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    x0: np.ndarray
    h: float = 1e-6
    tol: float = 1e-6
    coords: Sequence[int] | None = None
    order: int = 2

    def _diff(self, x0: np.ndarray, i: int) -> float:
        def at(k):
            x = x0.copy()
            x.flat[i] += k * self.h
            return self.f(x)

        if self.order == 4:
            return (at(-2) - 8 * at(-1) + 8 * at(1) - at(2)) / (12 * self.h)
        return (at(1) - at(-1)) / (2 * self.h)

    def run(self) -> CheckResult:
        t0 = time.perf_counter()
        x0 = np.array(self.x0, dtype=np.float64)
        analytic = np.asarray(self.grad(x0.copy()), dtype=np.float64).ravel()
        coords = range(x0.size) if self.coords is None else self.coords
        errs = []
        for i in coords:
            errs.append(float(fd_error(analytic[i], self._diff(x0, i))))
        return CheckResult(self.name, max(errs), self.tol, len(errs), time.perf_counter() - t0)


Check = ElementwiseCheck | ScalarCheck


# -- parameterizations ------------------------------------------------------------

CHECKED_PARAMS = (
    "naive-exp", "exp", "explin", "upbounded:1", "upbounded:2.5",
    "downbounded:0.0001", f"bounded:{sp.PIXEL_ALPHA!r}:1", "bounded:0.1:3",
)


def scaleparam_checks() -> list[ElementwiseCheck]:
    out = []
    for text in CHECKED_PARAMS:
        param = ScaleParameterization.parse(text)
        out.append(ElementwiseCheck(
            f"scaleparam/{param}/dsigma_dp",
            lambda p, q=param: np.asarray(sp.sigma(q, p)),
            lambda p, q=param: np.asarray(sp.dsigma_dp(q, p)),
        ))
        out.append(ElementwiseCheck(
            f"scaleparam/{param}/dlog_sigma_dp",
            lambda p, q=param: np.asarray(sp.log_sigma(q, p)),
            lambda p, q=param: np.asarray(sp.dlog_sigma_dp(q, p)),
        ))
    return out


# -- Gaussian kernels ---------------------------------------------------------

def gaussian_checks(n_pairs: int = 5, dim: int = 4, seed: int = 11) -> list[ScalarCheck]:
    gen = make_generator(seed)
    params = [ScaleParameterization.parse(t) for t in ("exp", "explin", "upbounded:1", "bounded:0.01:2")]
    out = []
    for k in range(n_pairs):
        param = params[k % len(params)]
        x0 = np.concatenate([gen.uniform(-2, 2, dim), gen.uniform(-2, 1, dim),
                             gen.uniform(-2, 2, dim), gen.uniform(-2, 1, dim)])

        def kl_f(x, q=param):
            a, b, c, d = np.split(x, 4)
            return kl(DiagGaussian(a, b, q), DiagGaussian(c, d, q))[1]

        def kl_g(x, q=param):
            a, b, c, d = np.split(x, 4)
            return np.concatenate(kl_grad(DiagGaussian(a, b, q), DiagGaussian(c, d, q)))

        out.append(ScalarCheck(f"gaussian/kl/{param}/{k}", kl_f, kl_g, x0))

        x = gen.uniform(-2, 2, dim)

        def lp_f(v, q=param, x=x):
            mu, p = np.split(v, 2)
            return log_prob(x, DiagGaussian(mu, p, q))

        def lp_g(v, q=param, x=x):
            mu, p = np.split(v, 2)
            return np.concatenate(log_prob_grad(x, DiagGaussian(mu, p, q)))

        out.append(ScalarCheck(f"gaussian/log_prob/{param}/{k}", lp_f, lp_g, x0[: 2 * dim]))
    return out


# -- networks -----------------------------------------------------------------

def flat(arrays: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([a.ravel() for a in arrays])


def assign(arrays: Sequence[np.ndarray], theta: np.ndarray):
    offset = 0
    for a in arrays:
        a[...] = theta[offset: offset + a.size].reshape(a.shape)
        offset += a.size


def mlp_checks(seed: int = 5) -> list[ScalarCheck]:
    out = []
    for act in (Activation.RELU, Activation.SIGMOID):
        gen = make_generator([seed, len(out)])
        net = Mlp.init([5, 7, 6, 3], gen, hidden=act)
        x = gen.normal(size=(4, 5))
        R = gen.normal(size=(4, 3))
        params = net.params()

        def f(theta, net=net, params=params, x=x, R=R):
            assign(params, theta)
            return float(np.sum(forward(net, x)[0] * R))

        def g(theta, net=net, params=params, x=x, R=R):
            assign(params, theta)
            _, cache = forward(net, x)
            return flat(backward(net, cache, R)[0])

        out.append(ScalarCheck(f"nn/params/{act.value}", f, g, flat(params)))

        def fx(xv, net=net, R=R):
            return float(np.sum(forward(net, xv.reshape(4, 5))[0] * R))

        def gx(xv, net=net, R=R):
            _, cache = forward(net, xv.reshape(4, 5))
            return backward(net, cache, R)[1].ravel()

        out.append(ScalarCheck(f"nn/input/{act.value}", fx, gx, x.ravel()))
    return out


# -- ELBO ------------------------------------------------------------------------

ELBO_VARIANTS = (
    ("upbounded:1", "global:naive-exp", "identity"),
    ("exp", "per-pixel:exp", "sigmoid"),
    ("explin", f"per-pixel:bounded:{sp.PIXEL_ALPHA!r}:1", "sigmoid"),
    ("bounded:0.001:1", "per-pixel:downbounded:0.01", "identity"),
    ("naive-exp", "fixed:0.5", "identity"),
)


def elbo_check(enc: str, dec: str, mean: str, d: int = 8, latent: int = 2, seed: int = 3) -> ScalarCheck:
    cfg = VaeConfig(
        d, latent, (12,), (12,), ScaleParameterization.parse(enc), DecodedScale.parse(dec),
        mean_activation=mean, hidden_activation=Activation.SIGMOID, seed=seed,
    )
    model = Vae(cfg)
    gen = make_generator([seed, 9])
    x = gen.random((5, d))
    eps = standard_normal(gen, (5, latent))
    params = model.params()
    if model.global_p is not None:
        model.global_p[0] = -0.3

    def f(theta):
        assign(params, theta)
        return elbo(model, x, eps)[0]

    def g(theta):
        assign(params, theta)
        return flat(model.loss_and_grads(x, eps)[3])

    return ScalarCheck(f"vae/elbo/enc={enc}/dec={dec}/mean={mean}", f, g, flat(params), h=1e-5, tol=1e-4)


def vae_checks() -> list[ScalarCheck]:
    return [elbo_check(*v) for v in ELBO_VARIANTS]


def default_checks() -> list[Check]:
    return [*scaleparam_checks(), *gaussian_checks(), *mlp_checks(), *vae_checks()]


@dataclass
class Report:
    results: list[CheckResult] = field(default_factory=list)

    @property
    def failures(self) -> list[CheckResult]:
        return [r for r in self.results if not r.passed]

    @property
    def ok(self) -> bool:
        return not self.failures

    def format(self) -> str:
        lines = [
            f"{'PASS' if r.passed else 'FAIL'}  {r.name}  max_err={r.max_error:.2e} tol={r.tol:g} n={r.n_points}"
            for r in self.results
        ]
        lines.append(f"{len(self.results) - len(self.failures)}/{len(self.results)} checks passed")
        return "\n".join(lines)


def run_all(checks: Sequence[Check] | None = None) -> Report:
    checks = default_checks() if checks is None else checks
    with np.errstate(all="ignore"):
        return Report([c.run() for c in checks])
