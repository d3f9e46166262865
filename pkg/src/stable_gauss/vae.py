"""Variational autoencoder with configurable encoded and decoded scale parameterizations.

Network layers always run in float64; the float mode of the config applies to
the distribution layer (scales, log-scales, sampling, KL, log-density).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from . import scaleparam as sp
from .data import DEQUANT_WIDTH
from .gaussian import DiagGaussian, kl_terms, log_prob_terms
from .nn import Activation, AdamState, Mlp, adam_step, backward, forward, sigmoid
from .precision import Arith, FloatMode
from .rng import make_generator, standard_normal
from .scaleparam import ScaleParameterization


class DecodedKind(str, Enum):
    GLOBAL = "global"
    PER_PIXEL = "per-pixel"
    FIXED = "fixed"


@dataclass(frozen=True)
class DecodedScale:
    kind: DecodedKind
    param: ScaleParameterization | None = None
    value: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", DecodedKind(self.kind))
        if self.kind is DecodedKind.FIXED:
            if not self.value > 0:
                raise ValueError(f"fixed decoded scale must be positive, got {self.value}")
        elif self.param is None:
            raise ValueError(f"{self.kind.value} decoded scale needs a parameterization")

    @classmethod
    def parse(cls, text: str) -> "DecodedScale":
        """``global:<param>``, ``per-pixel:<param>`` or ``fixed:<sigma>``."""
        head, _, rest = text.strip().partition(":")
        kind = DecodedKind(head.lower())
        if kind is DecodedKind.FIXED:
            return cls(kind, value=float(rest) if rest else 1.0)
        return cls(kind, ScaleParameterization.parse(rest))

    def __str__(self) -> str:
        if self.kind is DecodedKind.FIXED:
            return f"fixed:{self.value:g}"
        return f"{self.kind.value}:{self.param}"


@dataclass
class VaeConfig:
    input_dim: int
    latent_dim: int
    encoder_arch: Sequence[int] = (128,)
    decoder_arch: Sequence[int] = (128,)
    encoded_param: ScaleParameterization = sp.UPBOUNDED1
    decoded: DecodedScale = field(default_factory=lambda: DecodedScale(DecodedKind.GLOBAL, sp.NAIVE_EXP))
    mean_activation: Activation = Activation.IDENTITY
    hidden_activation: Activation = Activation.RELU
    lr: float = 1e-3
    batch_size: int = 64  # 0 means full batch
    steps: int = 1000
    seed: int = 0
    mode: FloatMode = FloatMode.F64

    def __post_init__(self):
        self.mode = FloatMode.parse(self.mode)
        self.mean_activation = Activation(self.mean_activation)
        self.hidden_activation = Activation(self.hidden_activation)
        self.encoder_arch = tuple(int(w) for w in self.encoder_arch)
        self.decoder_arch = tuple(int(w) for w in self.decoder_arch)
        if not 0 < self.latent_dim < self.input_dim:
            raise ValueError(
                f"need 0 < latent_dim < input_dim, got {self.latent_dim} and {self.input_dim}"
            )
        if any(w <= 0 for w in (*self.encoder_arch, *self.decoder_arch)):
            raise ValueError("layer widths must be positive")
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.mean_activation is Activation.RELU:
            raise ValueError("decoded mean activation must be identity or sigmoid")


def basic_vae_config(**overrides) -> VaeConfig:
    """The 784-128-(128+128) / 128-128-(784+784) MLP used for MNIST."""
    base = dict(
        input_dim=784,
        latent_dim=128,
        encoder_arch=(128,),
        decoder_arch=(128,),
        decoded=DecodedScale(DecodedKind.PER_PIXEL, sp.ScaleParameterization.parse(
            f"bounded:{sp.PIXEL_ALPHA!r}:1")),
        mean_activation=Activation.SIGMOID,
        lr=1e-4,
    )
    base.update(overrides)
    return VaeConfig(**base)


@dataclass
class StepDiagnostics:
    loss: float
    recon_term: float
    kl_term: float
    min_decoded_sigma: float
    max_encoded_sigma: float
    max_abs_grad: float
    nonfinite: bool

    @classmethod
    def nan(cls) -> "StepDiagnostics":
        return cls(math.nan, math.nan, math.nan, math.nan, math.nan, math.nan, True)


@dataclass
class _Pass:
    """Forward intermediates needed by the backward pass."""

    x: np.ndarray
    eps: np.ndarray
    enc_cache: object
    dec_cache: object
    mu_z: np.ndarray
    p_z: np.ndarray
    s_z: np.ndarray
    mean: np.ndarray
    p_x: np.ndarray | None
    s_x: np.ndarray
    recon: np.ndarray  # per sample
    kl: np.ndarray  # per sample


class Vae:
    def __init__(self, config: VaeConfig):
        self.config = config
        d, L = config.input_dim, config.latent_dim
        init_gen = make_generator([config.seed, 0])
        self.noise = make_generator([config.seed, 1])
        hidden = config.hidden_activation
        self.encoder = Mlp.init([d, *config.encoder_arch, 2 * L], init_gen, hidden)
        dec_out = 2 * d if config.decoded.kind is DecodedKind.PER_PIXEL else d
        self.decoder = Mlp.init([L, *config.decoder_arch, dec_out], init_gen, hidden)
        self.global_p = np.zeros(1) if config.decoded.kind is DecodedKind.GLOBAL else None
        self.adam = AdamState.for_params(self.params(), lr=config.lr)

    def params(self) -> list[np.ndarray]:
        out = self.encoder.params() + self.decoder.params()
        if self.global_p is not None:
            out.append(self.global_p)
        return out

    def params_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params())

    @property
    def global_gamma(self) -> float:
        """Current global decoded scale (GlobalScalar decoders only)."""
        if self.global_p is None:
            raise AttributeError("model has no global decoded scale")
        return float(sp.sigma(self.config.decoded.param, self.global_p[0]))

    # -- forward -----------------------------------------------------------

    def _check_x(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise ValueError(f"expected x of shape [batch, {self.config.input_dim}], got {x.shape}")
        return x

    def _decoder_scale(self, out: np.ndarray, mode: FloatMode):
        cfg = self.config.decoded
        d = self.config.input_dim
        ar = Arith(mode)
        if cfg.kind is DecodedKind.PER_PIXEL:
            p_x = out[:, d:]
        elif cfg.kind is DecodedKind.GLOBAL:
            p_x = np.broadcast_to(self.global_p, (out.shape[0], d))
        else:
            s = np.full((out.shape[0], d), ar.const(cfg.value))
            return None, s, np.full_like(s, ar.log(cfg.value))
        s_x = np.asarray(sp.sigma(cfg.param, p_x, mode))
        ls_x = np.asarray(sp.log_sigma(cfg.param, p_x, mode))
        return p_x, s_x, ls_x

    def _forward(self, x: np.ndarray, eps: np.ndarray) -> _Pass:
        cfg = self.config
        mode, L, d = cfg.mode, cfg.latent_dim, cfg.input_dim
        ar = Arith(mode)
        h, enc_cache = forward(self.encoder, x)
        mu_z, p_z = h[:, :L], h[:, L:]
        s_z = np.asarray(sp.sigma(cfg.encoded_param, p_z, mode))
        ls_z = np.asarray(sp.log_sigma(cfg.encoded_param, p_z, mode))
        z = np.asarray(ar.add(mu_z, ar.mul(s_z, eps)))
        out, dec_cache = forward(self.decoder, z)
        raw = out[:, :d]
        mean = sigmoid(raw) if cfg.mean_activation is Activation.SIGMOID else raw
        p_x, s_x, ls_x = self._decoder_scale(out, mode)
        recon = np.asarray(ar.neg(ar.sum(log_prob_terms(x, mean, ls_x, s_x, mode))))
        kl = np.asarray(ar.sum(kl_terms(mu_z, ls_z, s_z, 0.0, 0.0, 1.0, mode)))
        return _Pass(x, eps, enc_cache, dec_cache, mu_z, p_z, s_z, mean, p_x, s_x, recon, kl)

    def _losses(self, fp: _Pass) -> tuple[float, float, float]:
        ar = Arith(self.config.mode)
        with np.errstate(all="ignore"):
            recon = ar.const(np.mean(fp.recon))
            kl = ar.const(np.mean(fp.kl))
        return float(ar.add(recon, kl)), float(recon), float(kl)

    # -- backward ----------------------------------------------------------

    def _backward(self, fp: _Pass) -> list[np.ndarray]:
        cfg = self.config
        B = fp.x.shape[0]
        dec = cfg.decoded
        r = fp.x - fp.mean
        inv_var = 1.0 / (fp.s_x * fp.s_x)
        d_mean = -r * inv_var / B
        if cfg.mean_activation is Activation.SIGMOID:
            d_raw = d_mean * fp.mean * (1.0 - fp.mean)
        else:
            d_raw = d_mean
        d_px = None
        if dec.kind is not DecodedKind.FIXED:
            d_px = (
                sp.dlog_sigma_dp(dec.param, fp.p_x)
                - r * r * inv_var / fp.s_x * sp.dsigma_dp(dec.param, fp.p_x)
            ) / B
        d_out = np.concatenate([d_raw, d_px], axis=1) if dec.kind is DecodedKind.PER_PIXEL else d_raw
        dec_grads, dz = backward(self.decoder, fp.dec_cache, d_out)

        enc = cfg.encoded_param
        ds_z = sp.dsigma_dp(enc, fp.p_z)
        d_mu = dz + fp.mu_z / B
        d_pz = dz * fp.eps * ds_z + (-sp.dlog_sigma_dp(enc, fp.p_z) + fp.s_z * ds_z) / B
        enc_grads, _ = backward(self.encoder, fp.enc_cache, np.concatenate([d_mu, d_pz], axis=1))

        grads = enc_grads + dec_grads
        if dec.kind is DecodedKind.GLOBAL:
            grads.append(np.array([d_px.sum()]))
        return grads

    def loss_and_grads(self, x, eps):
        """Negative ELBO, its two terms and the gradient list aligned with ``params()``."""
        x = self._check_x(x)
        with np.errstate(all="ignore"):
            fp = self._forward(x, np.asarray(eps, dtype=np.float64))
            loss, recon, kl = self._losses(fp)
            grads = self._backward(fp)
        return loss, recon, kl, grads, fp

    def draw_eps(self, batch: int) -> np.ndarray:
        return standard_normal(self.noise, (batch, self.config.latent_dim))


def encode(model: Vae, x) -> DiagGaussian:
    x = model._check_x(x)
    h, _ = forward(model.encoder, x)
    L = model.config.latent_dim
    return DiagGaussian(h[:, :L], h[:, L:], model.config.encoded_param)


def decode(model: Vae, z) -> DiagGaussian:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != model.config.latent_dim:
        raise ValueError(f"expected z of shape [batch, {model.config.latent_dim}], got {z.shape}")
    out, _ = forward(model.decoder, z)
    d = model.config.input_dim
    raw = out[:, :d]
    mean = sigmoid(raw) if model.config.mean_activation is Activation.SIGMOID else raw
    dec = model.config.decoded
    if dec.kind is DecodedKind.PER_PIXEL:
        return DiagGaussian(mean, out[:, d:], dec.param)
    if dec.kind is DecodedKind.GLOBAL:
        return DiagGaussian(mean, np.broadcast_to(model.global_p, mean.shape), dec.param)
    return DiagGaussian(mean, np.full(mean.shape, math.log(dec.value)), sp.EXP)


def elbo(model: Vae, x, eps) -> tuple[float, float, float]:
    """Single-sample ``(neg_elbo, recon, kl)`` averaged over the batch."""
    x = model._check_x(x)
    with np.errstate(all="ignore"):
        return model._losses(model._forward(x, np.asarray(eps, dtype=np.float64)))


def train_step(model: Vae, batch) -> StepDiagnostics:
    """One Adam step on the single-sample negative ELBO. No clipping, no skipped updates."""
    batch = model._check_x(batch)
    eps = model.draw_eps(batch.shape[0])
    loss, recon, kl, grads, fp = model.loss_and_grads(batch, eps)
    with np.errstate(all="ignore"):
        max_abs_grad = max(float(np.max(np.abs(g))) for g in grads)
        adam_step(model.adam, model.params(), grads)
    nonfinite = not (math.isfinite(loss) and all(np.all(np.isfinite(g)) for g in grads))
    return StepDiagnostics(
        loss=loss,
        recon_term=recon,
        kl_term=kl,
        min_decoded_sigma=float(np.min(fp.s_x)),
        max_encoded_sigma=float(np.max(fp.s_z)),
        max_abs_grad=max_abs_grad,
        nonfinite=nonfinite,
    )


def nll_eval(model: Vae, x, noise_seed: int, n_samples: int = 1) -> float:
    """Negative ELBO in nats per image on dequantized data, averaged over noise draws."""
    x = model._check_x(x)
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    gen = make_generator(noise_seed)
    total = 0.0
    for _ in range(n_samples):
        noisy = x + gen.random(x.shape) * DEQUANT_WIDTH
        eps = standard_normal(gen, (x.shape[0], model.config.latent_dim))
        total += elbo(model, noisy, eps)[0]
    return total / n_samples
