"""Experiment configuration files.

One ``key = value`` per line, ``#`` starts a comment, lists are
comma-separated. Unknown keys are rejected so typos do not silently fall back
to defaults.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

from .data import ImageDataset, SynthKind, load_idx, overfit_subset, synth_set
from .nn import Activation
from .precision import FloatMode, QuotientVariant
from .scaleparam import ScaleParameterization
from .stability import DEFAULT_CONVERGENCE_THRESHOLD
from .vae import DecodedScale, VaeConfig


def parse_lines(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().lower().replace("-", "_")
        if not sep or not key:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if key in out:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _split_list(value: str) -> list[str]:
    items = [v.strip() for v in value.split(",")]
    if not all(items):
        raise ValueError(f"empty item in list {value!r}")
    return items


@dataclass
class ExperimentConfig:
    # data
    data: str = "synth:random-patches"
    data_n: int = 100
    height: int = 8
    width: int = 8
    pool: int = 1
    overfit_k: int = 10
    data_seed: int = 0
    # model and training
    latent_dim: int = 16
    encoder_arch: tuple[int, ...] = (128,)
    decoder_arch: tuple[int, ...] = (128,)
    encoded_param: ScaleParameterization = field(
        default_factory=lambda: ScaleParameterization.parse("upbounded:1")
    )
    decoded: DecodedScale = field(default_factory=lambda: DecodedScale.parse("global:naive-exp"))
    mean_activation: Activation = Activation.IDENTITY
    hidden_activation: Activation = Activation.SIGMOID
    lr: float = 1e-3
    batch_size: int = 64
    steps: int = 1000
    seed: int = 0
    mode: FloatMode = FloatMode.F64
    # run metrics
    convergence_threshold: float | None = None  # None: relative to the sweep's converged runs
    relative_factor: float = 0.5
    # sweep axes
    lrs: tuple[float, ...] = ()
    encoder_params: tuple[ScaleParameterization, ...] = ()
    decoder_params: tuple[DecodedScale, ...] = ()
    seeds: int = 10
    workers: int = 0  # 0: one per CPU
    # klprobe
    probe_params: tuple[ScaleParameterization, ...] = field(
        default_factory=lambda: tuple(
            ScaleParameterization.parse(s)
            for s in ("exp", "explin", "upbounded:1", "downbounded:1e-4", "bounded:1e-4:1")
        )
    )
    probe_variant: str = "stable"
    p_min: float = -80.0
    p_max: float = 30.0
    p2_min: float | None = None
    p2_max: float | None = None
    p_step: float = 0.5
    mus: tuple[float, ...] = (0.0, 5.0)
    grad_threshold: float = 1e6
    # table1
    table1_lower: int = -300

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.probe_variant not in ("stable", *(v.value for v in QuotientVariant)):
            raise ValueError(f"probe_variant must be stable, direct or squared, got {self.probe_variant!r}")
        if not self.p_step > 0 or not self.p_min <= self.p_max:
            raise ValueError("klprobe grid needs p_min <= p_max and p_step > 0")
        if not (math.isfinite(self.p_min) and math.isfinite(self.p_max)):
            raise ValueError("klprobe grid bounds must be finite")
        if self.seeds < 1:
            raise ValueError("seeds must be at least 1")
        if not self.probe_params or not self.mus:
            raise ValueError("probe_params and mus must not be empty")
        if any(not lr > 0 for lr in self.sweep_lrs):
            raise ValueError("learning rates must be positive")
        self.vae_config()  # surfaces model-level errors early

    @property
    def sweep_lrs(self) -> tuple[float, ...]:
        return self.lrs or (self.lr,)

    @property
    def sweep_encoder_params(self) -> tuple[ScaleParameterization, ...]:
        return self.encoder_params or (self.encoded_param,)

    @property
    def sweep_decoder_params(self) -> tuple[DecodedScale, ...]:
        return self.decoder_params or (self.decoded,)

    @property
    def input_dim(self) -> int:
        if self.data.startswith("idx:"):
            return (28 // self.pool) ** 2
        return self.height * self.width

    def vae_config(self, **overrides) -> VaeConfig:
        kw = dict(
            input_dim=self.input_dim,
            latent_dim=self.latent_dim,
            encoder_arch=self.encoder_arch,
            decoder_arch=self.decoder_arch,
            encoded_param=self.encoded_param,
            decoded=self.decoded,
            mean_activation=self.mean_activation,
            hidden_activation=self.hidden_activation,
            lr=self.lr,
            batch_size=self.batch_size,
            steps=self.steps,
            seed=self.seed,
            mode=self.mode,
        )
        kw.update(overrides)
        return VaeConfig(**kw)

    def single_run_threshold(self) -> float:
        if self.convergence_threshold is None:
            return DEFAULT_CONVERGENCE_THRESHOLD
        return self.convergence_threshold

    def load_data(self, seed: int | None = None) -> ImageDataset:
        """Training images; with ``overfit_k > 0`` a subset drawn with the run seed."""
        seed = self.seed if seed is None else seed
        scheme, _, rest = self.data.partition(":")
        if scheme == "synth":
            ds = synth_set(SynthKind(rest), self.data_n, self.height, self.width, self.data_seed)
        elif scheme == "idx":
            ds = pool_images(load_idx(rest), self.pool)
        else:
            raise ValueError(f"data must be synth:<kind> or idx:<path>, got {self.data!r}")
        if self.overfit_k:
            ds = overfit_subset(ds, self.overfit_k, seed)
        return ds

    @classmethod
    def from_mapping(cls, mapping: dict[str, str], **overrides) -> "ExperimentConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        kw = {}
        for key, raw in mapping.items():
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            try:
                kw[key] = _convert(key, raw)
            except ValueError as err:
                raise ValueError(f"bad value for {key!r}: {err}") from None
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)

    @classmethod
    def from_text(cls, text: str, **overrides) -> "ExperimentConfig":
        return cls.from_mapping(parse_lines(text), **overrides)

    @classmethod
    def load(cls, path: str | Path | None, **overrides) -> "ExperimentConfig":
        if path is None:
            return cls.from_mapping({}, **overrides)
        return cls.from_text(Path(path).read_text(encoding="utf-8"), **overrides)


_INT_KEYS = {
    "data_n", "height", "width", "pool", "overfit_k", "data_seed", "latent_dim",
    "batch_size", "steps", "seed", "seeds", "workers", "table1_lower",
}
_FLOAT_KEYS = {"lr", "relative_factor", "p_min", "p_max", "p2_min", "p2_max", "p_step", "grad_threshold"}


def _convert(key: str, raw: str):
    if key in _INT_KEYS:
        return int(raw)
    if key in _FLOAT_KEYS:
        return float(raw)
    if key in ("encoder_arch", "decoder_arch"):
        return tuple(int(v) for v in _split_list(raw))
    if key == "lrs":
        return tuple(float(v) for v in _split_list(raw))
    if key == "mus":
        return tuple(float(v) for v in _split_list(raw))
    if key == "encoded_param":
        return ScaleParameterization.parse(raw)
    if key in ("encoder_params", "probe_params"):
        return tuple(ScaleParameterization.parse(v) for v in _split_list(raw))
    if key == "decoded":
        return DecodedScale.parse(raw)
    if key == "decoder_params":
        return tuple(DecodedScale.parse(v) for v in _split_list(raw))
    if key in ("mean_activation", "hidden_activation"):
        return Activation(raw.lower())
    if key == "mode":
        return FloatMode.parse(raw)
    if key == "convergence_threshold":
        return None if raw.lower() == "relative" else float(raw)
    return raw


def pool_images(ds: ImageDataset, factor: int) -> ImageDataset:
    """Average-pool square blocks; trailing rows and columns that do not fill a block are dropped."""
    if factor == 1:
        return ds
    if factor < 1:
        raise ValueError("pool factor must be positive")
    h, w = ds.height // factor, ds.width // factor
    img = ds.images.reshape(ds.n, ds.height, ds.width)[:, : h * factor, : w * factor]
    pooled = img.reshape(ds.n, h, factor, w, factor).mean(axis=(2, 4))
    return ImageDataset(pooled.reshape(ds.n, h * w), h, w, f"{ds.source}[pool {factor}]")
