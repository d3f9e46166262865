"""Experiment drivers behind the command line: precision table, KL scans,
single training runs and multi-seed stability sweeps."""

from __future__ import annotations

import csv
import io
import math
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Sequence, TextIO

import numpy as np

from . import scaleparam as sp
from .config import ExperimentConfig
from .data import ImageDataset
from .gaussian import DiagGaussian, kl_grad, kl_terms
from .precision import FloatMode, QuotientVariant, min_finite_log_quotient, naive_log_ratio
from .rng import make_generator
from .scaleparam import ScaleParameterization
from .stability import InstabilityTracker, RunSummary, relative_threshold, summarize
from .vae import DecodedScale, StepDiagnostics, Vae, VaeConfig, train_step

# -- precision table ----------------------------------------------------------

TABLE1_EXPECTED = {
    (FloatMode.F32, QuotientVariant.DIRECT): (-103, 1.85e-45),
    (FloatMode.F32, QuotientVariant.SQUARED): (-51, 7.10e-23),
    (FloatMode.F16, QuotientVariant.DIRECT): (-17, 4.14e-08),
    (FloatMode.F16, QuotientVariant.SQUARED): (-8, 3.35e-04),
}


def same_3sig(a: float, b: float) -> bool:
    return f"{a:.2e}" == f"{b:.2e}"


@dataclass(frozen=True)
class Table1Cell:
    mode: FloatMode
    variant: QuotientVariant
    min_p_hat: int | None
    min_sigma: float | None
    expected: tuple[int, float] | None

    @property
    def matches(self) -> bool | None:
        if self.expected is None:
            return None
        if self.min_p_hat is None:
            return False
        return self.min_p_hat == self.expected[0] and same_3sig(self.min_sigma, self.expected[1])


def table1(modes: Sequence[FloatMode] = (FloatMode.F32, FloatMode.F16), lower: int = -300):
    cells = []
    for mode in modes:
        for variant in QuotientVariant:
            found = min_finite_log_quotient(mode, variant, lower)
            p_hat, sig = found if found is not None else (None, None)
            cells.append(Table1Cell(mode, variant, p_hat, sig, TABLE1_EXPECTED.get((mode, variant))))
    return cells


def format_table1(cells: Sequence[Table1Cell]) -> str:
    rows = [("mode", "variant", "min p_hat", "min sigma", "expected", "status")]
    for c in cells:
        if c.min_p_hat is None:
            got = ("none", "no finite minimum within sweep range")
        else:
            got = (str(c.min_p_hat), f"{c.min_sigma:.2e}")
        expected = "-" if c.expected is None else f"{c.expected[0]} / {c.expected[1]:.2e}"
        status = {None: "-", True: "ok", False: "MISMATCH"}[c.matches]
        rows.append((c.mode.value, c.variant.value, *got, expected, status))
    return format_rows(rows)


def format_rows(rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in rows)


# -- KL finiteness scan ---------------------------------------------------------

PROBE_FIELDS = ["param", "variant", "mu1", "mu2", "p1", "p2", "kl", "finite", "grad_norm", "grad_flag"]


@dataclass
class ProbeGrid:
    param: ScaleParameterization
    variant: str
    mu1: float
    mu2: float
    p1: np.ndarray
    p2: np.ndarray
    kl: np.ndarray
    grad_norm: np.ndarray

    @property
    def finite(self) -> np.ndarray:
        return np.isfinite(self.kl)


def grid_points(lo: float, hi: float, step: float) -> np.ndarray:
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(n)


def kl_probe(
    param: ScaleParameterization,
    p1_values,
    p2_values,
    mu1: float,
    mu2: float,
    mode: FloatMode = FloatMode.F32,
    variant: str = "stable",
) -> ProbeGrid:
    """KL(N(mu1, sigma(p1)) || N(mu2, sigma(p2))) on the product grid, same parameterization on both sides."""
    P1, P2 = (a.ravel() for a in np.meshgrid(p1_values, p2_values, indexing="ij"))
    M1, M2 = np.full_like(P1, mu1), np.full_like(P2, mu2)
    s1, s2 = sp.sigma(param, P1, mode), sp.sigma(param, P2, mode)
    if variant == "stable":
        ls1, ls2 = sp.log_sigma(param, P1, mode), sp.log_sigma(param, P2, mode)
        kl = kl_terms(M1, ls1, s1, M2, ls2, s2, mode)
    else:
        ratio = naive_log_ratio(mode, QuotientVariant(variant), s1, s2)
        kl = kl_terms(M1, None, s1, M2, None, s2, mode, log_ratio=ratio)
    q1, q2 = DiagGaussian(M1, P1, param), DiagGaussian(M2, P2, param)
    with np.errstate(all="ignore"):
        grads = kl_grad(q1, q2)
        grad_norm = np.sqrt(sum(g * g for g in grads))
    return ProbeGrid(param, variant, mu1, mu2, P1, P2, np.asarray(kl), grad_norm)


def probe_all(cfg: ExperimentConfig) -> list[ProbeGrid]:
    p1 = grid_points(cfg.p_min, cfg.p_max, cfg.p_step)
    p2 = grid_points(
        cfg.p_min if cfg.p2_min is None else cfg.p2_min,
        cfg.p_max if cfg.p2_max is None else cfg.p2_max,
        cfg.p_step,
    )
    return [
        kl_probe(param, p1, p2, mu1, mu2, cfg.mode, cfg.probe_variant)
        for param in cfg.probe_params
        for mu1 in cfg.mus
        for mu2 in cfg.mus
    ]


def write_probe_csv(grids: Iterable[ProbeGrid], out: TextIO, grad_threshold: float):
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(PROBE_FIELDS)
    for g in grids:
        flag = ~(g.grad_norm <= grad_threshold)
        for p1, p2, kl, fin, gn, gf in zip(g.p1, g.p2, g.kl, g.finite, g.grad_norm, flag):
            writer.writerow(
                [g.param, g.variant, repr(g.mu1), repr(g.mu2), repr(float(p1)), repr(float(p2)),
                 repr(float(kl)), int(fin), repr(float(gn)), int(gf)]
            )


# -- training runs --------------------------------------------------------------

STEP_FIELDS = [
    "step", "loss", "recon", "kl", "min_decoded_sigma", "max_encoded_sigma", "max_abs_grad", "nonfinite",
]
SUMMARY_FIELDS = [
    "run_id", "seed", "lr", "encoder_param", "decoder_param", "diverged",
    "min_smoothed_loss", "instability_fraction", "mean_excess_z", "steps", "nonfinite_steps", "error",
]


def batch_indices(gen: np.random.Generator, n: int, batch_size: int) -> np.ndarray:
    """Full batch in order for ``batch_size == 0``, else a uniform draw with replacement."""
    if batch_size == 0:
        return np.arange(n)
    return gen.integers(0, n, size=batch_size)


def train_run(
    config: VaeConfig,
    data: ImageDataset,
    on_step: Callable[[int, StepDiagnostics], None] | None = None,
) -> tuple[Vae, list[StepDiagnostics]]:
    """Train for ``config.steps`` steps. Once the parameters are no longer finite
    every later step would be NaN too, so those steps are recorded without being computed."""
    if data.d != config.input_dim:
        raise ValueError(f"data has {data.d} pixels, model expects {config.input_dim}")
    model = Vae(config)
    batches = make_generator([config.seed, 2])
    history = []
    broken = False
    for step in range(config.steps):
        if broken:
            diag = StepDiagnostics.nan()
        else:
            diag = train_step(model, data.images[batch_indices(batches, data.n, config.batch_size)])
            broken = not model.params_finite()
        history.append(diag)
        if on_step is not None:
            on_step(step, diag)
    return model, history


def step_row(step: int, d: StepDiagnostics) -> list:
    return [
        step, repr(d.loss), repr(d.recon_term), repr(d.kl_term), repr(d.min_decoded_sigma),
        repr(d.max_encoded_sigma), repr(d.max_abs_grad), int(d.nonfinite),
    ]


def tracker_for(losses: Iterable[float]) -> InstabilityTracker:
    return InstabilityTracker().feed(losses)


@dataclass(frozen=True)
class RunSpec:
    config: ExperimentConfig
    lr: float
    encoder_param: ScaleParameterization
    decoder_param: DecodedScale
    seed: int

    @property
    def run_id(self) -> str:
        return f"enc={self.encoder_param}/dec={self.decoder_param}/lr={self.lr:g}/seed={self.seed}"


@dataclass
class RunOutcome:
    spec: RunSpec
    losses: list[float]
    error: str | None = None


def execute_run(spec: RunSpec) -> RunOutcome:
    """Worker entry point. Failures are captured so one bad run cannot sink a sweep."""
    try:
        cfg = spec.config
        vcfg = cfg.vae_config(
            lr=spec.lr, encoded_param=spec.encoder_param, decoded=spec.decoder_param, seed=spec.seed
        )
        _, history = train_run(vcfg, cfg.load_data(spec.seed))
        return RunOutcome(spec, [d.loss for d in history])
    except Exception as err:  # noqa: BLE001 - reported in the sweep output
        return RunOutcome(spec, [], f"{type(err).__name__}: {err}")


@dataclass
class SweepRun:
    spec: RunSpec
    summary: RunSummary
    error: str | None

    @property
    def diverged(self) -> bool:
        return self.error is not None or self.summary.diverged


@dataclass
class SweepCell:
    lr: float
    encoder_param: ScaleParameterization
    decoder_param: DecodedScale
    runs: list[SweepRun]

    @property
    def n(self) -> int:
        return len(self.runs)

    @property
    def diverged(self) -> int:
        return sum(r.diverged for r in self.runs)

    @property
    def diverged_cell(self) -> str:
        return f"{self.diverged} / {self.n}"

    def _finite(self, attr: str) -> list[float]:
        return [getattr(r.summary, attr) for r in self.runs if math.isfinite(getattr(r.summary, attr))]

    def mean_std(self, attr: str) -> tuple[float, float]:
        vals = self._finite(attr)
        if not vals:
            return math.nan, math.nan
        return statistics.fmean(vals), statistics.pstdev(vals)


@dataclass
class SweepResult:
    threshold: float
    runs: list[SweepRun]
    cells: list[SweepCell]


def sweep_specs(cfg: ExperimentConfig) -> list[RunSpec]:
    return [
        RunSpec(cfg, lr, enc, dec, cfg.seed + k)
        for lr in cfg.sweep_lrs
        for enc in cfg.sweep_encoder_params
        for dec in cfg.sweep_decoder_params
        for k in range(cfg.seeds)
    ]


def run_sweep(cfg: ExperimentConfig, progress: Callable[[RunOutcome], None] | None = None) -> SweepResult:
    specs = sweep_specs(cfg)
    workers = cfg.workers or os.cpu_count() or 1
    if workers == 1:
        outcomes = []
        for s in specs:
            outcomes.append(execute_run(s))
            if progress:
                progress(outcomes[-1])
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = []
            for o in pool.map(execute_run, specs):
                outcomes.append(o)
                if progress:
                    progress(o)
    return summarize_sweep(cfg, outcomes)


def summarize_sweep(cfg: ExperimentConfig, outcomes: Sequence[RunOutcome]) -> SweepResult:
    trackers = [tracker_for(o.losses) for o in outcomes]
    if cfg.convergence_threshold is not None:
        threshold = cfg.convergence_threshold
    else:
        minima = [
            min(t.smoothed) for t, o in zip(trackers, outcomes)
            if o.error is None and t.nonfinite == 0 and t.smoothed
        ]
        threshold = relative_threshold(minima, cfg.relative_factor)
    runs = [SweepRun(o.spec, summarize(t, threshold), o.error) for o, t in zip(outcomes, trackers)]
    cells: dict[tuple, SweepCell] = {}
    for r in runs:
        key = (r.spec.lr, str(r.spec.encoder_param), str(r.spec.decoder_param))
        if key not in cells:
            cells[key] = SweepCell(r.spec.lr, r.spec.encoder_param, r.spec.decoder_param, [])
        cells[key].runs.append(r)
    return SweepResult(threshold, runs, list(cells.values()))


def write_summary_csv(runs: Iterable[SweepRun], out: TextIO):
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(SUMMARY_FIELDS)
    for r in runs:
        s = r.summary
        writer.writerow([
            r.spec.run_id, r.spec.seed, repr(r.spec.lr), r.spec.encoder_param, r.spec.decoder_param,
            int(r.diverged), repr(s.min_smoothed_loss), repr(s.instability_fraction),
            repr(s.mean_excess_z), s.steps, s.nonfinite_steps, r.error or "",
        ])


CELL_FIELDS = [
    "lr", "encoder_param", "decoder_param", "diverged", "min_smoothed_loss_mean",
    "min_smoothed_loss_std", "instability_fraction", "mean_excess_z",
]


def cell_row(c: SweepCell) -> list[str]:
    loss_m, loss_s = c.mean_std("min_smoothed_loss")
    frac_m, _ = c.mean_std("instability_fraction")
    z_m, _ = c.mean_std("mean_excess_z")
    return [f"{c.lr:g}", str(c.encoder_param), str(c.decoder_param), c.diverged_cell,
            f"{loss_m:.4g}", f"{loss_s:.3g}", f"{frac_m:.4g}", f"{z_m:.4g}"]


def write_cells_csv(cells: Iterable[SweepCell], out: TextIO):
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CELL_FIELDS)
    for c in cells:
        writer.writerow(cell_row(c))


def format_cells(cells: Sequence[SweepCell]) -> str:
    rows = [("lr", "encoder", "decoder", "diverged", "min smoothed loss", "instab. frac", "mean excess Z")]
    for c in cells:
        lr, enc, dec, div, lm, ls, fr, z = cell_row(c)
        rows.append((lr, enc, dec, div, f"{lm} ± {ls}", fr, z))
    return format_rows(rows)


def csv_text(writer: Callable[[TextIO], None]) -> str:
    buf = io.StringIO()
    writer(buf)
    return buf.getvalue()


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
