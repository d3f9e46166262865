"""``stable-gauss`` command line entry point."""

from __future__ import annotations

import argparse
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Sequence, TextIO

from . import experiments as ex
from . import gradcheck
from .config import ExperimentConfig
from .precision import FloatMode
from .stability import summarize

COMMANDS = ("table1", "klprobe", "train", "sweep", "gradcheck")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stable-gauss",
        description="Precision tables, KL scans, VAE training runs and stability sweeps.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", type=Path, help="key = value experiment file")
    parser.add_argument("--out", type=Path, help="CSV output path (default: stdout for train/klprobe)")
    parser.add_argument("--seed", type=int, help="overrides the config seed")
    parser.add_argument("--mode", choices=[m.value for m in FloatMode], help="float mode of the distribution layer")
    return parser


@contextmanager
def _open_out(path: Path | None, fallback: TextIO | None):
    if path is None:
        yield fallback
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        yield fh


def cmd_table1(args, cfg: ExperimentConfig) -> int:
    modes = [FloatMode(args.mode)] if args.mode else [FloatMode.F32, FloatMode.F16]
    cells = ex.table1(modes, cfg.table1_lower)
    print(ex.format_table1(cells))
    if args.out:
        with _open_out(args.out, None) as fh:
            fh.write("mode,variant,min_p_hat,min_sigma,expected_p_hat,expected_sigma,matches\n")
            for c in cells:
                exp = ("", "") if c.expected is None else (str(c.expected[0]), repr(c.expected[1]))
                got = ("", "") if c.min_p_hat is None else (str(c.min_p_hat), repr(c.min_sigma))
                fh.write(",".join([c.mode.value, c.variant.value, *got, *exp, str(c.matches)]) + "\n")
    bad = [c for c in cells if c.matches is False]
    for c in bad:
        print(
            f"deviation: {c.mode.value}/{c.variant.value} got ({c.min_p_hat}, {c.min_sigma}) "
            f"expected ({c.expected[0]}, {c.expected[1]})",
            file=sys.stderr,
        )
    return 1 if bad else 0


def cmd_klprobe(args, cfg: ExperimentConfig) -> int:
    grids = ex.probe_all(cfg)
    with _open_out(args.out, sys.stdout) as fh:
        ex.write_probe_csv(grids, fh, cfg.grad_threshold)
    for g in grids:
        nonfinite = int((~g.finite).sum())
        flagged = int((~(g.grad_norm <= cfg.grad_threshold)).sum())
        print(
            f"{g.param} {g.variant} mu=({g.mu1:g}, {g.mu2:g}): {nonfinite}/{g.kl.size} non-finite, "
            f"{flagged} with |grad| > {cfg.grad_threshold:g}",
            file=sys.stderr,
        )
    return 0


def cmd_train(args, cfg: ExperimentConfig) -> int:
    vcfg = cfg.vae_config()
    data = cfg.load_data()
    with _open_out(args.out, sys.stdout) as fh:
        fh.write(",".join(ex.STEP_FIELDS) + "\n")

        def on_step(step, diag):
            fh.write(",".join(str(v) for v in ex.step_row(step, diag)) + "\n")

        _, history = ex.train_run(vcfg, data, on_step)
    s = summarize(ex.tracker_for(d.loss for d in history), cfg.single_run_threshold())
    print(
        f"diverged={s.diverged} min_smoothed_loss={s.min_smoothed_loss:.6g} "
        f"instability_fraction={s.instability_fraction:.4g} mean_excess_z={s.mean_excess_z:.4g} "
        f"nonfinite_steps={s.nonfinite_steps}/{s.steps}",
        file=sys.stderr,
    )
    return 0


def cmd_sweep(args, cfg: ExperimentConfig) -> int:
    def progress(o):
        status = f"error: {o.error}" if o.error else f"{len(o.losses)} steps"
        print(f"done {o.spec.run_id} ({status})", file=sys.stderr)

    result = ex.run_sweep(cfg, progress)
    print(f"convergence threshold: {result.threshold:.6g}")
    print(ex.format_cells(result.cells))
    if args.out:
        with _open_out(args.out, None) as fh:
            ex.write_summary_csv(result.runs, fh)
        with _open_out(args.out.with_suffix(".cells.csv"), None) as fh:
            ex.write_cells_csv(result.cells, fh)
    return 0


def cmd_gradcheck(args, cfg: ExperimentConfig) -> int:
    report = gradcheck.run_all()
    print(report.format())
    return 0 if report.ok else 1


HANDLERS = {
    "table1": cmd_table1,
    "klprobe": cmd_klprobe,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "gradcheck": cmd_gradcheck,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.load(args.config, seed=args.seed, mode=args.mode and FloatMode(args.mode))
    except (OSError, ValueError) as err:
        print(f"stable-gauss: config error: {err}", file=sys.stderr)
        return 2
    try:
        return HANDLERS[args.command](args, cfg)
    except OSError as err:
        print(f"stable-gauss: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
