"""Command-line entry point: ``ghostflow [--config FILE] [flags]``.

Runs an epsilon sweep and writes ``sweep.csv`` and ``sweep.json`` (plus
``sweep.png`` with ``--plot``) to the output directory.  Flags override
values from the config file.
"""

from __future__ import annotations

import argparse
import sys

from .harness import RunConfig, emit_report, load_config, run_epsilon_sweep


def _eps_list(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid epsilon list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ghostflow", description="Epsilon sweep of the low-Mach expansion solvers.")
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--eps-list", type=_eps_list, help="strictly decreasing epsilons, e.g. '0.2,0.1,0.05'")
    parser.add_argument("--delta", type=float, help="wall temperature oscillation amplitude")
    parser.add_argument("--nx", type=int, help="nodes along the channel (periodic)")
    parser.add_argument("--ny", type=int, help="nodes across the channel (walls included)")
    parser.add_argument("--mode", choices=("expansion", "newton"), help="measure on the expansion or the Newton solution")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int, help="seed of the optional initial-guess perturbation")
    parser.add_argument("--plot", action="store_true", help="also write a log-log plot (needs matplotlib)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"eps_list": args.eps_list, "delta": args.delta, "nx": args.nx, "ny": args.ny,
                 "mode": args.mode, "out_dir": args.out, "seed": args.seed}
    try:
        if args.config:
            config = load_config(args.config, **overrides)
        else:
            config = RunConfig(**{k: v for k, v in overrides.items() if v is not None})
    except (OSError, ValueError) as exc:
        print(f"ghostflow: {exc}", file=sys.stderr)
        return 2
    report = run_epsilon_sweep(config)
    formats = ("csv", "json", "png") if args.plot else ("csv", "json")
    written = emit_report(report, formats=formats)
    for row in report.rows:
        dev = " ".join(f"{k}={v:.3e}" for k, v in row.deviations.items())
        print(f"eps={row.epsilon:g} status={row.status} newton_iters={row.newton_iters} {dev}")
    for key, fit in report.slopes.items():
        print(f"slope {key}: {fit.slope:.3f} (R^2 {fit.r_squared:.4f})")
    for key, note in report.slope_notes.items():
        print(f"slope {key}: {note}")
    for kind, path in written.items():
        print(f"wrote {kind}: {path}")
    return 0 if report.complete else 1


if __name__ == "__main__":
    raise SystemExit(main())
