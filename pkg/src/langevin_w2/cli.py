"""Command-line entry point: ``langevin-w2 <subcommand> --config run.toml``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from . import io
from .chain import ChainDivergence
from .experiments import ConfigError, ExperimentConfig, load_config, run_experiment
from .model import ModelError

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG = 0, 1, 2

SUBCOMMANDS = {
    "simulate": "simulate",
    "rate-homog": "homog_rate",
    "rate-inhomog": "inhomog_rate",
    "clt": "clt",
    "couple": "contraction",
    "check-lemmas": "lemmas",
}


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="langevin-w2", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, exp in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=f"run the {exp} experiment")
        p.add_argument("--config", type=Path, required=name != "check-lemmas", help="TOML or JSON config")
        p.add_argument("--seed", type=_u64, help="override the config seed")
        p.add_argument("--out", type=Path, help="output directory (default: config output, else .)")
        p.add_argument("--threads", type=int, default=None, help="worker threads (default: CPU count)")
        if name == "simulate":
            p.add_argument("--snapshot-csv", action="store_true", help="also write snapshots.csv")
    return parser


def _resolve_config(args, experiment: str) -> ExperimentConfig:
    if args.config is None:
        raw = {"experiment": experiment, "seed": 0}
    else:
        raw = load_config(args.config).to_dict()
        if raw["experiment"] != experiment:
            raise ConfigError([f"config experiment {raw['experiment']!r} does not match subcommand "
                               f"{args.command!r} (expects {experiment!r})"])
    if args.seed is not None:
        raw["seed"] = args.seed
    return ExperimentConfig.from_dict(raw)


def write_outputs(report, out_dir: Path, snapshot_csv: bool = False):
    out_dir.mkdir(parents=True, exist_ok=True)
    snaps = report.extras.pop("snapshots", None)
    io.write_report_csv(out_dir / "report.csv", report.rows)
    io.write_json(out_dir / "report.json", report.to_dict())
    if report.checks:
        io.write_lemma_reports(out_dir / "checks.jsonl", report.checks)
    if snaps is not None:
        io.write_snapshots_binary(out_dir / "snapshots.bin", snaps)
        if snapshot_csv:
            io.write_snapshots_csv(out_dir / "snapshots.csv", snaps)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    experiment = SUBCOMMANDS[args.command]
    try:
        cfg = _resolve_config(args, experiment)
        report = run_experiment(cfg, args.threads)
    except (ConfigError, ModelError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except ChainDivergence as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    out_dir = args.out or Path(cfg.output or ".")
    write_outputs(report, out_dir, getattr(args, "snapshot_csv", False))
    for row in report.rows:
        se = "" if row["stderr"] is None else f" +- {row['stderr']:.3g}"
        print(f"{row['experiment']:<18} grid={row['grid_value']:<10g} k={row['k']:<8d} "
              f"w2={row['w2']:.5g}{se} [{row['method']}]")
    for name, fit in report.fits.items():
        print(f"fit {name}: slope={fit.slope:.4f} r2={fit.r_squared:.4f} "
              f"ci=[{fit.slope_ci[0]:.3f}, {fit.slope_ci[1]:.3f}]")
    for c in report.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.lemma_id} max_violation={c.max_violation:.3g}")
    print(f"wrote {out_dir}/report.csv and report.json ({report.wall_clock_seconds:.1f} s)")
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
