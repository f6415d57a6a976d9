"""Command line entry point: ``igff <command> [flags]``.

Exit codes: 0 success, 1 gate or stage failure, 2 config error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, config_from_dict, load_config
from .experiment import RunReport, emit_plot_data, run_experiment

log = logging.getLogger("igff")

COMMANDS = ("analytics", "simulate", "rpc", "verify", "plotdata")


def _floats(text: str) -> list:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list:
    return [int(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="igff", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="YAML config file")
        p.add_argument("--n", type=_ints, help="comma-separated box sizes N")
        p.add_argument("--beta", type=_floats, help="comma-separated inverse temperatures")
        p.add_argument("--sigma", type=_floats, help="comma-separated sigma values")
        p.add_argument("--lambda", dest="lam", type=_floats, help="comma-separated lambda breakpoints")
        p.add_argument("--rho", type=float)
        p.add_argument("--samples", type=int, help="field samples")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--out", type=str, help="output directory")
        p.add_argument("--threads", type=int)
        if name == "verify":
            p.add_argument("--gates", type=_ints, help="comma-separated criterion numbers (default: all)")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def resolve_config(args) -> ExperimentConfig:
    """Config file first, then flags on top; the result is validated as a whole."""
    raw = {}
    if args.config is not None:
        raw = load_config(args.config).to_dict()
    if args.command != "plotdata":
        raw["kind"] = args.command
    overrides = {"N": args.n, "beta": args.beta, "rho": args.rho, "field_samples": args.samples,
                 "master_seed": args.seed, "out": args.out, "threads": args.threads,
                 "gates": getattr(args, "gates", None)}
    for k, v in overrides.items():
        if v is not None:
            raw[k] = v
    if args.sigma is not None or args.lam is not None:
        params = dict(raw.get("params", {}))
        if args.sigma is not None:
            params["sigma"] = args.sigma
        if args.lam is not None:
            params["lambda"] = args.lam
        raw["params"] = params
    return config_from_dict(raw)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve_config(args)
    except ConfigError as e:
        for path, msg in e.problems:
            print(f"config error at {path or '<root>'}: {msg}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    if args.command == "plotdata":
        report = RunReport.merge_dir(cfg.out) or run_experiment(cfg)
        for p in emit_plot_data(report, cfg.out):
            print(p)
        for n in report.notes:
            print(f"note: {n}")
        return 0
    report = run_experiment(cfg)
    for stage, status in report.stages.items():
        print(f"{stage}: {status}")
    for line in report.data.get("gate_lines", []):
        print(line)
    for n in report.notes:
        print(f"note: {n}")
    print(f"artifacts in {cfg.out}")
    return 0 if report.ok else 1


if __name__ == "__main__":
    sys.exit(main())
