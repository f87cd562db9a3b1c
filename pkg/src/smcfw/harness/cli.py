"""``smcfw`` command line.

Subcommands: ``simulate``, ``run``, ``ingest``, ``verify`` and ``report``.
Settings come from ``--config`` (a sectioned ``key = value`` file) and are
overridden by flags.  The worker count is read from ``SMCFW_WORKERS``.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..errors import IngestionError
from .config import ALGORITHMS, MODELS, build_config, parse_params, read_config_file
from .experiments import report, run_experiment, write_simulation
from .ingest import ingest_prices
from .io import write_series
from .verify import verify_theory


def _run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="sectioned key = value file")
    p.add_argument("--model", choices=MODELS)
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int, help="number of simulated observations")
    p.add_argument("--params", help="true parameters for simulation, e.g. 'tau=1,lam=1'")


def _sampler_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--algo", choices=ALGORITHMS)
    p.add_argument("--n-theta", type=int, dest="n_theta")
    p.add_argument("--n-x", type=int, dest="n_x")
    p.add_argument("--window", type=int)
    p.add_argument("--bandwidth", type=float, help="h in the kernel covariance h*I on the log scale")
    p.add_argument("--bandwidth-rule-a3", action="store_true", default=None, dest="bandwidth_rule_a3",
                   help="kernel sd N^(-1/(2(d+1))) instead of --bandwidth")
    p.add_argument("--ess-threshold", type=float, dest="ess_threshold")
    p.add_argument("--pmmh-sweeps", type=int, dest="pmmh_sweeps")
    p.add_argument("--replicates", type=int)
    p.add_argument("--predict-samples", type=int, dest="predict_samples")
    p.add_argument("--bridge-mode", choices=("single", "per_particle"), dest="bridge_mode")
    p.add_argument("--data", help="observation file (column 'y' or a single column)")
    p.add_argument("--reference", help="summary file of a reference run")
    p.add_argument("--out", help="output directory")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smcfw", description="Online parameter inference for state-space models.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a dataset")
    _run_flags(p)
    p.add_argument("--out", required=True, help="output CSV file")

    p = sub.add_parser("run", help="run a sampler over replicates")
    _run_flags(p)
    _sampler_flags(p)

    p = sub.add_parser("ingest", help="price file to normalised log-returns")
    p.add_argument("prices")
    p.add_argument("--out", required=True, help="output CSV file")

    p = sub.add_parser("verify", help="randomised checks on finite Feynman-Kac models")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--contraction-trials", type=int, default=100, dest="contraction_trials")
    p.add_argument("--bias-trials", type=int, default=50, dest="bias_trials")
    p.add_argument("--out", help="write the report to this file")

    p = sub.add_parser("report", help="summarise the replicate files of a run")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--reference")
    return parser


def _settings(args, keys) -> dict:
    flags = {k: getattr(args, k, None) for k in keys}
    if getattr(args, "params", None):
        flags["params"] = parse_params(args.params)
    else:
        flags.pop("params", None)
    return flags


_SIM_KEYS = ("model", "seed", "steps", "params")
_RUN_KEYS = _SIM_KEYS + ("algo", "n_theta", "n_x", "window", "bandwidth", "bandwidth_rule_a3", "ess_threshold",
                         "pmmh_sweeps", "replicates", "predict_samples", "bridge_mode", "data", "reference", "out")


def _print_rows(rows) -> None:
    if not rows:
        print("no replicate files found")
        return
    keys = list(rows[0].keys())
    print(",".join(keys))
    for row in rows:
        print(",".join(v if isinstance(v, str) else f"{v:.6g}" for v in (row[k] for k in keys)))


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            file_values = read_config_file(args.config) if args.config else {}
            rc = build_config(file_values, _settings(args, _SIM_KEYS))
            write_simulation(rc, args.out)
            print(f"wrote {rc.steps} observations to {args.out}")
            return 0
        if args.command == "run":
            file_values = read_config_file(args.config) if args.config else {}
            rc = build_config(file_values, _settings(args, _RUN_KEYS))
            code = run_experiment(rc)
            _print_rows(report(rc.out, rc.reference))
            if code:
                print(Path(rc.out, "diagnostic.txt").read_text(encoding="utf-8"), file=sys.stderr, end="")
            return code
        if args.command == "ingest":
            y = ingest_prices(args.prices)
            write_series(args.out, y)
            print(f"wrote {len(y)} returns to {args.out}")
            return 0
        if args.command == "verify":
            result = verify_theory(args.contraction_trials, args.bias_trials, args.seed)
            text = "\n".join(result.lines())
            print(text)
            if args.out:
                Path(args.out).write_text(text + "\n", encoding="utf-8")
            return 0 if result.passed else 1
        if args.command == "report":
            _print_rows(report(args.out, args.reference))
            return 0
    except (ValueError, IngestionError, OSError) as exc:
        print(f"smcfw: error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
