"""Command-line front end.

Subcommands: accountant, calibrate, cosine, oracle, trajectory, train, sweep.
Each accepts --config <json> plus flag overrides for the same fields; flags
win over the file. Exit codes: 0 success, 1 usage or config error,
2 numerical failure (overflow or divergence), 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .accountant import CalibrationError
from .experiments import (
    CONFIG_TYPES,
    ConfigError,
    NumericalFailure,
    load_config,
    run_accountant,
    run_calibrate,
    run_cosine,
    run_oracle,
    run_sweep,
    run_trajectory,
    run_training,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _add_common(parser):
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--out", help="output directory")


def build_parser() -> _Parser:
    parser = _Parser(prog="adadp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("accountant", help="RDP curve and (epsilon, delta) conversions")
    _add_common(p)
    p.add_argument("--sigma-star", type=float, dest="sigma_star")
    p.add_argument("--q", type=float, dest="sampling_ratio")
    p.add_argument("--steps", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--alpha-min", type=int, dest="alpha_min")
    p.add_argument("--alpha-max", type=int, dest="alpha_max")
    p.add_argument("--pair-term", choices=("expm1", "shifted_exp"), dest="pair_term")

    p = sub.add_parser("calibrate", help="smallest noise scale meeting a budget")
    _add_common(p)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--q", type=float, dest="sampling_ratio")
    p.add_argument("--steps", type=int)
    p.add_argument("--alpha-min", type=int, dest="alpha_min")
    p.add_argument("--alpha-max", type=int, dest="alpha_max")
    p.add_argument("--pair-term", choices=("expm1", "shifted_exp"), dest="pair_term")

    p = sub.add_parser("cosine", help="noisy-vs-clean cosine similarity study")
    _add_common(p)
    p.add_argument("--trials", type=int)

    p = sub.add_parser("oracle", help="analytic vs Monte-Carlo privacy delta")
    _add_common(p)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--trials", type=int)

    p = sub.add_parser("trajectory", help="private vs non-private descent paths")
    _add_common(p)
    p.add_argument("--function")
    p.add_argument("--steps", type=int)
    p.add_argument("--sigma-star", type=float, dest="sigma_star")
    p.add_argument("--eta-adaptive", type=float, dest="eta_adaptive")
    p.add_argument("--eta-sgd", type=float, dest="eta_sgd")

    p = sub.add_parser("train", help="one training run with privacy bookkeeping")
    _add_common(p)
    p.add_argument("--algorithm", choices=("adadp", "dpsgd", "sgd", "rmsprop", "adal", "adan"))
    p.add_argument("--eta", type=float)
    p.add_argument("--lot-size", type=int, dest="lot_size")
    p.add_argument("--steps", type=int)
    p.add_argument("--sigma-star", type=float, dest="sigma_star")
    p.add_argument("--epsilon-budget", type=float, dest="epsilon_budget")

    p = sub.add_parser("sweep", help="grid over one hyperparameter")
    _add_common(p)
    p.add_argument("--parameter", choices=("eta", "beta", "sigma_star", "lot_size"))
    p.add_argument("--values", help="comma-separated grid values")

    return parser


_RUNNERS = {
    "accountant": run_accountant,
    "calibrate": run_calibrate,
    "cosine": run_cosine,
    "oracle": run_oracle,
    "trajectory": run_trajectory,
    "train": run_training,
    "sweep": run_sweep,
}


def _gather_config(args: argparse.Namespace) -> dict:
    mapping: dict = {}
    if args.config is not None:
        with open(args.config) as handle:
            mapping = json.load(handle)
        if not isinstance(mapping, dict):
            raise ConfigError(f"{args.config}: top-level JSON value must be an object")
    skip = {"command", "config", "values"}
    for key, value in vars(args).items():
        if key in skip or value is None:
            continue
        mapping[key] = value
    if args.command == "sweep":
        if getattr(args, "values", None) is not None:
            mapping["values"] = [float(v) for v in args.values.split(",")]
        if getattr(args, "parameter", None) is not None:
            mapping["parameter"] = args.parameter
        # seed/out ride on the nested base config
        base = dict(mapping.pop("base", {}))
        for key in ("seed", "out"):
            if key in mapping:
                base[key] = mapping.pop(key)
        mapping["base"] = base
    return mapping


def _print_report(command: str, report: dict) -> None:
    if command == "accountant":
        if report["mode"] == "epsilon":
            print(f"epsilon = {report['epsilon']:.6g} at alpha = {report['alpha']} (delta = {report['delta']:g})")
        elif report["mode"] == "delta_star":
            tail = " [vacuous]" if report["vacuous"] else ""
            print(f"delta* = {report['delta_star']:.6g} at alpha = {report['alpha']} (epsilon = {report['epsilon']:g}){tail}")
        else:
            print(f"sigma* = {report['sigma_star']:.6g} for ({report['epsilon']:g}, {report['delta']:g})-DP")
        for alpha, eps in report.get("rdp_curve", []):
            print(f"  alpha={alpha:<3d} rdp={eps:.6g}")
    elif command == "calibrate":
        print(f"sigma* = {report['sigma_star']:.6g} for ({report['epsilon']:g}, {report['delta']:g})-DP")
    elif command == "cosine":
        for row in report["results"]:
            sigmas = ", ".join(f"{s:g}" for s in row["sigmas"])
            print(f"sigmas = ({sigmas}): mean cosine = {row['mean_cosine']:.4f}")
    elif command == "oracle":
        print(
            f"analytic delta = {report['analytic_delta']:.6g}, "
            f"monte-carlo = {report['monte_carlo_delta']:.6g} "
            f"(+/- {report['std_error']:.2g}, {report['deviation_std_errors']:.2f} SE)"
        )
    elif command == "trajectory":
        print(f"distance adaptive vs rmsprop = {report['distance_adaptive_vs_rmsprop']:.4f}")
        print(f"distance dpsgd    vs sgd     = {report['distance_dpsgd_vs_sgd']:.4f}")
    elif command == "train":
        print(
            f"{report['algorithm']}: {report['steps_run']} steps, "
            f"final loss = {report['final_loss']:.6g}, accuracy = {report['final_accuracy']:.4f}"
            + (f", delta* = {report['final_delta_star']:.3g}" if report["final_delta_star"] is not None else "")
        )
    elif command == "sweep":
        for row in report["results"]:
            mark = "diverged" if row["diverged"] else f"accuracy = {row['final_accuracy']:.4f}"
            print(f"{report['parameter']} = {row['value']:g}: {mark}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = load_config(args.command, _gather_config(args))
        report = _RUNNERS[args.command](cfg)
    except (NumericalFailure, CalibrationError, OverflowError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, json.JSONDecodeError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    _print_report(args.command, report)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
