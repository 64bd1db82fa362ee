"""Command-line experiment runner.

Commands:
    run         train over the spec's seed list; summary + per-seed records
    ablate      train every listed variant on shared data/seeds; comparison
    assa-sweep  both sparse-attention arms over a (rho, seed) grid
    encode      fit/apply the target-aware encoders standalone
    stats       paired one-sided rank test on two runs.jsonl files

Exit codes: 0 success, 2 bad config or data, 3 numeric divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigError, DataError, DivergenceError
from .experiment import (
    WORKERS_ENV,
    cmd_ablate,
    cmd_assa_sweep,
    cmd_encode,
    cmd_run,
    cmd_stats,
    default_workers,
    load_spec,
)

log = logging.getLogger(__name__)


def _parse_seed_list(text: str) -> tuple:
    try:
        seeds = tuple(int(part) for part in text.split(","))
    except ValueError:
        raise ConfigError(f"--seed-list: expected comma-separated ints, got {text!r}")
    return seeds


def _add_common(parser, seeds: bool = True) -> None:
    parser.add_argument("--spec", required=True, help="experiment spec (YAML)")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument(
        "--workers",
        type=int,
        default=None,
        help=f"worker processes (default: ${WORKERS_ENV} or 1)",
    )
    if seeds:
        parser.add_argument(
            "--seed-list", default=None, help="override seeds, e.g. 0,1,2"
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualtab", description="tabular dual-stream transformer experiments"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    _add_common(sub.add_parser("run", help="train over the spec's seed list"))
    _add_common(sub.add_parser("ablate", help="compare model variants"))
    sweep = sub.add_parser("assa-sweep", help="sparse-attention benchmark grid")
    _add_common(sweep)
    sweep.add_argument(
        "--full-scale",
        action="store_true",
        help="use the full benchmark sizes instead of the spec's",
    )

    encode = sub.add_parser("encode", help="fit/apply target encoders standalone")
    encode.add_argument("--spec", required=True, help="experiment spec (YAML)")
    encode.add_argument("--out", required=True, help="output directory")

    stats = sub.add_parser("stats", help="rank test on two runs.jsonl files")
    stats.add_argument("candidate", help="runs.jsonl of the arm under test")
    stats.add_argument("reference", help="runs.jsonl of the baseline arm")
    stats.add_argument("--out", default=None, help="also write wilcoxon.csv here")
    return parser


def _workers(args) -> int:
    n = args.workers if args.workers is not None else default_workers()
    if n < 1:
        raise ConfigError(f"--workers: expected >= 1, got {n}")
    return n


def _spec_for(args, seeds_into: str = "seeds"):
    spec = load_spec(args.spec)
    override = getattr(args, "seed_list", None)
    if override is not None:
        seeds = _parse_seed_list(override)
        if seeds_into == "sweep":
            from .experiment import SweepSpec

            base = spec.sweep if spec.sweep is not None else SweepSpec()
            spec.sweep = SweepSpec(rhos=base.rhos, seeds=seeds)
        else:
            spec.seeds = seeds
    return spec


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            summary = cmd_run(_spec_for(args), args.out, _workers(args))
            print(
                f"{summary['metric']} mean {summary['mean']:.6g} "
                f"std {summary['std']:.6g} over {summary['n_seeds']} seeds"
            )
        elif args.command == "ablate":
            rows = cmd_ablate(_spec_for(args), args.out, _workers(args))
            for name, metric, n, mean, std in rows:
                print(f"{name}: {metric} mean {mean:.6g} std {std:.6g} (n={n})")
        elif args.command == "assa-sweep":
            summary = cmd_assa_sweep(
                _spec_for(args, seeds_into="sweep"),
                args.out,
                _workers(args),
                full_scale=args.full_scale,
            )
            for row in summary:
                arm = "with sparse branch" if row["assa"] else "softmax only"
                print(
                    f"rho {row['rho']}: {arm} rmse {row['mean_rmse']:.4f} "
                    f"± {row['std_rmse']:.4f} (n={row['n']})"
                )
        elif args.command == "encode":
            cmd_encode(load_spec(args.spec), args.out)
            print(f"encoders and encoded columns written to {args.out}")
        elif args.command == "stats":
            row = cmd_stats(args.candidate, args.reference, args.out)
            verdict = "significant" if row["significant"] else "not significant"
            print(
                f"W={row['statistic']:.1f} p={row['p_value']:.6g} "
                f"n={row['n_nonzero']} ({row['method']}); {verdict} "
                f"at threshold {row['threshold']:.6g}"
            )
        else:  # pragma: no cover - argparse enforces the command set
            raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
