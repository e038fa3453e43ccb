"""Command line entry point: ``pmra run | slope | summarize``.

Exit codes: 0 on success, 1 for configuration errors, 2 for runtime failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from . import bench

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pmra", description="Projected multi-reference alignment experiments.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", parents=[common], help="run a Monte Carlo noise sweep and write trial records")
    run.add_argument("--preset", choices=sorted(bench.PRESETS), default="desk")
    run.add_argument("--p", type=int)
    run.add_argument("--n", type=int)
    run.add_argument("--sigma-min", type=float)
    run.add_argument("--sigma-max", type=float)
    run.add_argument("--sigma-count", type=int)
    run.add_argument("--trials", type=int)
    run.add_argument("--methods", help=f"comma-separated subset of {','.join(bench.METHODS)}")
    run.add_argument("--seed", type=int)
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--no-timing", action="store_true", help="write zero runtimes (byte-reproducible output)")
    run.add_argument("--summary", help="also write a summary CSV here")
    run.add_argument("--out", required=True)

    slope = sub.add_parser("slope", parents=[common], help="log-log slope of MSE against sigma")
    slope.add_argument("--in", dest="inp", required=True)
    slope.add_argument("--method", required=True)
    slope.add_argument("--sigma-lo", type=float, required=True)
    slope.add_argument("--sigma-hi", type=float, required=True)

    summ = sub.add_parser("summarize", parents=[common], help="aggregate trial records per (sigma, method)")
    summ.add_argument("--in", dest="inp", required=True)
    summ.add_argument("--out", required=True)
    return parser


def _config_from_args(args) -> bench.ExperimentConfig:
    base = bench.PRESETS[args.preset]
    grid = base.sigma_grid
    if args.sigma_min is not None or args.sigma_max is not None or args.sigma_count is not None:
        lo = args.sigma_min if args.sigma_min is not None else grid[0]
        hi = args.sigma_max if args.sigma_max is not None else grid[-1]
        count = args.sigma_count if args.sigma_count is not None else len(grid)
        if count < 1:
            raise bench.ConfigError("--sigma-count must be >= 1")
        grid = bench.log_grid(lo, hi, count)
    overrides = {
        "p": args.p,
        "n": args.n,
        "trials": args.trials,
        "seed": args.seed,
        "methods": tuple(m.strip() for m in args.methods.split(",")) if args.methods else None,
    }
    return dataclasses.replace(
        base,
        sigma_grid=grid,
        output_path=args.out,
        workers=args.workers,
        timing=not args.no_timing,
        **{k: v for k, v in overrides.items() if v is not None},
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "run":
            cfg = _config_from_args(args)
            if args.summary:
                bench.check_writable(args.summary)
            records = bench.run_experiment(cfg)
            if args.summary:
                bench.write_summary(bench.summarize(records), args.summary)
            print(f"wrote {len(records)} records to {cfg.output_path}")
        elif args.command == "slope":
            records = bench.read_records(args.inp)
            print(f"{bench.fit_scaling_slope(records, args.method, (args.sigma_lo, args.sigma_hi)):.6f}")
        else:
            bench.check_writable(args.out)
            bench.write_summary(bench.summarize(bench.read_records(args.inp)), args.out)
    except (bench.ConfigError, FileNotFoundError) as exc:
        print(f"pmra: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"pmra: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
