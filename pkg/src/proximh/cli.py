"""``prox-imh`` command line.

Exit codes: 0 success, 2 configuration error, 3 numerical failure (solver
breakdown, failed quality gate or failed oracle check).
"""

from __future__ import annotations

import argparse
import os
import sys

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _parser():
    from .config import EXPERIMENTS

    p = argparse.ArgumentParser(prog="prox-imh", description="Proximal IMH desk-scale experiments")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("experiment", choices=EXPERIMENTS)
    run.add_argument("--config", help="TOML file; defaults are used when omitted")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--seed", type=int)
    run.add_argument("--threads", type=int, help="BLAS thread count")

    val = sub.add_parser("validate", help="check a config file")
    val.add_argument("--config", required=True)
    val.add_argument("--experiment", choices=EXPERIMENTS)

    orc = sub.add_parser("oracle", help="run an oracle suite")
    orc.add_argument("suite", choices=("kl", "gradient", "kernel"))
    orc.add_argument("--seed", type=int, default=0)
    return p


def _set_threads(n):
    # must happen before numpy loads its BLAS
    for var in _THREAD_VARS:
        os.environ[var] = str(n)


def main(argv=None):
    args = _parser().parse_args(argv)
    if getattr(args, "threads", None) is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return EXIT_CONFIG
        _set_threads(args.threads)

    from . import config
    from .errors import ConfigError

    try:
        if args.command == "validate":
            cfg = config.load(args.config, args.experiment)
            print(f"ok: {cfg['experiment']} (seed {cfg['seed']})")
            return EXIT_OK
        if args.command == "run":
            cfg = (
                config.load(args.config, args.experiment, args.seed)
                if args.config
                else config.resolve({}, args.experiment, args.seed)
            )
            from .experiments import run

            run(cfg, args.out)
            print(f"wrote {args.experiment} outputs to {args.out}")
            return EXIT_OK
        from .oracles import SUITES

        checks = SUITES[args.suite](seed=args.seed)
        for c in checks:
            print(c.line())
        return EXIT_OK if all(c.passed for c in checks) else EXIT_NUMERICAL
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ArithmeticError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
