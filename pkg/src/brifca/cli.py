"""Command-line batch runner.

Examples::

    brifca --config configs/setting_b.json --d 20 --d 500 --trials 10 --out results/
    brifca --setting b --method brifca_trimmed --method ifca_fedavg --d 100 --out results/
    brifca --config configs/setting_b.json --diagnose

Exit status: 0 when every trial succeeded, 1 if any trial failed, 2 on a
configuration error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .core import BrifcaError, ConfigError, ExperimentConfig, load_config
from .experiment import METHODS, SETTINGS, SweepSpec, diagnose, run_sweep

log = logging.getLogger("brifca")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="brifca", description="Byzantine-robust clustered FL simulator")
    p.add_argument("--config", type=Path, help="JSON experiment config")
    p.add_argument("--method", action="append", choices=METHODS,
                   help="method to run (repeatable; default: all)")
    p.add_argument("--d", action="append", type=int, help="dimension (repeatable)")
    p.add_argument("--setting", action="append", choices=sorted(SETTINGS),
                   help="named (k, m) setting (repeatable; default: the config's k and m)")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--seed", type=int, help="base seed (overrides the config)")
    p.add_argument("--iterations", type=int, help="T (overrides the config)")
    p.add_argument("--out", type=Path, default=Path("results"))
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--resampling", action="store_true", help="fresh data subsets each round")
    p.add_argument("--timing", action="store_true",
                   help="fill elapsed_ms (makes raw.csv differ between runs)")
    p.add_argument("--diagnose", action="store_true",
                   help="print assumption diagnostics instead of running a sweep")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        base = load_config(args.config) if args.config else ExperimentConfig()
        changes = {}
        if args.seed is not None:
            changes["seed"] = args.seed
        if args.iterations is not None:
            changes["T"] = args.iterations
        if args.resampling:
            changes["resampling"] = True
        base = replace(base, **changes).validate()
        settings = tuple(SETTINGS[s] for s in args.setting or ())
        if args.diagnose:
            for k, m in settings or ((base.k, base.m),):
                for d in args.d or (base.d,):
                    print(f"# k={k} m={m} d={d}")
                    diagnose(replace(base, k=k, m=m, d=d).validate(), stream=sys.stdout)
            return 0
        spec = SweepSpec(
            base=base, out=args.out, dims=tuple(args.d or ()), settings=settings,
            methods=tuple(args.method or METHODS), trials=args.trials,
            parallelism=args.parallelism, timing=args.timing,
        )
        if spec.trials < 1:
            raise ConfigError("--trials must be positive")
        summary, failed = run_sweep(spec)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return 2
    except OSError as exc:
        log.error("cannot write output: %s", exc)
        return 1
    except BrifcaError as exc:
        log.error("%s", exc)
        return 2
    for row in summary:
        print(f"{row['setting']} {row['method']:<15} d={row['d']:<4} "
              f"dist={row['mean_dist']} se={row['stderr_dist']} failed={row['failed']}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
