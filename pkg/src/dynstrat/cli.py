"""Command line entry point: ``python -m dynstrat {run,sweep,report}``."""
from __future__ import annotations

import argparse
import sys

from .harness import ExperimentConfig, report, run_experiment, sweep


def parse_grid(spec):
    """``"theta0=0.02,0.2;delta0=0.04"`` -> ``{"theta0": [0.02, 0.2], "delta0": [0.04]}``."""
    grid = {}
    for part in filter(None, (p.strip() for p in spec.split(";"))):
        key, _, vals = part.partition("=")
        if not vals:
            raise ValueError(f"bad grid entry {part!r}")
        cast = int if key.strip() == "lambda0" else float
        grid[key.strip()] = [cast(v) for v in vals.split(",") if v.strip()]
    return grid


def _common(p):
    p.add_argument("--config", help="YAML file with ExperimentConfig fields")
    p.add_argument("--problem")
    p.add_argument("--modes", help="comma separated: ns,bt,conv-r,conv-s")
    p.add_argument("--budget", type=int)
    p.add_argument("--macroreps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")


def build_parser():
    ap = argparse.ArgumentParser(prog="dynstrat")
    sub = ap.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("run", help="run one experiment"))
    sw = sub.add_parser("sweep", help="one-factor-at-a-time hyperparameter sweep")
    _common(sw)
    sw.add_argument("--grid", default="", help='e.g. "theta0=0.02,0.2;lambda0=40,80"')
    rp = sub.add_parser("report", help="rebuild summaries from progress.csv")
    rp.add_argument("--out", required=True)
    rp.add_argument("--checkpoints", type=int, default=21)
    return ap


def _config(args):
    over = {k: getattr(args, k, None) for k in ("problem", "modes", "budget", "macroreps", "seed", "workers", "out")}
    if getattr(args, "grid", None):
        over["grid"] = parse_grid(args.grid)
    if args.config:
        return ExperimentConfig.from_file(args.config, **over)
    return ExperimentConfig(**{k: v for k, v in over.items() if v is not None})


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            report(args.out, args.checkpoints)
            print(f"summaries rebuilt in {args.out}")
            return 0
        cfg = _config(args)
        if args.command == "run":
            out = run_experiment(cfg)
        else:
            sweep(cfg)
            out = cfg.out
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"results written to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
