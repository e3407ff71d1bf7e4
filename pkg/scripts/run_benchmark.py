"""Run the wake benchmark and print terminal holdout statistics per strata mode.

    python3 scripts/run_benchmark.py --config scripts/configs/wake_baseline.yaml
"""
import argparse
import csv
import os
import time

import numpy as np

from dynstrat.harness import ExperimentConfig, run_experiment


def terminal_stats(out):
    last = {}
    with open(os.path.join(out, "progress.csv"), newline="") as fh:
        for r in csv.DictReader(fh):
            last.setdefault(r["mode"], {})[r["rep"]] = (float(r["theta"]), float(r["holdout"]))
    for mode, reps in last.items():
        th = np.array([v[0] for v in reps.values()])
        ho = np.array([v[1] for v in reps.values()])
        sd = ho.std(ddof=1) if ho.size > 1 else float("nan")
        print(f"{mode:7s} reps {ho.size:3d}  holdout mean {ho.mean():.6f} sd {sd:.6f}  "
              f"theta mean {th.mean():.4f} range [{th.min():.4f}, {th.max():.4f}]")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=os.path.join(os.path.dirname(__file__), "configs", "wake_baseline.yaml"))
    ap.add_argument("--macroreps", type=int)
    ap.add_argument("--budget", type=int)
    ap.add_argument("--workers", type=int)
    ap.add_argument("--out")
    args = ap.parse_args()
    cfg = ExperimentConfig.from_file(args.config, macroreps=args.macroreps, budget=args.budget,
                                     workers=args.workers, out=args.out)
    t0 = time.perf_counter()
    out = run_experiment(cfg)
    print(f"wrote {out} in {time.perf_counter() - t0:.1f}s")
    terminal_stats(out)
    with open(os.path.join(out, "selection_freq.csv"), newline="") as fh:
        rows = [r for r in csv.DictReader(fh) if r["mode"] == "conv-s"]
    rows.sort(key=lambda r: -float(r["mean_count"]))
    for r in rows[:5]:
        print(f"conv-s selects {r['candidate']:10s} {float(r['mean_count']):.2f} +- {float(r['se']):.2f} per rep")


if __name__ == "__main__":
    main()
