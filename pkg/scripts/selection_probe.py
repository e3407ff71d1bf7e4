"""Which concomitant candidate does the simulated-concomitant builder pick at a given theta?

Draws repeated pilots from the wake benchmark and tallies the selected candidate.

    python3 scripts/selection_probe.py --theta 0.02 0.05 0.15 --pilots 200
"""
import argparse
from collections import Counter

from dynstrat.conv_strata import ConvConfig, build_conv_strata
from dynstrat.core import IndexStream, RandomStream
from dynstrat.wake import NoiseModel, WakeProblem, generate_synthetic_dataset


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--theta", type=float, nargs="+", default=[0.02, 0.05, 0.1, 0.15])
    ap.add_argument("--pilots", type=int, default=100)
    ap.add_argument("--size", type=int, default=80)
    ap.add_argument("--noise-scale", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    pb = WakeProblem()
    ds = generate_synthetic_dataset(pb.layout, 20_000, noise=NoiseModel(scale=args.noise_scale),
                                    stream=RandomStream(args.seed, 0, "dataset"))
    cands = pb.concomitant_candidates()
    for theta in args.theta:
        draws = IndexStream(len(ds), RandomStream(args.seed, 0, "draws"))
        boot = RandomStream(args.seed, 0, "bootstrap")
        tally = Counter()
        for _ in range(args.pilots):
            idx = draws.take(args.size)
            losses, aux = pb.simulate([theta], ds.X[idx], ds.Y[idx])
            s = build_conv_strata("simulated", cands, ds.X[idx], aux, losses, None, ConvConfig(), boot)
            tally[s.candidate.name if s.n_strata > 1 else "none"] += 1
        top = ", ".join(f"{k} {v}" for k, v in tally.most_common(4))
        print(f"theta {theta:.3f}: {top}")


if __name__ == "__main__":
    main()
