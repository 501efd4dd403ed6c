#!/usr/bin/env python3
"""Setting 3 with growing feature counts: relative Theta losses should shrink with p."""
import argparse

from gasso.simgen import high_dim, preset, run_benchmark


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--p", default="120,200,300")
    ap.add_argument("--replicates", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    print(f"{'p':>5}{'rel_Theta1':>12}{'rel_Theta2':>12}{'angle_V0':>10}")
    for p in (int(v) for v in args.p.split(",")):
        s = run_benchmark(high_dim(preset(3, seed=args.seed), p), args.replicates,
                          threads=args.threads).summary("onestep")
        print(f"{p:>5}{s['rel_theta1'][0]:>12.4f}{s['rel_theta2'][0]:>12.4f}{s['angle_V0'][0]:>10.2f}")


if __name__ == "__main__":
    main()
