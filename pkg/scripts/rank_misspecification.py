#!/usr/bin/env python3
"""Setting 2 fitted with the true ranks and with misspecified rank triples."""
import argparse

from gasso.model import Ranks
from gasso.simgen import preset, run_benchmark

OVERRIDES = [(2, 2, 2), (1, 3, 3), (3, 1, 2), (4, 0, 2)]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--replicates", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    spec = preset(2, seed=args.seed)
    print(f"{'ranks':<12}{'Norm_Theta1':>14}{'Norm_Theta2':>14}{'rho_hat':>10}")
    for r in OVERRIDES:
        s = run_benchmark(spec, args.replicates, rank_override=Ranks(*r), threads=args.threads).summary("onestep")
        print(f"{str(r):<12}{s['norm_theta1'][0]:>14.2f}{s['norm_theta2'][0]:>14.2f}{s['rho_hat'][0]:>10.4f}")


if __name__ == "__main__":
    main()
