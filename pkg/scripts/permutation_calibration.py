#!/usr/bin/env python3
"""Null calibration of the permutation test and its power on fitted Setting 1 parameters."""
import argparse

import numpy as np
from scipy import stats

from gasso.association import permutation_test
from gasso.fitter import fit
from gasso.model import natural_parameters
from gasso.simgen import generate, preset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--outer", type=int, default=200)
    ap.add_argument("--permutations", type=int, default=500)
    ap.add_argument("--seeds", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    p = []
    for k in range(args.outer):
        T1, T2 = rng.normal(size=(100, 20)), rng.normal(size=(100, 20))
        p.append(permutation_test(T1 - T1.mean(0), T2 - T2.mean(0), args.permutations, seed=k).p_value)
    print(f"null: KS p-value against U(0,1) = {stats.kstest(p, 'uniform').pvalue:.3f}")
    for seed in range(args.seeds):
        spec = preset(1, seed=seed)
        _, d1, d2 = generate(spec)
        T1, T2 = natural_parameters(fit(d1, d2, spec.ranks).params)
        res = permutation_test(T1 - T1.mean(0), T2 - T2.mean(0), args.permutations, seed=seed)
        print(f"seed {seed}: rho0 = {res.rho0:.4f}, p = {res.p_value:.4f}")


if __name__ == "__main__":
    main()
