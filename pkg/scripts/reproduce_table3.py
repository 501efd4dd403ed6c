#!/usr/bin/env python3
"""Benchmark the four simulation settings and print median (MAD) tables.

    python scripts/reproduce_table3.py --replicates 50 --modes onestep,full
"""
import argparse
from pathlib import Path

from gasso.fitter import FitConfig
from gasso.simgen import preset, run_benchmark, sparsify


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--settings", default="1,2,3,4")
    ap.add_argument("--replicates", type=int, default=50)
    ap.add_argument("--modes", default="onestep,full")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--sparse", type=float, default=None, help="truncate joint loadings to this zero fraction")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", type=Path, default=None, help="directory for per-setting CSV files")
    args = ap.parse_args()

    modes = [FitConfig(mode=m) for m in args.modes.split(",")]
    for s in args.settings.split(","):
        spec = preset(s, seed=args.seed)
        if args.sparse:
            spec = sparsify(spec, args.sparse)
            modes = modes + [FitConfig(mode="sparse")]
        tab = run_benchmark(spec, args.replicates, modes, threads=args.threads)
        print(tab.pretty(), "\n")
        for mode, errs in tab.failures.items():
            for e in errs:
                print(f"  [{mode}] {e}")
        if args.out:
            args.out.mkdir(parents=True, exist_ok=True)
            (args.out / f"{spec.id}.csv").write_text(tab.to_csv())


if __name__ == "__main__":
    main()
