"""Command-line interface: ``gasso <subcommand> [flags]``.

Subcommands: fit, assoc-test, ranks, annotate, retrieve, simulate, check.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .archive import load_model, save_model
from .association import permutation_test
from .expfam import DomainError, Family, in_support
from .fitter import FitConfig, SparsityRule, fit
from .model import DataBlock, Ranks, identifiability_report, natural_parameters
from .predictor import annotate, build_score_index, retrieve, top_k_tags
from .rankselect import cv_config, estimate_ranks
from .simgen import high_dim, preset, run_benchmark, sparsify


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# tables


@dataclass
class Table:
    ids: list[str]
    columns: list[str]
    X: np.ndarray


def read_table(path) -> Table:
    """CSV with a header row; first column holds sample IDs, the rest numbers."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CliError(f"{path}: empty file")
    header, body = rows[0], [r for r in rows[1:] if r]
    width = len(header)
    ids, data = [], []
    for k, row in enumerate(body, start=2):
        if len(row) != width:
            raise CliError(f"{path}: line {k} has {len(row)} fields, expected {width}")
        ids.append(row[0])
        try:
            data.append([float(v) for v in row[1:]])
        except ValueError as exc:
            raise CliError(f"{path}: line {k}: {exc}") from None
    X = np.array(data, dtype=float).reshape(len(body), width - 1)
    return Table(ids, header[1:], X)


def parse_family_decl(decl, p: int):
    if isinstance(decl, str) and "," in decl:
        fams = [Family.parse(t) for t in decl.split(",")]
        if len(fams) != p:
            raise CliError(f"family list has {len(fams)} entries for {p} columns")
        return fams
    return Family.parse(decl)


def read_block(path, family_decl) -> DataBlock:
    """Read a CSV block and validate every entry against its family's support."""
    t = read_table(path)
    block = DataBlock(t.X, parse_family_decl(family_decl, t.X.shape[1]))
    ok = in_support(block.family, block.X)
    if not ok.all():
        i, j = np.argwhere(~ok)[0]
        raise DomainError(f"{path}: row {t.ids[i]!r}, column {t.columns[j]!r}: value {t.X[i, j]!r} "
                          f"outside the {Family(block.family[j]).name.lower()} support")
    return block


def _fmt(v: float, integer: bool) -> str:
    return str(int(v)) if integer else repr(float(v))


def write_block(path, block: DataBlock, ids: Optional[Sequence[str]] = None,
                columns: Optional[Sequence[str]] = None) -> None:
    n, p = block.shape
    ids = list(ids) if ids is not None else [f"s{i + 1}" for i in range(n)]
    columns = list(columns) if columns is not None else [f"v{j + 1}" for j in range(p)]
    integer = block.family != Family.GAUSSIAN
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id"] + columns)
        for i in range(n):
            w.writerow([ids[i]] + [_fmt(block.X[i, j], integer[j]) for j in range(p)])


def preprocess_gaussian(X) -> tuple[np.ndarray, float]:
    """Standardise columns, estimate the noise level from the spectrum and rescale by it.

    The noise level uses the singular values past the last gap ratio above 2
    (all of them when there is no such gap): ``sigma^2 = sum_{i>k} s_i^2 /
    ((n - 1 - k)(p - k))``.
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if n < 2:
        raise ValueError("need at least two rows")
    sd = X.std(axis=0, ddof=1)
    zero = np.flatnonzero(sd == 0)
    if zero.size:
        raise ValueError(f"column {int(zero[0])} has zero variance")
    Xs = (X - X.mean(axis=0)) / sd
    s = np.linalg.svd(Xs, compute_uv=False)
    k = elbow_index(s)
    k = min(k, min(n - 2, p - 1))
    sigma = float(np.sqrt(np.sum(s[k:] ** 2) / ((n - 1 - k) * (p - k))))
    return Xs / sigma, sigma


def elbow_index(s: np.ndarray, ratio: float = 2.0) -> int:
    """Number of leading singular values before the last gap ratio above ``ratio``."""
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore"):
        gaps = s[:-1] / s[1:]
    big = np.flatnonzero(gaps > ratio)
    return int(big[-1] + 1) if big.size else 0


# ---------------------------------------------------------------------------
# manifest and data loading


@dataclass
class Dataset:
    d1: DataBlock
    d2: DataBlock
    ids: list[str]
    columns1: list[str]
    columns2: list[str]
    sigmas: dict


def _load_one(path, fam, preprocess: bool):
    t = read_table(path)
    decl = parse_family_decl(fam, t.X.shape[1])
    X = t.X
    sigma = None
    if preprocess:
        if DataBlock(X, decl).has(Family.BERNOULLI) or DataBlock(X, decl).has(Family.POISSON):
            raise CliError(f"{path}: preprocessing applies to Gaussian blocks only")
        X, sigma = preprocess_gaussian(X)
    block = DataBlock(X, decl)
    try:
        block.validate()
    except DomainError as exc:
        raise CliError(f"{path}: {exc}") from None
    return t, block, sigma


def load_dataset(args) -> Dataset:
    if args.manifest:
        cp = configparser.ConfigParser()
        if not cp.read(args.manifest):
            raise CliError(f"cannot read manifest {args.manifest}")
        base = Path(args.manifest).parent
        spec = []
        for sec in ("block1", "block2"):
            if sec not in cp:
                raise CliError(f"manifest lacks [{sec}]")
            s = cp[sec]
            spec.append((base / s["path"], s.get("family", "gaussian"),
                         s.get("preprocess", "none").lower() in ("standardize", "yes", "true")))
    else:
        if not (args.x1 and args.x2):
            raise CliError("give --manifest or both --x1 and --x2")
        spec = [(args.x1, args.family1, args.standardize), (args.x2, args.family2, args.standardize and
                                                             args.family2 == "gaussian")]
    (t1, d1, s1), (t2, d2, s2) = (_load_one(*s) for s in spec)
    if t1.ids != t2.ids:
        if sorted(t1.ids) != sorted(t2.ids):
            raise CliError("the two blocks describe different samples")
        pos = {k: i for i, k in enumerate(t2.ids)}
        order = [pos[k] for k in t1.ids]
        d2 = DataBlock(d2.X[order], d2.family)
    return Dataset(d1, d2, t1.ids, t1.columns, t2.columns, {"block1": s1, "block2": s2})


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return max(1, int(args.threads))
    return max(1, int(os.environ.get("GASSO_THREADS", "1")))


def _config(args) -> FitConfig:
    sparsity = None
    if args.mode == "sparse" and args.sparse_fraction is not None:
        sparsity = SparsityRule("quantile", args.sparse_fraction)
    return FitConfig(mode=args.mode, max_iter=args.max_iter, tol=args.tol, ridge_bernoulli=args.ridge,
                     sparsity=sparsity, seed=args.seed)


def _write_csv(path, header, rows) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------------------
# subcommands


def cmd_fit(args) -> int:
    ds = load_dataset(args)
    ranks = Ranks.parse(args.ranks)
    res = fit(ds.d1, ds.d2, ranks, _config(args))
    out = Path(args.out)
    meta = {
        "families1": ds.d1.family.tolist(), "families2": ds.d2.family.tolist(),
        "samples": ds.ids, "columns1": ds.columns1, "columns2": ds.columns2,
        "seed": args.seed, "mode": res.mode, "iterations": res.iterations, "converged": res.converged,
        "loglik": res.loglik, "flags": res.flags, "sigmas": ds.sigmas, "version": __version__,
    }
    save_model(out, res.params, meta)
    trace = out.with_suffix("").as_posix() + "_loglik.csv"
    _write_csv(trace, ["sweep", "loglik"], [(k, repr(v)) for k, v in enumerate(res.loglik_trace)])
    print(f"fit: {res.iterations} sweeps, converged={res.converged}, loglik={res.loglik:.6f}")
    print(f"archive: {out}\ntrace: {trace}")
    return 0


def cmd_assoc(args) -> int:
    params, _ = load_model(args.model)
    T1, T2 = natural_parameters(params)
    res = permutation_test(T1 - T1.mean(axis=0), T2 - T2.mean(axis=0), args.permutations, args.seed,
                           threads=_threads(args))
    text = res.report()
    print(text, end="")
    if args.out:
        Path(args.out).write_text(text)
        _write_csv(Path(args.out).with_suffix(".null.csv"), ["permutation", "rho"],
                   [(k, repr(float(v))) for k, v in enumerate(res.null_samples)])
    return 0


def cmd_ranks(args) -> int:
    ds = load_dataset(args)
    cfg = cv_config(tol=args.tol, seed=args.seed)
    est = estimate_ranks(ds.d1, ds.d2, args.folds, args.max_rank, args.seed, cfg, threads=_threads(args))
    print(f"per-block CV ranks: r1*={est.r1_star} r2*={est.r2_star} concatenated r0*={est.r0_star}")
    print(f"model ranks: r0={est.r0} r1={est.r1} r2={est.r2}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for name, sc in est.scores.items():
            (out / f"cv_{name}.csv").write_text(sc.to_csv())
    return 0


def _model_tags(meta, p2):
    return meta.get("columns2") or [f"tag{j + 1}" for j in range(p2)]


def cmd_annotate(args) -> int:
    params, meta = load_model(args.model)
    t = read_table(args.input)
    fam = args.family1 or meta.get("families1", "gaussian")
    if isinstance(fam, str):
        fam = parse_family_decl(fam, t.X.shape[1])
    names = _model_tags(meta, params.mu2.size)
    rows = []
    for sid, x in zip(t.ids, t.X):
        prob = annotate(params, x, fam)
        tags = top_k_tags(prob, min(args.top_k, prob.size), names)
        idx = {n: k for k, n in enumerate(names)}
        rows += [(sid, r + 1, tag, repr(float(prob[idx[tag]]))) for r, tag in enumerate(tags)]
    _emit(args.out, ["sample", "rank", "tag", "probability"], rows)
    return 0


def cmd_retrieve(args) -> int:
    params, meta = load_model(args.model)
    t = read_table(args.input)
    index = build_score_index(params, args.index_ridge, meta.get("samples"))
    rows = []
    for qid, q in zip(t.ids, t.X):
        r = retrieve(params, index, q)
        k = len(r.labels) if args.top_k is None else min(args.top_k, len(r.labels))
        rows += [(qid, j + 1, r.labels[j], repr(float(r.distances[j]))) for j in range(k)]
    _emit(args.out, ["query", "rank", "sample", "distance"], rows)
    return 0


def _emit(out, header, rows):
    if out:
        _write_csv(out, header, rows)
    else:
        w = csv.writer(sys.stdout)
        w.writerow(header)
        w.writerows(rows)


def cmd_simulate(args) -> int:
    spec = preset(args.setting, seed=args.seed)
    if args.p:
        spec = high_dim(spec, args.p)
    if args.sparse_fraction:
        spec = sparsify(spec, args.sparse_fraction)
    modes = [FitConfig(mode=m, max_iter=args.max_iter, tol=args.tol, ridge_bernoulli=args.ridge)
             for m in args.mode.split(",")]
    override = Ranks.parse(args.ranks) if args.ranks else None
    table = run_benchmark(spec, args.replicates, modes, override, threads=_threads(args))
    print(table.pretty())
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(table.to_csv())
    for mode, errs in table.failures.items():
        for e in errs:
            print(f"[{mode}] {e}", file=sys.stderr)
    return 0


def cmd_check(args) -> int:
    params, _ = load_model(args.model)
    rep = identifiability_report(params, args.tol_check)
    print(rep)
    return 0 if rep.ok else 1


# ---------------------------------------------------------------------------


def _data_flags(p):
    p.add_argument("--manifest", help="key-value config with [block1] / [block2] sections")
    p.add_argument("--x1", help="CSV for block 1")
    p.add_argument("--x2", help="CSV for block 2")
    p.add_argument("--family1", default="gaussian")
    p.add_argument("--family2", default="gaussian")
    p.add_argument("--standardize", action="store_true", help="standardise and noise-scale Gaussian blocks")


def _fit_flags(p):
    p.add_argument("--mode", default="onestep", choices=["full", "onestep", "sparse"])
    p.add_argument("--ridge", type=float, default=None, help="Bernoulli ridge (default: 1e-3 full, 0 one-step)")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--sparse-fraction", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gasso", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=None)

    p = sub.add_parser("fit", help="fit the model and write an archive")
    _data_flags(p), _fit_flags(p), common(p)
    p.add_argument("--ranks", required=True, help="r0,r1,r2")
    p.add_argument("--out", required=True, help="archive path (.npz) or directory")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("assoc-test", help="association coefficient and permutation p-value")
    p.add_argument("--model", required=True)
    p.add_argument("--permutations", type=int, default=1000)
    p.add_argument("--out")
    common(p)
    p.set_defaults(func=cmd_assoc)

    p = sub.add_parser("ranks", help="cross-validated rank selection")
    _data_flags(p), common(p)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--max-rank", type=int, default=10)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--out", help="directory for CV score tables")
    p.set_defaults(func=cmd_ranks)

    p = sub.add_parser("annotate", help="predict block-2 tags from block-1 features")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="CSV of new block-1 rows")
    p.add_argument("--family1", default=None)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--out")
    common(p)
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("retrieve", help="rank training samples for block-2 queries")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="CSV of binary query rows")
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--index-ridge", type=float, default=None)
    p.add_argument("--out")
    common(p)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("simulate", help="benchmark on a built-in simulation setting")
    p.add_argument("--setting", required=True, help="1-4")
    p.add_argument("--replicates", type=int, default=50)
    p.add_argument("--mode", default="onestep", help="comma-separated modes")
    p.add_argument("--ranks", help="rank override r0,r1,r2")
    p.add_argument("--p", type=int, default=None, help="high-dimensional variant p1 = p2 = p")
    p.add_argument("--sparse-fraction", type=float, default=None)
    p.add_argument("--ridge", type=float, default=None)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--out", help="CSV of medians and MADs")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("check", help="identifiability report for an archive")
    p.add_argument("--model", required=True)
    p.add_argument("--tol-check", type=float, default=1e-6)
    p.set_defaults(func=cmd_check)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return int(args.func(args))
    except (CliError, DomainError, ValueError, FileNotFoundError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"gasso {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
