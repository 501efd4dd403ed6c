"""Rank selection by entrywise cross-validation, then solving for (r0, r1, r2)."""
from __future__ import annotations

import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import expfam
from .expfam import Family
from .fitter import DEFAULT_RIDGE, FitConfig, FitError, batched_glm, marginal_intercepts, surrogate
from .model import DataBlock, Ranks
from .numkit import factored_svd, thin_svd

FLAT_RTOL = 1e-3


@dataclass
class CvPlan:
    """Entrywise fold assignment; ``masks[l]`` marks the entries held out in fold ``l``."""

    folds: int
    masks: list[np.ndarray]
    seed: int

    def train(self, l: int) -> np.ndarray:
        return ~self.masks[l]

    def assignment(self) -> np.ndarray:
        out = np.full(self.masks[0].shape, -1)
        for l, m in enumerate(self.masks):
            out[m] = l
        return out


def _violations(assign: np.ndarray, folds: int) -> list[tuple[int, str, int]]:
    out = []
    for l in range(folds):
        held = assign == l
        for i in np.flatnonzero(held.all(axis=1)):
            out.append((l, "row", int(i)))
        for j in np.flatnonzero(held.all(axis=0)):
            out.append((l, "col", int(j)))
    return out


def make_cv_plan(n: int, p: int, folds: int, seed: int = 0, retries: int = 100) -> CvPlan:
    """Balanced random partition of the ``n x p`` entries into ``folds`` groups.

    Every fold leaves at least one retained entry in every row and column.
    Violations trigger up to ``retries`` redraws, then a swap repair.
    """
    if folds < 2:
        raise ValueError("need at least two folds")
    if folds > n * p:
        raise ValueError("more folds than entries")
    if n < 1 or p < 1:
        raise ValueError("empty matrix")
    rng = np.random.default_rng(seed)
    for _ in range(max(retries, 1)):
        assign = (rng.permutation(n * p) % folds).reshape(n, p)
        if not _violations(assign, folds):
            break
    else:
        assign = _repair(assign, folds, rng)
    masks = [assign == l for l in range(folds)]
    return CvPlan(folds, masks, int(seed))


def _repair(assign: np.ndarray, folds: int, rng: np.random.Generator) -> np.ndarray:
    assign = assign.copy()
    n, p = assign.shape
    for _ in range(10 * (n + p) * folds):
        bad = _violations(assign, folds)
        if not bad:
            return assign
        l, kind, k = bad[0]
        # swap one entry of the offending line with an entry from another fold
        line = (k, slice(None)) if kind == "row" else (slice(None), k)
        pos = rng.integers(assign[line].size)
        cell = (k, pos) if kind == "row" else (pos, k)
        others = np.argwhere(assign != l)
        if others.size == 0:
            break
        a, b = others[rng.integers(len(others))]
        assign[cell], assign[a, b] = assign[a, b], assign[cell]
    raise ValueError("cannot build folds leaving every row and column observed")


# ---------------------------------------------------------------------------
# incomplete-data fit


@dataclass
class IncompleteFit:
    mu: np.ndarray
    U: np.ndarray
    V: np.ndarray
    iterations: int
    converged: bool

    @property
    def theta(self) -> np.ndarray:
        return self.mu[None, :] + self.U @ self.V.T


def cv_config(**kw) -> FitConfig:
    """Default for held-out fits: sparse training masks make separation likely, so the
    Bernoulli ridge is on even though the one-step solver is used."""
    kw.setdefault("ridge_bernoulli", DEFAULT_RIDGE)
    return FitConfig(**kw)


def _obs_loglik(X, fam, theta, obs):
    return float(np.sum(obs * (X * theta - expfam.cumulant(fam, theta))))


def fit_incomplete(X: DataBlock, r: int, mask: np.ndarray, config: FitConfig | None = None) -> IncompleteFit:
    """Rank-``r`` fit of the natural parameters from the entries with ``mask`` true.

    Alternates column updates of ``(mu_j, v_j)`` and row updates of ``u_i``
    with zero weight on unobserved entries (single Newton steps, or damped
    IRLS for full mode and for blocks with Bernoulli columns), recentring ``U`` into
    ``mu`` and re-factorising ``U V^T`` after each sweep.
    """
    config = config or cv_config()
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != X.shape:
        raise ValueError("mask shape does not match the data")
    if not mask.any(axis=1).all() or not mask.any(axis=0).all():
        raise ValueError("every row and column needs an observed entry")
    n, p = X.shape
    if not 0 <= r <= min(n, p) - 1:
        raise ValueError(f"rank {r} out of range")
    obs = mask.astype(float)
    fam = X.family
    Y = np.where(mask, X.X, 0.0)
    lam = config.ridge_bernoulli if X.has(Family.BERNOULLI) else 0.0

    mu = marginal_intercepts(DataBlock(Y, fam), obs)
    Z = surrogate(DataBlock(Y, fam))
    colmean = (Z * obs).sum(axis=0) / obs.sum(axis=0)
    Z = np.where(mask, Z, colmean)
    U, d, V = thin_svd(Z - Z.mean(axis=0), r)
    U = U * d
    ones = np.ones((n, 1))
    # undamped single steps oscillate on logistic columns, so those get step halving
    damped = config.mode == "full" or X.has(Family.BERNOULLI)
    inner = dict(mode="full", max_iter=config.inner_irls_max, tol=config.inner_irls_tol) if damped else {}

    theta = mu[None, :] + U @ V.T
    ll = _obs_loglik(Y, fam, theta, obs)
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        coef = batched_glm(Y.T, fam[:, None], np.hstack([ones, U]), np.zeros((p, n)),
                           np.hstack([mu[:, None], V]), lam, obs=obs.T, **inner).beta
        mu, V = coef[:, 0], coef[:, 1:]
        if r:
            U = batched_glm(Y, fam[None, :], V, np.broadcast_to(mu, (n, p)), U, lam, obs=obs, **inner).beta
            m = U.mean(axis=0)
            mu = mu + V @ m
            U, V = factored_svd(U - m, V, r)
        theta = mu[None, :] + U @ V.T
        if not np.all(np.isfinite(theta)):
            raise FitError(f"incomplete-data fit diverged at sweep {it} (rank {r})")
        ll_new = _obs_loglik(Y, fam, theta, obs)
        if not np.isfinite(ll_new):
            raise FitError(f"non-finite observed log-likelihood at sweep {it} (rank {r})")
        if abs(ll_new - ll) / (1.0 + abs(ll)) < config.tol:
            converged = True
            break
        ll = ll_new
    return IncompleteFit(mu, U, V, it, converged)


# ---------------------------------------------------------------------------
# CV


@dataclass
class CvScores:
    candidates: list[int]
    table: np.ndarray  # candidates x folds, NaN for failed cells
    overall: np.ndarray
    selected: int
    flat_guard: bool = False

    def to_csv(self) -> str:
        head = ["rank"] + [f"fold{l + 1}" for l in range(self.table.shape[1])] + ["overall"]
        lines = [",".join(head)]
        for r, row, o in zip(self.candidates, self.table, self.overall):
            lines.append(",".join([str(r)] + [f"{v:.8g}" for v in row] + [f"{o:.8g}"]))
        return "\n".join(lines) + "\n"


def cv_score(X: DataBlock, r: int, plan: CvPlan, fold: int, config: FitConfig | None = None) -> float:
    """Mean squared Pearson residual on the held-out entries of one fold."""
    held = plan.masks[fold]
    f = fit_incomplete(X, r, ~held, config)
    res = expfam.pearson_residual(np.broadcast_to(X.family, X.shape)[held], X.X[held], f.theta[held])
    return float(np.mean(res ** 2))


def select_rank(candidates: Sequence[int], overall: np.ndarray, flat_guard: bool = False) -> tuple[int, bool]:
    """Argmin with ties to the smallest rank; optionally snap to the start of a flat tail."""
    overall = np.asarray(overall, dtype=float)
    if np.all(np.isnan(overall)):
        raise FitError("every candidate rank failed")
    k = int(np.nanargmin(overall))  # first minimiser = smallest rank
    if flat_guard:
        for j in range(k):
            tail = overall[j:]
            tail = tail[~np.isnan(tail)]
            if tail.size > 1 and (tail.max() - tail.min()) <= FLAT_RTOL * abs(tail.min()):
                warnings.warn(f"CV scores are flat from rank {candidates[j]}; choosing it over "
                              f"rank {candidates[k]}", stacklevel=2)
                return int(candidates[j]), True
    return int(candidates[k]), False


def cv_rank(X: DataBlock, candidates: Sequence[int], folds: int = 10, seed: int = 0,
            config: FitConfig | None = None, aggregate: str = "median", threads: int = 1) -> CvScores:
    """Choose the rank minimising the held-out Pearson score."""
    candidates = [int(c) for c in candidates]
    if not candidates:
        raise ValueError("no candidate ranks")
    n, p = X.shape
    if max(candidates) > min(n, p) - 1 or min(candidates) < 0:
        raise ValueError("candidate ranks must lie in [0, min(n, p) - 1]")
    config = config or cv_config()
    plan = make_cv_plan(n, p, folds, seed)
    cells = [(i, l) for i in range(len(candidates)) for l in range(folds)]

    def one(cell):
        i, l = cell
        try:
            return cv_score(X, candidates[i], plan, l, config)
        except (FitError, np.linalg.LinAlgError, expfam.DomainError):
            return float("nan")

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            vals = list(pool.map(one, cells))
    else:
        vals = [one(c) for c in cells]
    table = np.array(vals).reshape(len(candidates), folds)
    agg = {"median": np.nanmedian, "mean": np.nanmean}[aggregate]
    invalid = np.isnan(table).sum(axis=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        overall = np.array([agg(row) if bad <= folds / 2 else np.nan for row, bad in zip(table, invalid)])
    sel, flat = select_rank(candidates, overall, flat_guard=X.has(Family.BERNOULLI))
    return CvScores(candidates, table, overall, sel, flat)


# ---------------------------------------------------------------------------
# combining


def combine_ranks(r1_star: int, r2_star: int, r0_star: int) -> Ranks:
    """Solve ``r0 + r1 = r1*``, ``r0 + r2 = r2*``, ``r0 + r1 + r2 = r0*``."""
    lo, hi = max(r1_star, r2_star), r1_star + r2_star
    if not lo <= r0_star <= hi:
        warnings.warn(f"concatenated rank {r0_star} outside [{lo}, {hi}]; clamping", stacklevel=2)
        r0_star = min(max(r0_star, lo), hi)
    return Ranks(r1_star + r2_star - r0_star, r0_star - r2_star, r0_star - r1_star)


@dataclass
class RankEstimate:
    r1_star: int
    r2_star: int
    r0_star: int
    scores: dict[str, CvScores] = field(default_factory=dict)
    wall_time: float = 0.0

    @property
    def ranks(self) -> Ranks:
        return combine_ranks(self.r1_star, self.r2_star, self.r0_star)

    @property
    def r0(self) -> int:
        return self.ranks.r0

    @property
    def r1(self) -> int:
        return self.ranks.r1

    @property
    def r2(self) -> int:
        return self.ranks.r2


def estimate_ranks(d1: DataBlock, d2: DataBlock, folds: int = 10, max_rank: int = 10, seed: int = 0,
                   config: FitConfig | None = None, threads: int = 1) -> RankEstimate:
    """Two-step estimate: per-block CV ranks, then CV on the concatenated block."""
    if max_rank < 1:
        raise ValueError("max_rank must be at least 1")
    t0 = time.perf_counter()
    n = d1.shape[0]
    cands = lambda p: list(range(1, min(max_rank, min(n, p) - 1) + 1))  # noqa: E731
    s1 = cv_rank(d1, cands(d1.shape[1]), folds, seed, config, threads=threads)
    s2 = cv_rank(d2, cands(d2.shape[1]), folds, seed + 1, config, threads=threads)
    both = DataBlock(np.hstack([d1.X, d2.X]), np.concatenate([d1.family, d2.family]))
    lo, hi = max(s1.selected, s2.selected), s1.selected + s2.selected
    hi = min(hi, min(both.shape) - 1)
    s0 = cv_rank(both, list(range(lo, hi + 1)), folds, seed + 2, config, threads=threads)
    return RankEstimate(s1.selected, s2.selected, s0.selected,
                        {"block1": s1, "block2": s2, "joint": s0}, time.perf_counter() - t0)
