"""Alternating IRLS estimation of the joint/individual decomposition.

Every sub-update of a sweep is a collection of independent GLMs that share a
design matrix (the loadings for score updates, ``(1, scores)`` for loading
updates).  :func:`batched_glm` solves all of them at once; ``glm_row_fit`` is
the single-problem view of the same routine.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import partial
from typing import Optional

import numpy as np

from . import expfam
from .expfam import Family
from .model import (
    DataBlock,
    FitResult,
    GasParams,
    Ranks,
    natural_parameters,
    normalize,
)
from .numkit import batched_solve_spd, thin_svd

MODES = ("full", "onestep", "sparse")
DEFAULT_RIDGE = 1e-3


class FitError(RuntimeError):
    pass


class SparsityError(ValueError):
    pass


@dataclass(frozen=True)
class SparsityRule:
    """Thresholding rule for sparse joint loadings.

    ``kind="asymptotic"`` uses a per-block hard threshold of
    ``sigma * sqrt(2 log p_block)``; ``kind="quantile"`` zeroes the smallest
    ``fraction`` of absolute entries in each block.
    """

    kind: str = "asymptotic"
    fraction: float = 0.0

    def __post_init__(self):
        if self.kind not in ("asymptotic", "quantile"):
            raise ValueError(f"unknown sparsity rule {self.kind!r}")
        if not 0.0 <= self.fraction < 1.0:
            raise ValueError("fraction must lie in [0, 1)")


@dataclass
class FitConfig:
    mode: str = "onestep"
    max_iter: Optional[int] = None
    tol: float = 1e-6
    # None resolves to 1e-3 in full mode and 0 in the one-step modes
    ridge_bernoulli: Optional[float] = None
    inner_irls_max: int = 50
    inner_irls_tol: float = 1e-8
    sparsity: Optional[SparsityRule] = None
    seed: int = 0
    init: str = "shared"

    def __post_init__(self):
        self.mode = self.mode.lower().replace("-", "")
        if self.mode == "onestepsparse":
            self.mode = "sparse"
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.max_iter is None:
            self.max_iter = 1000 if self.mode == "full" else 2000
        if self.tol <= 0 or self.max_iter < 1:
            raise ValueError("need tol > 0 and max_iter >= 1")
        if self.ridge_bernoulli is None:
            self.ridge_bernoulli = DEFAULT_RIDGE if self.mode == "full" else 0.0
        if self.ridge_bernoulli < 0:
            raise ValueError("ridge must be nonnegative")
        if self.mode == "sparse" and self.sparsity is None:
            self.sparsity = SparsityRule()


# ---------------------------------------------------------------------------
# batched GLM


@dataclass
class GlmBatch:
    beta: np.ndarray
    stalled: np.ndarray
    ll_before: Optional[np.ndarray]
    ll_after: Optional[np.ndarray]
    iterations: int = 1


def _glm_objective(Y, fam, offset, design, beta, obs, lam, m_eff):
    theta = offset + beta @ design.T
    ll = Y * theta - expfam.cumulant(fam, theta)
    if obs is not None:
        ll = ll * obs
    ll = ll.sum(axis=1)
    return ll, ll - 0.5 * m_eff * lam * np.einsum("ij,ij->i", beta, beta)


def _newton(Y, fam, offset, design, beta, obs, lam, m_eff):
    theta = offset + beta @ design.T
    w = expfam.variance_from_natural(fam, theta)
    r = Y - expfam.mean_from_natural(fam, theta)
    if obs is not None:
        w = w * obs
        r = r * obs
    q = design.shape[1]
    G = np.matmul(design.T[None, :, :] * w[:, None, :], design)
    rhs = np.matmul(G, beta[:, :, None])[:, :, 0] + r @ design
    stalled = w.sum(axis=1) <= expfam.VARIANCE_FLOOR * max(1, design.shape[0])
    if q:
        G = G + (m_eff * lam)[:, None, None] * np.eye(q)[None]
    new = batched_solve_spd(G, rhs)
    new[stalled] = beta[stalled]
    return new, stalled


def batched_glm(
    Y: np.ndarray,
    fam,
    design: np.ndarray,
    offset: np.ndarray,
    warm: np.ndarray,
    lam=0.0,
    mode: str = "onestep",
    obs: Optional[np.ndarray] = None,
    max_iter: int = 50,
    tol: float = 1e-8,
    track: bool = False,
) -> GlmBatch:
    """Solve ``P`` GLMs ``E[Y[p]] = b'(offset[p] + design @ beta[p])`` together.

    ``fam`` broadcasts against ``Y`` (shape ``P x m``), ``obs`` optionally
    zero-weights unobserved responses and ``lam`` (scalar or length ``P``)
    adds the penalty ``(m/2) * lam * ||beta||^2`` with ``m`` the number of
    observed responses.  ``mode="onestep"`` takes a single Newton step from
    ``warm``; ``mode="full"`` iterates Newton steps with step halving until
    the penalised objective stabilises.  Per-problem log-likelihoods before
    and after are always reported in full mode, and in one-step mode only
    with ``track=True``.
    """
    Y = np.asarray(Y, dtype=float)
    P, m = Y.shape
    design = np.asarray(design, dtype=float)
    warm = np.asarray(warm, dtype=float).reshape(P, design.shape[1])
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (P,))
    m_eff = obs.sum(axis=1) if obs is not None else np.full(P, float(m))
    fam = np.broadcast_to(np.asarray(fam, dtype=np.int8), Y.shape) if np.ndim(fam) else fam

    if mode == "onestep":
        beta, stalled = _newton(Y, fam, offset, design, warm, obs, lam, m_eff)
        if not track:
            return GlmBatch(beta, stalled, None, None, 1)
        ll0, _ = _glm_objective(Y, fam, offset, design, warm, obs, lam, m_eff)
        ll1, _ = _glm_objective(Y, fam, offset, design, beta, obs, lam, m_eff)
        return GlmBatch(beta, stalled, ll0, ll1, 1)
    if mode != "full":
        raise ValueError(f"unknown GLM mode {mode!r}")
    ll0, obj0 = _glm_objective(Y, fam, offset, design, warm, obs, lam, m_eff)

    beta = warm.copy()
    obj = obj0
    stalled_any = np.zeros(P, dtype=bool)
    active = np.ones(P, dtype=bool)
    it = 0
    for it in range(1, max_iter + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        sub = (Y[idx], fam[idx] if np.ndim(fam) else fam, offset[idx], obs[idx] if obs is not None else None)
        prop, stalled = _newton(sub[0], sub[1], sub[2], design, beta[idx], sub[3], lam[idx], m_eff[idx])
        stalled_any[idx] |= stalled
        step = prop - beta[idx]
        cur = obj[idx]
        accepted = np.zeros(idx.size, dtype=bool)
        new_beta = beta[idx].copy()
        new_obj = cur.copy()
        t = 1.0
        for _ in range(40):
            todo = ~accepted
            if not todo.any():
                break
            cand = beta[idx][todo] + t * step[todo]
            sub_t = (sub[0][todo], sub[1][todo] if np.ndim(fam) else fam, sub[2][todo],
                     sub[3][todo] if obs is not None else None)
            _, o = _glm_objective(sub_t[0], sub_t[1], sub_t[2], design, cand, sub_t[3],
                                  lam[idx][todo], m_eff[idx][todo])
            ok = np.isfinite(o) & (o >= cur[todo] - 1e-12 * np.abs(cur[todo]))
            where = np.flatnonzero(todo)[ok]
            new_beta[where] = cand[ok]
            new_obj[where] = o[ok]
            accepted[where] = True
            t *= 0.5
        gain = new_obj - cur
        beta[idx] = new_beta
        obj[idx] = new_obj
        small = (np.abs(gain) <= tol * (1.0 + np.abs(cur))) | ~accepted | stalled
        active[idx[small]] = False
    ll1, _ = _glm_objective(Y, fam, offset, design, beta, obs, lam, m_eff)
    return GlmBatch(beta, stalled_any, ll0, ll1, it)


def glm_row_fit(y, families, design, offset, warm, lam: float = 0.0, mode: str = "onestep",
                max_iter: int = 50, tol: float = 1e-8, return_info: bool = False):
    """Fit one GLM with per-entry families (Newton/IRLS).

    ``mode`` is ``"full"`` (IRLS to convergence) or ``"onestep"`` (a single
    weighted least squares step from ``warm``).
    """
    y = np.asarray(y, dtype=float)
    design = np.asarray(design, dtype=float)
    if design.ndim == 1:
        design = design[:, None]
    if y.ndim != 1 or y.size < 1 or design.shape[0] != y.size:
        raise ValueError("response and design disagree")
    fam = np.broadcast_to(np.asarray(families, dtype=np.int8), y.shape)
    if not expfam.in_support(fam, y).all():
        raise expfam.DomainError("response outside family support")
    offset = np.broadcast_to(np.asarray(offset, dtype=float), y.shape)
    mode = {"fullirls": "full", "full": "full", "onestep": "onestep"}[mode.lower().replace("-", "").replace("_", "")]
    res = batched_glm(y[None], fam[None], design, offset[None], np.asarray(warm, dtype=float)[None],
                      lam, mode, max_iter=max_iter, tol=tol)
    if return_info:
        return res.beta[0], bool(res.stalled[0])
    return res.beta[0]


# ---------------------------------------------------------------------------
# sparse joint loadings


def _mad_sigma(M: np.ndarray) -> float:
    med = np.median(M)
    return 1.4826 * float(np.median(np.abs(M - med)))


def _threshold_block(B: np.ndarray, rule: SparsityRule, sigma: float) -> np.ndarray:
    B = B.copy()
    if rule.kind == "quantile":
        k = int(np.floor(rule.fraction * B.size))
        if k > 0:
            flat = np.argsort(np.abs(B), axis=None, kind="stable")[:k]
            B.flat[flat] = 0.0
        return B
    p = B.shape[0]
    thr = sigma * np.sqrt(2.0 * np.log(max(p, 2)))
    B[np.abs(B) < thr] = 0.0
    return B


def _qr_pos(M: np.ndarray) -> np.ndarray:
    Q, R = np.linalg.qr(M)
    s = np.sign(np.diag(R))
    s[s == 0] = 1.0
    return Q * s


def sparse_joint_svd(J: np.ndarray, r0: int, rule: SparsityRule | None = None, split: int | None = None,
                     max_iter: int = 200, tol: float = 1e-6):
    """Alternating thresholded SVD of a column-centred joint matrix.

    Loadings for rows ``[:split]`` and ``[split:]`` are thresholded
    separately, then the concatenated loadings are orthonormalised.  Returns
    ``(U0, V0)`` with singular values absorbed into ``U0``.
    """
    rule = rule or SparsityRule()
    J = np.asarray(J, dtype=float)
    n, p = J.shape
    split = p if split is None else split
    if r0 == 0:
        return np.zeros((n, 0)), np.zeros((p, 0))
    U, d, V = thin_svd(J, r0)
    blocks = [slice(0, split), slice(split, p)]
    sigmas = [_mad_sigma(J[:, b]) if b.stop > b.start else 0.0 for b in blocks]
    for _ in range(max_iter):
        Vt = J.T @ U
        for b, s in zip(blocks, sigmas):
            if b.stop > b.start:
                Vt[b] = _threshold_block(Vt[b], rule, s)
        dead = np.flatnonzero(~np.any(Vt != 0, axis=0))
        if dead.size:
            raise SparsityError(f"thresholding removed joint component {int(dead[0]) + 1} entirely")
        Vn = _qr_pos(Vt)
        U = _qr_pos(J @ Vn)
        # subspace change: sine of the largest principal angle
        change = np.linalg.norm(Vn - V @ (V.T @ Vn), 2)
        V = Vn
        if change < tol:
            break
    scores = J @ V
    # order components by score norm, loading sign: largest |entry| positive
    order = np.argsort(-np.einsum("ij,ij->j", scores, scores), kind="stable")
    scores, V = scores[:, order], V[:, order]
    idx = np.argmax(np.abs(V), axis=0)
    sgn = np.sign(V[idx, np.arange(V.shape[1])])
    sgn[sgn == 0] = 1.0
    return scores * sgn, V * sgn


# ---------------------------------------------------------------------------
# initialisation


def _clip_mean(fam: np.ndarray, m: np.ndarray, n: int) -> np.ndarray:
    eps = 1.0 / (2 * n)
    m = m.copy()
    b = fam == Family.BERNOULLI
    m[b] = np.clip(m[b], eps, 1 - eps)
    p = fam == Family.POISSON
    m[p] = np.maximum(m[p], eps)
    return m


def marginal_intercepts(d: DataBlock, obs: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-column marginal MLE of the natural parameter (clipped means)."""
    n = d.X.shape[0]
    if obs is None:
        m = d.X.mean(axis=0)
    else:
        cnt = np.maximum(obs.sum(axis=0), 1)
        m = (d.X * obs).sum(axis=0) / cnt
    return np.asarray(expfam.link(d.family, _clip_mean(d.family, m, n)))


BERNOULLI_SURROGATE_CLIP = 0.1
POISSON_SURROGATE_FLOOR = 0.5


def surrogate(d: DataBlock) -> np.ndarray:
    """Entrywise natural-parameter surrogate: link of clipped data."""
    X = d.X.copy()
    fam = np.broadcast_to(d.family, X.shape)
    b = fam == Family.BERNOULLI
    X[b] = np.clip(X[b], BERNOULLI_SURROGATE_CLIP, 1 - BERNOULLI_SURROGATE_CLIP)
    p = fam == Family.POISSON
    X[p] = np.maximum(X[p], POISSON_SURROGATE_FLOOR)
    return np.asarray(expfam.link(d.family, X))


def initialize(d1: DataBlock, d2: DataBlock, ranks: Ranks, seed: int = 0, init: str = "shared") -> GasParams:
    """Deterministic SVD start; ``seed`` is accepted for interface symmetry.

    ``init="svd"`` takes the joint part from the SVD of the concatenated,
    centred surrogates.  ``init="shared"`` first finds the directions common
    to the two per-block score spaces, which avoids mistaking a dominant
    individual component for joint structure.
    """
    n, p1 = d1.shape
    p2 = d2.shape[1]
    ranks.check(n, p1, p2)
    r0, r1, r2 = ranks
    mu1 = marginal_intercepts(d1)
    mu2 = marginal_intercepts(d2)
    Z1 = surrogate(d1)
    Z2 = surrogate(d2)
    Z1 = Z1 - Z1.mean(axis=0)
    Z2 = Z2 - Z2.mean(axis=0)
    Z = np.hstack([Z1, Z2])
    if init == "shared" and r0 > 0:
        # joint scores = leading directions common to both blocks' score spaces
        B1 = thin_svd(Z1, min(r0 + r1, min(n, p1)))[0]
        B2 = thin_svd(Z2, min(r0 + r2, min(n, p2)))[0]
        B = thin_svd(np.hstack([B1, B2]), r0)[0]
        U, d, V = thin_svd(B @ (B.T @ Z), r0)
    elif init in ("svd", "shared"):
        U, d, V = thin_svd(Z, r0)
    else:
        raise ValueError(f"unknown initialisation {init!r}")
    U0 = U * d
    R1 = Z1 - U0 @ V[:p1].T
    R2 = Z2 - U0 @ V[p1:].T
    Ua, da, A1 = thin_svd(R1, r1)
    Ub, db, A2 = thin_svd(R2, r2)
    params = GasParams(mu1=mu1, mu2=mu2, U0=U0, U1=Ua * da, U2=Ub * db,
                       V1=V[:p1], V2=V[p1:], A1=A1, A2=A2)
    return normalize(params)


# ---------------------------------------------------------------------------
# main loop


@dataclass
class _Workspace:
    d1: DataBlock
    d2: DataBlock
    config: FitConfig
    base: float = 0.0
    flags: list = field(default_factory=list)


def _lam(cfg: FitConfig, *fams: np.ndarray) -> float:
    return cfg.ridge_bernoulli if any(np.any(f == Family.BERNOULLI) for f in fams) else 0.0


def _loglik(ws: _Workspace, params: GasParams) -> float:
    T1, T2 = natural_parameters(params)
    ll = np.sum(ws.d1.X * T1 - expfam.cumulant(ws.d1.family, T1))
    ll += np.sum(ws.d2.X * T2 - expfam.cumulant(ws.d2.family, T2))
    return float(ll + ws.base)


def _solve(ws: _Workspace, Y, fam, design, offset, warm, lam, name):
    cfg = ws.config
    mode = "full" if cfg.mode == "full" else "onestep"
    res = batched_glm(Y, fam, design, offset, warm, lam, mode,
                      max_iter=cfg.inner_irls_max, tol=cfg.inner_irls_tol)
    beta = res.beta
    if mode == "full":
        # the likelihood splits over the independent problems, so keeping the
        # old coefficients wherever a problem lost likelihood makes the whole
        # sub-update monotone even with the ridge term active
        worse = res.ll_after < res.ll_before
        beta = np.where(worse[:, None], warm, beta)
    if not np.all(np.isfinite(beta)):
        raise FitError(f"non-finite estimates in the {name} update")
    if res.stalled.any() and "stall" not in ws.flags:
        ws.flags.append("stall")
    return beta


def sweep(ws: _Workspace, P: GasParams, joint_svd=None):
    d1, d2, cfg = ws.d1, ws.d2, ws.config
    X1, X2 = d1.X, d2.X
    f1, f2 = d1.family, d2.family
    mu1, mu2 = P.mu1.copy(), P.mu2.copy()
    U0, U1, U2 = P.U0.copy(), P.U1.copy(), P.U2.copy()
    V1, V2, A1, A2 = P.V1.copy(), P.V2.copy(), P.A1.copy(), P.A2.copy()
    n = X1.shape[0]
    ones = np.ones((n, 1))
    lam1 = _lam(cfg, f1)
    lam2 = _lam(cfg, f2)

    def individual(X, f, lam, mu, U, A, V, k):
        J = U0 @ V.T
        if U.shape[1]:
            off = mu[None, :] + J
            U = _solve(ws, X, f[None, :], A, off, U, lam, f"U{k}")
        design = np.hstack([ones, U])
        coef = _solve(ws, X.T, f[:, None], design, J.T, np.hstack([mu[:, None], A]), lam, f"(mu{k}, A{k})")
        return U, coef[:, 0].copy(), coef[:, 1:].copy()

    U1, mu1, A1 = individual(X1, f1, lam1, mu1, U1, A1, V1, 1)
    U2, mu2, A2 = individual(X2, f2, lam2, mu2, U2, A2, V2, 2)

    design = np.hstack([ones, U0])
    c1 = _solve(ws, X1.T, f1[:, None], design, (U1 @ A1.T).T, np.hstack([mu1[:, None], V1]), lam1, "(mu1, V1)")
    mu1, V1 = c1[:, 0].copy(), c1[:, 1:].copy()
    c2 = _solve(ws, X2.T, f2[:, None], design, (U2 @ A2.T).T, np.hstack([mu2[:, None], V2]), lam2, "(mu2, V2)")
    mu2, V2 = c2[:, 0].copy(), c2[:, 1:].copy()

    if U0.shape[1]:
        X = np.hstack([X1, X2])
        f = np.concatenate([f1, f2])
        off = np.hstack([mu1[None, :] + U1 @ A1.T, mu2[None, :] + U2 @ A2.T])
        U0 = _solve(ws, X, f[None, :], np.vstack([V1, V2]), off, U0, _lam(cfg, f1, f2), "U0")

    raw = GasParams(mu1=mu1, mu2=mu2, U0=U0, U1=U1, U2=U2, V1=V1, V2=V2, A1=A1, A2=A2)
    return normalize(raw, joint_svd=joint_svd, return_info=True)


def fit(d1: DataBlock, d2: DataBlock, ranks: Ranks, config: FitConfig | None = None,
        init: GasParams | None = None, callback=None) -> FitResult:
    """Estimate the model by alternating (full or one-step) IRLS sweeps."""
    config = config or FitConfig()
    if d1.shape[0] != d2.shape[0]:
        raise ValueError("data blocks are not row-aligned")
    d1.validate()
    d2.validate()
    t0 = time.perf_counter()
    ws = _Workspace(d1, d2, config)
    ws.base = float(expfam.log_base_measure(d1.family, d1.X).sum()
                    + expfam.log_base_measure(d2.family, d2.X).sum())
    params = init if init is not None else initialize(d1, d2, ranks, config.seed, config.init)
    joint_svd = None
    if config.mode == "sparse":
        joint_svd = partial(_sparse_adapter, rule=config.sparsity, split=d1.shape[1])
    ll = _loglik(ws, params)
    if not np.isfinite(ll):
        raise FitError("non-finite log-likelihood at initialisation")
    trace = [ll]
    converged = False
    collapse = False
    it = 0
    for it in range(1, config.max_iter + 1):
        out = sweep(ws, params, joint_svd)
        params = out.params
        collapse |= out.rank_collapse
        ll_new = _loglik(ws, params)
        if not np.isfinite(ll_new):
            raise FitError(f"non-finite log-likelihood after sweep {it} (normalization)")
        if config.mode != "full" and ll_new < ll - 1e-6 * abs(ll) and "loglik_decrease" not in ws.flags:
            ws.flags.append("loglik_decrease")
        trace.append(ll_new)
        if callback is not None:
            callback(it, params, ll_new)
        if abs(ll_new - ll) / (1.0 + abs(ll)) < config.tol:
            converged = True
            break
        ll = ll_new
    return FitResult(params=params, loglik_trace=trace, iterations=it, converged=converged,
                     wall_time=time.perf_counter() - t0, mode=config.mode,
                     rank_collapse=collapse, flags=list(ws.flags))


def _sparse_adapter(Jc, r0, rule, split):
    return sparse_joint_svd(Jc, r0, rule=rule, split=split)
