"""Out-of-sample use of a fitted model: tag annotation and query-by-example retrieval."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .expfam import Family, in_support
from .fitter import DEFAULT_RIDGE, glm_row_fit
from .model import GasParams


def _family_vector(family, p: int) -> np.ndarray:
    if isinstance(family, (str, int, np.integer, Family)):
        family = [family] * p
    out = np.array([int(Family.parse(f)) if isinstance(f, str) else int(f) for f in family], dtype=np.int8)
    if out.shape != (p,):
        raise ValueError("need one family per feature")
    return out


@dataclass
class Annotation:
    probabilities: np.ndarray
    u0: np.ndarray
    stalled: bool


def annotate(params: GasParams, x1_new, family1, ridge: Optional[float] = None,
             return_info: bool = False):
    """Block-2 probabilities for a new sample observed only in block 1.

    The sample's scores are the GLM fit of ``x1_new`` on ``(V1, A1)`` with
    offset ``mu1``; only the joint part ``u0`` carries over to block 2.
    """
    x = np.asarray(x1_new, dtype=float)
    p1 = params.mu1.size
    if x.shape != (p1,):
        raise ValueError(f"expected {p1} features")
    fam = _family_vector(family1, p1)
    if not np.all(np.isfinite(x)) or not in_support(fam, x).all():
        raise ValueError("feature vector outside the family support")
    if ridge is None:
        ridge = DEFAULT_RIDGE if np.any(fam == Family.BERNOULLI) else 0.0
    design = np.hstack([params.V1, params.A1])
    beta, stalled = glm_row_fit(x, fam, design, params.mu1, np.zeros(design.shape[1]), ridge,
                                mode="full", return_info=True)
    u0 = beta[: params.U0.shape[1]]
    prob = expit(params.mu2 + params.V2 @ u0)
    # keep strictly inside (0, 1) even when the natural parameter is extreme
    prob = np.clip(prob, np.finfo(float).tiny, 1.0 - np.finfo(float).epsneg)
    if return_info:
        return Annotation(prob, u0, stalled)
    return prob


def top_k_tags(probabilities, k: int, names: Optional[Sequence] = None) -> list:
    """The ``k`` labels with the largest probabilities; ties keep index order."""
    prob = np.asarray(probabilities, dtype=float)
    if not 0 <= k <= prob.size:
        raise ValueError("k out of range")
    order = np.argsort(-prob, kind="stable")[:k]
    names = list(range(1, prob.size + 1)) if names is None else list(names)
    return [names[i] for i in order]


@dataclass(frozen=True, eq=False)
class ScoreIndex:
    scores: np.ndarray
    precision: np.ndarray
    labels: tuple

    def __post_init__(self):
        S = np.atleast_2d(np.asarray(self.scores, dtype=float))
        P = np.atleast_2d(np.asarray(self.precision, dtype=float))
        if P.shape != (S.shape[1], S.shape[1]):
            raise ValueError("precision does not match the score dimension")
        if not np.allclose(P, P.T) or (P.size and np.linalg.eigvalsh(P).min() <= 0):
            raise ValueError("precision must be symmetric positive definite")
        labels = tuple(self.labels) if self.labels is not None else tuple(range(S.shape[0]))
        if len(labels) != S.shape[0]:
            raise ValueError("one label per indexed row")
        for name, v in (("scores", S), ("precision", P)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        object.__setattr__(self, "labels", labels)

    def distances(self, s) -> np.ndarray:
        D = self.scores - np.asarray(s, dtype=float)[None, :]
        return np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", D, self.precision, D), 0.0))


def build_score_index(params: GasParams, ridge: Optional[float] = None, labels=None) -> ScoreIndex:
    """Index the ``(U0, U2)`` score rows with a regularised inverse covariance."""
    S = np.hstack([params.U0, params.U2])
    n, q = S.shape
    if n <= q:
        raise ValueError("need more samples than score dimensions")
    C = np.atleast_2d(np.cov(S, rowvar=False)) if q else np.zeros((0, 0))
    if ridge is None:
        ridge = 1e-6 * np.trace(C) / max(q, 1)
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    C = C + ridge * np.eye(q)
    if q and np.linalg.eigvalsh(C).min() <= 1e-14 * max(np.trace(C), 1e-300):
        raise np.linalg.LinAlgError("score covariance is singular; use ridge > 0")
    P = np.linalg.inv(C) if q else C
    return ScoreIndex(S, 0.5 * (P + P.T), labels)


@dataclass
class Retrieval:
    order: np.ndarray
    distances: np.ndarray
    labels: list
    score: np.ndarray
    stalled: bool


def retrieve(params: GasParams, index: ScoreIndex, query, ridge: float = DEFAULT_RIDGE) -> Retrieval:
    """Rank indexed samples by Mahalanobis distance to the query's estimated scores."""
    q = np.asarray(query, dtype=float)
    if q.shape != params.mu2.shape:
        raise ValueError(f"expected {params.mu2.size} query entries")
    if not np.all((q == 0) | (q == 1)):
        raise ValueError("query entries must be 0 or 1")
    design = np.hstack([params.V2, params.A2])
    beta, stalled = glm_row_fit(q, Family.BERNOULLI, design, params.mu2, np.zeros(design.shape[1]),
                                ridge, mode="full", return_info=True)
    d = index.distances(beta)
    order = np.argsort(d, kind="stable")
    return Retrieval(order, d[order], [index.labels[i] for i in order], beta, stalled)
