"""Association coefficient between two column-centred parameter matrices and its permutation test."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .numkit import center_columns

DEFAULT_PERMUTATIONS = 1000


def _centered(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValueError("expected a 2-d matrix")
    return center_columns(M)[0]


def _compact(M: np.ndarray, rtol: float = 1e-12) -> tuple[np.ndarray, float]:
    # M = U S W^T; only U S matters for nuclear norms of M^T P N
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    fro = float(np.sqrt(np.sum(s * s)))
    if fro == 0.0:
        raise ValueError("association is undefined for a zero matrix")
    keep = s > rtol * s[0]
    return U[:, keep] * s[keep], fro


def association_coefficient(Theta1c, Theta2c) -> float:
    """``||T1^T T2||_* / (||T1||_F ||T2||_F)`` after re-centring the columns."""
    T1, T2 = _centered(Theta1c), _centered(Theta2c)
    if T1.shape[0] != T2.shape[0]:
        raise ValueError("matrices must share the row count")
    L1, f1 = _compact(T1)
    L2, f2 = _compact(T2)
    nuc = np.linalg.svd(L1.T @ L2, compute_uv=False).sum()
    return float(min(1.0, nuc / (f1 * f2)))


@dataclass
class PermTestResult:
    rho0: float
    null_samples: np.ndarray
    p_value: float
    seed: int
    p_value_raw: float = field(default=float("nan"))

    @property
    def B(self) -> int:
        return int(self.null_samples.size)

    def report(self) -> str:
        return (
            f"rho0 = {self.rho0:.6f}\n"
            f"permutations B = {self.B}\n"
            f"p-value (1 + #exceed) / (B + 1) = {self.p_value:.6g}\n"
            f"p-value #exceed / B = {self.p_value_raw:.6g}\n"
        )


def permutation_stream(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(index)])


def _null_chunk(L1, L2, denom, seed, indices):
    n = L2.shape[0]
    out = np.empty(len(indices))
    for j, b in enumerate(indices):
        perm = permutation_stream(seed, b).permutation(n)
        out[j] = np.linalg.svd(L1.T @ L2[perm], compute_uv=False).sum() / denom
    return out


def permutation_test(Theta1c, Theta2c, B: int = DEFAULT_PERMUTATIONS, seed: int = 0,
                     threads: Optional[int] = None) -> PermTestResult:
    """Row-permutation test of ``rho = 0``.

    Permutation ``b`` draws its row order from its own generator seeded by
    ``(seed, b)``, so the null samples do not depend on evaluation order or on
    ``threads``.
    """
    if B < 1:
        raise ValueError("need at least one permutation")
    T1, T2 = _centered(Theta1c), _centered(Theta2c)
    if T1.shape[0] != T2.shape[0]:
        raise ValueError("matrices must share the row count")
    L1, f1 = _compact(T1)
    L2, f2 = _compact(T2)
    denom = f1 * f2
    rho0 = float(min(1.0, np.linalg.svd(L1.T @ L2, compute_uv=False).sum() / denom))
    idx = np.arange(B)
    threads = threads or 1
    if threads > 1:
        chunks = np.array_split(idx, threads)
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda c: _null_chunk(L1, L2, denom, seed, c), chunks))
        null = np.concatenate(parts)
    else:
        null = _null_chunk(L1, L2, denom, seed, idx)
    null = np.minimum(null, 1.0)
    # a null sample equal to rho0 up to rounding counts as exceeding it
    exceed = int(np.sum(null >= rho0 - 1e-12 * max(rho0, 1.0)))
    return PermTestResult(rho0=rho0, null_samples=null, p_value=(1 + exceed) / (B + 1),
                          seed=int(seed), p_value_raw=exceed / B)
