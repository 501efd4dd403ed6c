"""Parameter containers, natural-parameter assembly, likelihood and normalization."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import expfam
from .expfam import Family
from .numkit import center_columns, factored_svd, project_complement


@dataclass(frozen=True, eq=False)
class DataBlock:
    """An ``n x p`` observation matrix with one family code per column."""

    X: np.ndarray
    family: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2:
            raise ValueError("data block must be a 2-d matrix")
        fam = self.family
        if isinstance(fam, (str, int, np.integer)):
            fam = np.full(X.shape[1], int(Family.parse(fam) if isinstance(fam, str) else fam))
        else:
            fam = np.array([int(Family.parse(f) if isinstance(f, str) else f) for f in fam])
        fam = fam.astype(np.int8)
        if fam.shape != (X.shape[1],):
            raise ValueError("need one family per column")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "family", fam)

    @classmethod
    def of(cls, X, family) -> "DataBlock":
        return cls(X, family)

    @property
    def shape(self) -> tuple[int, int]:
        return self.X.shape

    def validate(self) -> None:
        ok = expfam.in_support(self.family, self.X)
        if not ok.all():
            i, j = np.argwhere(~ok)[0]
            raise expfam.DomainError(
                f"entry ({i}, {j}) = {self.X[i, j]!r} outside the support of "
                f"{Family(self.family[j]).name.lower()}"
            )

    def has(self, fam: Family) -> bool:
        return bool(np.any(self.family == fam))


@dataclass(frozen=True)
class Ranks:
    r0: int
    r1: int
    r2: int

    def check(self, n: int, p1: int, p2: int) -> None:
        if min(self.r0, self.r1, self.r2) < 0:
            raise ValueError("ranks must be nonnegative")
        if self.r0 > min(n, p1, p2) or self.r1 > min(n, p1) or self.r2 > min(n, p2):
            raise ValueError(f"ranks {self} too large for n={n}, p1={p1}, p2={p2}")
        if self.r0 + self.r1 + self.r2 > n - 1:
            raise ValueError("r0 + r1 + r2 must not exceed n - 1")

    @classmethod
    def parse(cls, text: str) -> "Ranks":
        parts = [int(t) for t in str(text).replace(" ", "").split(",")]
        if len(parts) != 3:
            raise ValueError("ranks must be given as r0,r1,r2")
        return cls(*parts)

    def __iter__(self):
        return iter((self.r0, self.r1, self.r2))


@dataclass(frozen=True, eq=False)
class GasParams:
    mu1: np.ndarray
    mu2: np.ndarray
    U0: np.ndarray
    U1: np.ndarray
    U2: np.ndarray
    V1: np.ndarray
    V2: np.ndarray
    A1: np.ndarray
    A2: np.ndarray

    def __post_init__(self):
        for f in dataclasses.fields(self):
            a = np.array(getattr(self, f.name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, f.name, a)
        n = self.U0.shape[0]
        if self.U1.shape[0] != n or self.U2.shape[0] != n:
            raise ValueError("score matrices must share the row count")
        p1, p2 = self.mu1.shape[0], self.mu2.shape[0]
        if self.V1.shape != (p1, self.U0.shape[1]) or self.V2.shape != (p2, self.U0.shape[1]):
            raise ValueError("joint loadings do not match U0 / intercepts")
        if self.A1.shape != (p1, self.U1.shape[1]) or self.A2.shape != (p2, self.U2.shape[1]):
            raise ValueError("individual loadings do not match scores / intercepts")

    @property
    def n(self) -> int:
        return self.U0.shape[0]

    @property
    def ranks(self) -> Ranks:
        return Ranks(self.U0.shape[1], self.U1.shape[1], self.U2.shape[1])

    @property
    def V0(self) -> np.ndarray:
        return np.vstack([self.V1, self.V2])

    def replace(self, **kw) -> "GasParams":
        return dataclasses.replace(self, **kw)

    def as_dict(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    @classmethod
    def zeros(cls, n: int, p1: int, p2: int, ranks: Ranks) -> "GasParams":
        r0, r1, r2 = ranks
        return cls(
            mu1=np.zeros(p1), mu2=np.zeros(p2),
            U0=np.zeros((n, r0)), U1=np.zeros((n, r1)), U2=np.zeros((n, r2)),
            V1=np.zeros((p1, r0)), V2=np.zeros((p2, r0)),
            A1=np.zeros((p1, r1)), A2=np.zeros((p2, r2)),
        )

    def joint_structure(self, k: int) -> np.ndarray:
        return self.U0 @ (self.V1 if k == 1 else self.V2).T

    def individual_structure(self, k: int) -> np.ndarray:
        return self.U1 @ self.A1.T if k == 1 else self.U2 @ self.A2.T


@dataclass
class FitResult:
    params: GasParams
    loglik_trace: list[float]
    iterations: int
    converged: bool
    wall_time: float
    mode: str = "onestep"
    rank_collapse: bool = False
    flags: list[str] = field(default_factory=list)

    @property
    def loglik(self) -> float:
        return self.loglik_trace[-1]


def natural_parameters(params: GasParams, n: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    if n is not None and n != params.n:
        raise ValueError(f"parameters describe {params.n} rows, not {n}")
    T1 = params.mu1[None, :] + params.U0 @ params.V1.T + params.U1 @ params.A1.T
    T2 = params.mu2[None, :] + params.U0 @ params.V2.T + params.U2 @ params.A2.T
    return T1, T2


def block_loglik(d: DataBlock, Theta: np.ndarray, *, check: bool = True) -> float:
    return float(np.sum(expfam.log_density(d.family, d.X, Theta, check=check)))


def joint_log_likelihood(params: GasParams, d1: DataBlock, d2: DataBlock) -> float:
    if d1.shape[0] != d2.shape[0]:
        raise ValueError("data blocks are not row-aligned")
    T1, T2 = natural_parameters(params)
    if T1.shape != d1.shape or T2.shape != d2.shape:
        raise ValueError("parameter dimensions do not match the data")
    return block_loglik(d1, T1) + block_loglik(d2, T2)


@dataclass
class Normalized:
    params: GasParams
    rank_collapse: bool


def normalize(params: GasParams, *, joint_svd=None, collapse_rtol: float = 1e-10,
              return_info: bool = False):
    """Map a parameter set to the equivalent one satisfying the identifiability conditions.

    Individual scores are projected off ``(1, U0)`` and re-factorised by SVD;
    the displaced part is folded into the joint block, which is recentred
    (updating the intercepts) and re-factorised.  ``joint_svd`` optionally
    replaces the last factorisation; it receives the centred joint matrix and
    must return ``(U0, V0)``.
    """
    n = params.n
    r0, r1, r2 = params.ranks
    p1 = params.mu1.size
    ones = np.ones((n, 1))
    basis = np.hstack([ones, params.U0])

    U1s = project_complement(params.U1, basis)
    U2s = project_complement(params.U2, basis)
    U1n, A1n = factored_svd(U1s, params.A1, r1)
    U2n, A2n = factored_svd(U2s, params.A2, r2)

    # displaced individual structure: (U_k - U_k*) A_k^T lies in span(1, U0)
    D1 = params.U1 - U1s
    D2 = params.U2 - U2s
    p2 = params.mu2.size
    L = np.hstack([params.U0, D1, D2])
    R = np.vstack([
        np.hstack([params.V1, params.A1, np.zeros((p1, r2))]),
        np.hstack([params.V2, np.zeros((p2, r1)), params.A2]),
    ])
    Lc, lmean = center_columns(L)
    mu = np.concatenate([params.mu1, params.mu2]) + R @ lmean
    if joint_svd is None:
        U0n, V0n = factored_svd(Lc, R, r0)
    else:
        U0n, V0n = joint_svd(Lc @ R.T, r0)

    scales = [np.linalg.norm(M, axis=0) for M in (U0n, U1n, U2n)]
    top = max([s.max() for s in scales if s.size] + [0.0])
    collapse = any(np.any(s <= collapse_rtol * max(top, 1e-300)) for s in scales if s.size)

    out = GasParams(
        mu1=mu[:p1], mu2=mu[p1:], U0=U0n, U1=U1n, U2=U2n,
        V1=V0n[:p1], V2=V0n[p1:], A1=A1n, A2=A2n,
    )
    if return_info:
        return Normalized(out, collapse)
    return out


@dataclass
class IdentifiabilityReport:
    violations: dict[str, float]
    tol: float

    @property
    def passed(self) -> dict[str, bool]:
        return {k: v <= self.tol for k, v in self.violations.items()}

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    def __str__(self) -> str:
        lines = [f"{'condition':<28}{'violation':>14}  status"]
        for k, v in self.violations.items():
            lines.append(f"{k:<28}{v:>14.3e}  {'ok' if v <= self.tol else 'FAIL'}")
        return "\n".join(lines)


def _cosines(A: np.ndarray, B: np.ndarray) -> float:
    if A.shape[1] == 0 or B.shape[1] == 0:
        return 0.0
    na = np.linalg.norm(A, axis=0)
    nb = np.linalg.norm(B, axis=0)
    na[na == 0] = np.inf
    nb[nb == 0] = np.inf
    return float(np.max(np.abs(A.T @ B) / np.outer(na, nb)))


def _offdiag(U: np.ndarray) -> float:
    if U.shape[1] < 2:
        return 0.0
    n = np.linalg.norm(U, axis=0)
    n[n == 0] = np.inf
    C = np.abs(U.T @ U) / np.outer(n, n)
    np.fill_diagonal(C, 0.0)
    return float(C.max())


def _increasing(U: np.ndarray) -> float:
    d = np.einsum("ij,ij->j", U, U)
    if d.size < 2:
        return 0.0
    return float(max(0.0, np.max(np.diff(d)) / max(d[0], 1e-300)))


def _orthonormal(*blocks: np.ndarray) -> float:
    G = sum(B.T @ B for B in blocks)
    if np.ndim(G) == 0 or G.shape[0] == 0:
        return 0.0
    return float(np.max(np.abs(G - np.eye(G.shape[0]))))


def identifiability_report(params: GasParams, tol: float = 1e-8) -> IdentifiabilityReport:
    """Per-condition violation magnitudes.

    Centering is reported as ``max |1^T u| / sqrt(n)``; orthogonality as the
    largest absolute cosine between columns; ordering as the largest relative
    increase of consecutive squared column norms; orthonormality as the max
    entrywise deviation from the identity.
    """
    n = params.n
    root = np.sqrt(n)
    v = {}
    for name in ("U0", "U1", "U2"):
        U = getattr(params, name)
        v[f"centered_{name}"] = float(np.max(np.abs(U.sum(axis=0))) / root) if U.shape[1] else 0.0
    v["orthogonal_U0_U1"] = _cosines(params.U0, params.U1)
    v["orthogonal_U0_U2"] = _cosines(params.U0, params.U2)
    for name in ("U0", "U1", "U2"):
        U = getattr(params, name)
        v[f"diagonal_{name}"] = _offdiag(U)
        v[f"ordered_{name}"] = _increasing(U)
    v["orthonormal_V"] = _orthonormal(params.V1, params.V2)
    v["orthonormal_A1"] = _orthonormal(params.A1)
    v["orthonormal_A2"] = _orthonormal(params.A2)
    return IdentifiabilityReport(v, tol)


def stack_blocks(d1: DataBlock, d2: DataBlock) -> DataBlock:
    return DataBlock(np.hstack([d1.X, d2.X]), np.concatenate([d1.family, d2.family]))


def families_of(blocks: Sequence[DataBlock]) -> np.ndarray:
    return np.concatenate([b.family for b in blocks])
