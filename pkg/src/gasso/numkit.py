"""Dense linear-algebra helpers used throughout the fitter."""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla

PIVOT_RTOL = 1e-12


def _sign_fix(U: np.ndarray, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # largest-|entry| of each loading column is made positive
    if V.shape[1] == 0:
        return U, V
    idx = np.argmax(np.abs(V), axis=0)
    s = np.sign(V[idx, np.arange(V.shape[1])])
    s[s == 0] = 1.0
    return U * s, V * s


def thin_svd(M: np.ndarray, r: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rank-``r`` truncated SVD ``M ~ U diag(d) V^T`` with a deterministic sign.

    Singular values are nonincreasing; within each pair the loading column
    ``V[:, k]`` has its largest-magnitude entry positive.
    """
    M = np.asarray(M, dtype=float)
    n, p = M.shape
    if not 0 <= r <= min(n, p):
        raise ValueError(f"rank {r} out of range for a {n}x{p} matrix")
    if r == 0:
        return np.zeros((n, 0)), np.zeros(0), np.zeros((p, 0))
    U, d, Vt = np.linalg.svd(M, full_matrices=False)
    U, V = _sign_fix(U[:, :r], Vt[:r].T)
    return U, d[:r].copy(), V


def factored_svd(L: np.ndarray, R: np.ndarray, r: int) -> tuple[np.ndarray, np.ndarray]:
    """Rank-``r`` SVD of ``L @ R.T`` without forming the product.

    Returns ``(scores, V)`` where ``V`` has orthonormal columns and
    ``scores = L @ (R.T @ V)`` absorbs the singular values.  Computing the
    scores as an explicit combination of the columns of ``L`` keeps them in
    ``col(L)`` exactly, which matters for centering and orthogonality.
    """
    n, k = L.shape
    p = R.shape[0]
    if r == 0:
        return np.zeros((n, 0)), np.zeros((p, 0))
    if k == 0:
        # product is zero; any orthonormal loading basis will do
        V = np.eye(p, r)
        return np.zeros((n, r)), V
    Ql, Rl = np.linalg.qr(L)
    Qr, Rr = np.linalg.qr(R)
    _, _, Wt = np.linalg.svd(Rl @ Rr.T, full_matrices=False)
    W = Wt.T
    if W.shape[1] < r:
        # more components requested than the factor width: pad with the
        # orthogonal complement inside range(Qr) or beyond
        V = _complete_basis(Qr @ W, r)
    else:
        V = Qr @ W[:, :r]
    scores = L @ (R.T @ V)
    # re-sort by score norm; the truncated SVD already orders them but rounding
    # can swap near-ties
    order = np.argsort(-np.einsum("ij,ij->j", scores, scores), kind="stable")
    scores, V = scores[:, order], V[:, order]
    return _sign_fix(scores, V)


def _complete_basis(Q: np.ndarray, r: int) -> np.ndarray:
    p, k = Q.shape
    if k >= r:
        return Q[:, :r]
    full, _ = np.linalg.qr(np.hstack([Q, np.eye(p)]))
    extra = full[:, k:r]
    return np.hstack([Q, extra])


def nuclear_norm(M: np.ndarray) -> float:
    return float(np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False).sum())


def orth(A: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis of ``col(A)``; raises if ``A`` is rank deficient."""
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    U, s, _ = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[-1] <= rtol * max(s[0], np.finfo(float).tiny):
        raise np.linalg.LinAlgError("matrix does not have full column rank")
    return U


def principal_angle(A: np.ndarray, B: np.ndarray) -> float:
    """Largest principal angle (degrees) between ``col(A)`` and ``col(B)``.

    With subspaces of different dimension the angle is taken over the
    ``min(dim A, dim B)`` canonical pairs.
    """
    Qa, Qb = orth(A), orth(B)
    if Qa.shape[0] != Qb.shape[0]:
        raise ValueError("subspaces live in different ambient dimensions")
    s = np.linalg.svd(Qa.T @ Qb, compute_uv=False)
    c = np.clip(s.min(), 0.0, 1.0)
    # arccos is ill-conditioned near 1; use the sine of the complement instead
    k = min(Qa.shape[1], Qb.shape[1])
    if Qa.shape[1] <= Qb.shape[1]:
        resid = Qa - Qb @ (Qb.T @ Qa)
    else:
        resid = Qb - Qa @ (Qa.T @ Qb)
    sin = np.linalg.svd(resid, compute_uv=False)
    sin_max = np.clip(sin.max(), 0.0, 1.0) if sin.size and k else 0.0
    return float(np.degrees(np.arctan2(sin_max, c)))


def weighted_ridge_ls(X: np.ndarray, y: np.ndarray, w: np.ndarray, lam: float = 0.0) -> np.ndarray:
    """argmin_b ||W^1/2 (y - X b)||^2 + n * lam * ||b||^2."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    if lam < 0 or np.any(w < 0):
        raise ValueError("weights and ridge parameter must be nonnegative")
    if not np.any(w > 0):
        raise ValueError("all weights are zero")
    n, p = X.shape
    G = X.T @ (w[:, None] * X) + n * lam * np.eye(p)
    b = X.T @ (w * y)
    return solve_spd(G, b)


def solve_spd(G: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cholesky solve with a pseudoinverse fallback for near-singular systems."""
    diag = np.diag(G)
    big = diag.max() if diag.size else 0.0
    try:
        c, low = sla.cho_factor(G, lower=True, check_finite=False)
        piv = np.diag(c) ** 2
        if piv.min() >= PIVOT_RTOL * max(big, np.finfo(float).tiny):
            return sla.cho_solve((c, low), b, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    return np.linalg.pinv(G, hermitian=True) @ b


def batched_solve_spd(G: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``G[k] x[k] = b[k]`` for a stack of symmetric PSD systems.

    Systems whose smallest Cholesky pivot is tiny relative to the largest
    diagonal entry are solved by pseudoinverse (minimum-norm solution).
    """
    m, q, _ = G.shape
    if q == 0:
        return np.zeros((m, 0))
    out = np.empty((m, q))
    scale = np.max(np.abs(np.diagonal(G, axis1=1, axis2=2)), axis=1)
    bad = np.zeros(m, dtype=bool)
    try:
        L = np.linalg.cholesky(G)
        piv = np.diagonal(L, axis1=1, axis2=2) ** 2
        bad = piv.min(axis=1) < PIVOT_RTOL * np.maximum(scale, np.finfo(float).tiny)
        bad |= ~np.all(np.isfinite(L), axis=(1, 2))
    except np.linalg.LinAlgError:
        L = None
        bad[:] = True
    good = ~bad
    if good.any():
        Lg = L[good]
        z = np.linalg.solve(Lg, b[good][..., None])
        out[good] = np.linalg.solve(np.swapaxes(Lg, 1, 2), z)[..., 0]
    for k in np.flatnonzero(bad):
        out[k] = np.linalg.pinv(G[k], hermitian=True) @ b[k]
    return out


def center_columns(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    M = np.asarray(M, dtype=float)
    means = M.mean(axis=0)
    return M - means, means


def project_complement(M: np.ndarray, basis: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    """``(I - Q Q^T) M`` with ``Q`` an orthonormal basis of ``col(basis)``."""
    M = np.asarray(M, dtype=float)
    basis = np.asarray(basis, dtype=float)
    if basis.ndim == 1:
        basis = basis[:, None]
    if basis.shape[1] == 0 or M.shape[1] == 0:
        return M.copy()
    U, s, _ = np.linalg.svd(basis, full_matrices=False)
    keep = s > rtol * max(s[0], np.finfo(float).tiny) if s.size else s > 0
    Q = U[:, keep]
    out = M - Q @ (Q.T @ M)
    # one re-orthogonalisation pass keeps the residual orthogonal to ~1e-16
    return out - Q @ (Q.T @ out)
