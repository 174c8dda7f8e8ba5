"""Dense linear-algebra primitives used by the tracker and the data generator.

All routines are pure functions on numpy arrays.  Bases are ``(n, r)`` arrays
with orthonormal columns; a zero ``(n, r)`` array stands for the "no estimate
yet" basis used before the first subspace update.
"""

import numpy as np
from scipy.linalg import eigvalsh_tridiagonal

from .exceptions import (
    DimensionMismatch,
    NoConvergence,
    NotSkewSymmetric,
    RankDeficient,
)

ORTHO_TOL = 1e-10
EPS = np.finfo(float).eps


def is_orthonormal(Q, tol=ORTHO_TOL):
    Q = np.asarray(Q, dtype=float)
    G = Q.T @ Q
    return bool(np.max(np.abs(G - np.eye(G.shape[0])), initial=0.0) <= tol)


def orthonormalize(M, tol=1e-12):
    """Orthonormal basis for the column span of `M`.

    Raises RankDeficient when the smallest singular value of `M` is not above
    ``tol`` times the largest.  Column signs are chosen so that an already
    orthonormal input with positive diagonal pivots is returned unchanged.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    if M.shape[1] > M.shape[0]:
        raise RankDeficient(f"{M.shape[1]} columns cannot be independent in R^{M.shape[0]}")
    Q, R = np.linalg.qr(M)
    s = np.linalg.svd(R, compute_uv=False)
    if s.size == 0 or s[0] == 0 or s[-1] <= tol * s[0]:
        raise RankDeficient("matrix does not have full column rank")
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs


def union_basis(P1, P2, tol=1e-10):
    """Orthonormal basis of span([P1, P2]).

    Directions of `P2` whose component orthogonal to `P1` has norm at most
    `tol` are dropped, so the result has between ``rank(P1)`` and
    ``rank(P1) + rank(P2)`` columns.
    """
    P1 = np.asarray(P1, dtype=float)
    P2 = np.asarray(P2, dtype=float)
    if P1.shape[0] != P2.shape[0]:
        raise DimensionMismatch("bases live in different ambient dimensions")
    resid = P2 - P1 @ (P1.T @ P2)
    # second pass keeps the residual orthogonal to P1 to working precision
    resid -= P1 @ (P1.T @ resid)
    U, s, _ = np.linalg.svd(resid, full_matrices=False)
    keep = s > tol
    return np.hstack([P1, U[:, keep]])


def r_svd(M, r, *, oversample=10, max_iter=300, tol=1e-12, seed=0):
    """Top-`r` left singular vectors and values of `M`.

    Block power (subspace) iteration with re-orthonormalisation and a
    Rayleigh-Ritz step on a block of ``r + oversample`` vectors (widened to
    the full rank when that is at most twice as large).  Iteration
    stops once successive Ritz bases differ by at most `tol` in
    :func:`sin_theta_max`.

    Returns
    -------
    U : ndarray, shape (rows, r)
    s : ndarray, shape (r,)
        Singular values in nonincreasing order.
    """
    M = np.asarray(M, dtype=float)
    m, n = M.shape
    if not 1 <= r <= min(m, n):
        raise ValueError(f"r={r} must lie in [1, min{M.shape}]")
    k = min(r + oversample, m, n)
    if 2 * k >= min(m, n):
        # a block this wide costs about as much as the full width, where
        # the Rayleigh-Ritz step is a plain thin SVD
        U, s, _ = np.linalg.svd(M, full_matrices=False)
        return U[:, :r], s[:r]
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(M @ rng.standard_normal((n, k)))
    U_prev = None
    for _ in range(max_iter):
        Q, _ = np.linalg.qr(M @ (M.T @ Q))
        Ub, s, _ = np.linalg.svd(Q.T @ M, full_matrices=False)
        U = Q @ Ub[:, :r]
        if U_prev is not None and sin_theta_max(U_prev, U) <= tol:
            return U, s[:r]
        U_prev = U
    raise NoConvergence(f"r_svd did not converge in {max_iter} iterations")


def cgls_solve(apply_A, apply_At, b, tol=1e-16, max_iter=20):
    """Conjugate-gradient least squares for ``min ||A x - b||``.

    `b` may be a vector or a 2-D array whose columns are independent right-hand
    sides; each column then gets its own step sizes and its own stopping test
    ``||A'(b - A x)|| <= tol * ||A' b||``.  `tol` is floored at machine
    epsilon.

    Returns
    -------
    x : ndarray
    iterations : int
        Iterations actually performed (the largest over columns).
    """
    b = np.asarray(b, dtype=float)
    vector = b.ndim == 1
    if vector:
        b = b[:, None]
    tol = max(float(tol), EPS)

    r = b.copy()
    s = apply_At(r)
    x = np.zeros_like(s)
    p = s.copy()
    gamma = np.einsum("ij,ij->j", s, s)
    stop = np.sqrt(gamma) * tol
    active = gamma > 0
    iterations = 0
    while iterations < max_iter and active.any():
        iterations += 1
        q = apply_A(p)
        qq = np.einsum("ij,ij->j", q, q)
        ok = active & (qq > 0)
        step = np.divide(gamma, qq, out=np.zeros_like(gamma), where=ok)
        x += step * p
        r -= step * q
        s = apply_At(r)
        gamma_new = np.einsum("ij,ij->j", s, s)
        beta = np.divide(gamma_new, gamma, out=np.zeros_like(gamma), where=ok)
        if ok.all():
            p *= beta
            p += s
            gamma = gamma_new
        else:
            p[:, ok] = s[:, ok] + beta[ok] * p[:, ok]
            gamma = np.where(ok, gamma_new, gamma)
        active = ok & (np.sqrt(gamma_new) > stop)
    return (x[:, 0] if vector else x), iterations


def sin_theta_max(P1, P2):
    """Sine of the largest principal angle, ``||(I - P1 P1') P2||_2``."""
    P1 = np.asarray(P1, dtype=float)
    P2 = np.asarray(P2, dtype=float)
    if P1.ndim == 1:
        P1 = P1[:, None]
    if P2.ndim == 1:
        P2 = P2[:, None]
    if P1.shape[0] != P2.shape[0]:
        raise DimensionMismatch(f"ambient dimensions differ: {P1.shape[0]} vs {P2.shape[0]}")
    resid = P2 - P1 @ (P1.T @ P2)
    val = np.linalg.norm(resid, 2) if resid.size else 0.0
    return float(min(max(val, 0.0), 1.0))


def mu_coherence(P):
    """Smallest mu for which `P` is mu-incoherent: (n/r) * max_i ||P_i||^2."""
    P = np.asarray(P, dtype=float)
    n, r = P.shape
    return float(n / r * np.max(np.einsum("ij,ij->i", P, P)))


def skew_expm(B, gamma=1.0, *, taylor_order=16):
    """Matrix exponential ``exp(gamma * B)`` of a skew-symmetric `B`.

    Scaling and squaring around a truncated Taylor core: ``gamma * B`` is scaled
    by ``2**-s`` so its 1-norm is at most 1/2, the series is summed by Horner's
    rule and the result squared `s` times.
    """
    B = np.asarray(B, dtype=float)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise NotSkewSymmetric("matrix must be square")
    if np.max(np.abs(B + B.T), initial=0.0) > 1e-12:
        raise NotSkewSymmetric("B + B' is not zero")
    n = B.shape[0]
    A = gamma * B
    norm1 = np.max(np.sum(np.abs(A), axis=0), initial=0.0)
    s = 0 if norm1 <= 0.5 else int(np.ceil(np.log2(norm1 / 0.5)))
    A = A / 2.0**s
    eye = np.eye(n)
    E = eye.copy()
    for k in range(taylor_order, 0, -1):
        E = eye + (A @ E) / k
    for _ in range(s):
        E = E @ E
    return E


def lambda_max_sym(M, *, tol=1e-12, max_iter=None):
    """Largest eigenvalue of a symmetric matrix.

    Lanczos with full reorthogonalisation; the Krylov space is grown until the
    top Ritz value settles to relative `tol` or the space is exhausted, in which
    case the answer is exact up to rounding.
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    if M.shape != (n, n):
        raise DimensionMismatch("matrix must be square")
    if np.max(np.abs(M - M.T), initial=0.0) > 1e-10 * max(1.0, np.max(np.abs(M), initial=0.0)):
        raise ValueError("matrix is not symmetric")
    if not np.any(M):
        return 0.0
    if max_iter is None:
        max_iter = n
    V = np.zeros((n, min(n, max_iter) + 1))
    v = np.ones(n) / np.sqrt(n)
    # deterministic start with some weight on every coordinate
    v = v + np.linspace(0.0, 1.0, n) / n
    v /= np.linalg.norm(v)
    V[:, 0] = v
    alphas, betas = [], []
    prev = None
    for k in range(min(n, max_iter)):
        w = M @ V[:, k]
        a = float(V[:, k] @ w)
        alphas.append(a)
        w -= V[:, : k + 1] @ (V[:, : k + 1].T @ w)
        w -= V[:, : k + 1] @ (V[:, : k + 1].T @ w)
        b = float(np.linalg.norm(w))
        theta = eigvalsh_tridiagonal(np.array(alphas), np.array(betas))[-1] if betas else a
        scale = max(abs(theta), np.finfo(float).tiny)
        exhausted = b <= 1e-13 * max(scale, 1.0)
        if exhausted or (prev is not None and abs(theta - prev) <= tol * scale and k >= 2):
            return float(theta)
        prev = theta
        if k + 1 < V.shape[1]:
            betas.append(b)
            V[:, k + 1] = w / b
    if len(alphas) == n:
        return float(prev)
    raise NoConvergence("Lanczos iteration cap reached")
