"""Per-frame fill-in of missing coordinates given a basis estimate.

Everything here works on a block of frames at once: ``Y`` is ``(n, m)`` with
zeros on missing entries and ``mask`` is the matching boolean missing mask.
A single frame can be passed as a vector with an index set.
"""

import numpy as np

from .exceptions import IllConditioned
from .linalg import cgls_solve

COND_LIMIT = 1e8


def _as_block(y, T):
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        mask = np.zeros(y.shape[0], dtype=bool)
        mask[np.asarray(T, dtype=int)] = True
        return y[:, None], mask[:, None], True
    return y, np.asarray(T, dtype=bool), False


def restricted_gram(P, mask):
    """Stack of ``P_T' P_T`` (shape ``(m, r, r)``) for each column of `mask`."""
    mask = np.asarray(mask, dtype=bool)
    r = P.shape[1]
    G = np.empty((mask.shape[1], r, r))
    for i in range(mask.shape[1]):
        A = P[mask[:, i]]
        np.matmul(A.T, A, out=G[i])
    return G


def psi_condition(P, mask, gram=None):
    """Condition number of ``Psi_T = (I - P P')[:, T]`` for each column of `mask`.

    Uses ``Psi_T' Psi_T = I - P_T' P_T`` restricted to ``T``, whose smallest
    eigenvalue is ``1 - lambda_max(P_T' P_T)`` and largest ``1 - lambda_min``.
    A precomputed
    :func:`restricted_gram` stack for all columns may be passed as `gram`.
    """
    n, r = P.shape
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim == 1:
        mask = mask[:, None]
    out = np.ones(mask.shape[1])
    nz = mask.sum(axis=0)
    cols = np.flatnonzero(nz > 0)
    if cols.size == 0 or not np.any(P):
        return out
    full = cols[nz[cols] >= n]
    out[full] = np.inf
    cols = cols[nz[cols] < n]
    if cols.size:
        G = restricted_gram(P, mask[:, cols]) if gram is None else gram[cols]
        lam = np.linalg.eigvalsh(G)
        lo = np.clip(1.0 - lam[:, -1], 0.0, None)
        hi = 1.0 - lam[:, 0]
        # 1 - lambda_max cancels badly near zero; redo those columns from the
        # observed rows, whose Gram is I - P_T' P_T without the subtraction
        for i in np.flatnonzero(lo < 1e-6):
            A = P[~mask[:, cols[i]]]
            w = np.linalg.eigvalsh(A.T @ A) if A.shape[0] >= r else np.zeros(1)
            lo[i], hi[i] = max(w[0], 0.0), max(w[-1], 0.0)
        with np.errstate(divide="ignore"):
            out[cols] = np.where(lo > 0, np.sqrt(hi / np.where(lo > 0, lo, 1.0)), np.inf)
    return out


def project_ls_fill(y, T, P, *, tol=1e-16, max_iter=20, cond_limit=COND_LIMIT,
                    raise_on_fail=True, solver="cgls"):
    """Fill missing coordinates by projected least squares.

    With ``Psi = I - P P'`` and ``y~ = Psi y`` the missing part is
    ``z = argmin ||Psi_T z - y~||`` and the estimate is ``y - I_T z``.  The
    system is solved by CGLS applying ``Psi`` through two thin products, or
    with ``solver="direct"`` through the identity
    ``(Psi_T' Psi_T)^-1 = I + P_T (I - P_T' P_T)^-1 P_T'``.

    Parameters
    ----------
    y : ndarray (n,) or (n, m)
        Observed frame(s), zero on missing coordinates.
    T : index array, or boolean mask (n, m) when `y` is 2-D
        Missing coordinates.
    P : ndarray (n, r)
        Orthonormal basis or the zero matrix.
    solver : {"cgls", "direct"}
    raise_on_fail : bool
        If False, ill-conditioned columns are returned unfilled and flagged
        instead of raising.

    Returns
    -------
    ell_hat : ndarray, same shape as `y`
    z_hat : ndarray
        Values on ``T`` (vector for a single frame, masked block otherwise).
    failed : ndarray of bool, only when ``raise_on_fail`` is False
    """
    Y, mask, single = _as_block(y, T)
    P = np.asarray(P, dtype=float)
    Y = np.where(mask, 0.0, Y)
    failed = np.zeros(Y.shape[1], dtype=bool)
    Z = np.zeros_like(Y)

    if solver not in ("cgls", "direct"):
        raise ValueError(f"unknown solver {solver!r}")
    if np.any(P) and mask.any():
        gram = restricted_gram(P, mask)
        cond = psi_condition(P, mask, gram)
        failed = cond > cond_limit
        if failed.any() and raise_on_fail:
            bad = int(np.flatnonzero(failed)[0])
            raise IllConditioned(f"column {bad}: cond(Psi_T) = {cond[bad]:.3g} exceeds {cond_limit:g}")
        work = np.flatnonzero(~failed & mask.any(axis=0))
        if work.size:
            M = mask[:, work].astype(float)
            Yw = Y[:, work]

            def psi(V):
                return V - P @ (P.T @ V)

            if solver == "direct":
                W = psi(Yw) * M
                H = np.eye(P.shape[1])[None] - gram[work]
                u = np.linalg.solve(H, (P.T @ W).T[:, :, None])[:, :, 0]
                Z[:, work] = W + (P @ u.T) * M
            else:
                def At(V):
                    # CGLS only applies the adjoint to residuals b - A x, which
                    # lie in range(Psi) where Psi acts as the identity
                    return V * M

                Zw, _ = cgls_solve(psi, At, psi(Yw), tol=tol, max_iter=max_iter)
                Z[:, work] = Zw * M
    ell = Y - Z
    if single:
        out = (ell[:, 0], Z[mask[:, 0], 0])
    else:
        out = (ell, Z)
    if raise_on_fail:
        return out
    return out + (failed[0] if single else failed,)


def sample_efficient_fill(y, Omega, P, *, cond_limit=COND_LIMIT, tol=1e-16, max_iter=20):
    """Fit coefficients on observed rows and return ``P a``.

    For a single frame `Omega` is the observed index set; for a block pass the
    boolean *missing* mask (its complement is used).  Columns whose restricted
    basis has condition number above `cond_limit` fall back to projected LS,
    which has the same condition number, so those columns are returned as
    given (zeros on the missing rows).

    Returns
    -------
    ell_hat : ndarray
    fallback : bool or ndarray of bool
        True where projected LS was used instead.
    """
    y = np.asarray(y, dtype=float)
    P = np.asarray(P, dtype=float)
    n, r = P.shape
    if y.ndim == 1:
        obs = np.zeros(n, dtype=bool)
        obs[np.asarray(Omega, dtype=int)] = True
        ell, fb = sample_efficient_fill(y[:, None], ~obs[:, None], P,
                                        cond_limit=cond_limit, tol=tol, max_iter=max_iter)
        return ell[:, 0], bool(fb[0])

    mask = np.asarray(Omega, dtype=bool)
    m = y.shape[1]
    ell = np.empty_like(y)
    fallback = np.zeros(m, dtype=bool)
    # P orthonormal, so the observed-row Gram is I - P_T' P_T
    H = np.eye(r)[None] - restricted_gram(P, mask)
    w, V = np.linalg.eigh(H)
    w = np.clip(w, 0.0, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.sqrt(w[:, -1] / w[:, 0])
    cond[~np.isfinite(cond)] = np.inf
    rhs = P.T @ np.where(mask, 0.0, y)
    # normal equations lose accuracy as cond**2; hand harder columns to an SVD
    easy = cond <= 1e4
    if easy.any():
        Vc = V[easy]
        proj = np.einsum("mji,jm->mi", Vc, rhs[:, easy]) / w[easy]
        a = np.einsum("mij,mj->im", Vc, proj)
        ell[:, easy] = P @ a
    for i in np.flatnonzero(~easy):
        obs = ~mask[:, i]
        A = P[obs]
        if A.shape[0] < r or cond[i] > cond_limit:
            fallback[i] = True
            continue
        U, sv, Vt = np.linalg.svd(A, full_matrices=False)
        if sv[-1] == 0 or sv[0] / sv[-1] > cond_limit:
            fallback[i] = True
            continue
        ell[:, i] = P @ (Vt.T @ ((U.T @ y[obs, i]) / sv))
    if fallback.any():
        cols = np.flatnonzero(fallback)
        # equally ill-posed columns come back unfilled
        fill, _, _ = project_ls_fill(y[:, cols], mask[:, cols], P, tol=tol, max_iter=max_iter,
                                     cond_limit=cond_limit, raise_on_fail=False)
        ell[:, cols] = fill
    return ell, fallback
