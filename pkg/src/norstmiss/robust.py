"""Tracking with missing entries and sparse outliers.

Each frame is projected away from the current basis, the outliers are located
by an l1 fit that leaves the known-missing coordinates unpenalised, and the
projected least-squares fill then treats missing and detected outlier
coordinates alike.  The first basis comes from an alternating-projections
robust PCA on an initial training batch.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigInvalid, NoConvergence
from .tracker import NorstMiss, RunResult


@dataclass
class RobustParams:
    """Outlier-handling parameters.

    ``xi`` and ``omega_supp`` default to ``x_min/15`` and ``x_min/2``.  With
    ``omega_supp="auto"`` the support threshold is set per frame to
    ``0.9 * ||y_t|| / sqrt(n)``.
    """

    x_min: float = 10.0
    xi: float = None
    omega_supp: object = None
    t_train: int = 400
    fill_value: float = 10.0
    altproj_max_iter: int = 500
    altproj_tol: float = 1e-3
    altproj_decay: float = 0.7
    altproj_mu: float = 1.0
    cs_max_iter: int = 2000
    cs_tol: float = 1e-8

    def __post_init__(self):
        if self.xi is None:
            self.xi = self.x_min / 15
        if self.omega_supp is None:
            self.omega_supp = self.x_min / 2
        errs = {}
        if not self.x_min > 0:
            errs["x_min"] = "must be positive"
        if not self.xi > 0:
            errs["xi"] = "must be positive"
        if self.omega_supp != "auto" and not float(self.omega_supp) > 0:
            errs["omega_supp"] = "must be positive or 'auto'"
        if self.t_train < 0:
            errs["t_train"] = "must be nonnegative"
        if errs:
            raise ConfigInvalid(errs)

    def support_threshold(self):
        """Fixed support threshold; ``x_min/2`` when the per-frame rule is on."""
        if self.omega_supp == "auto":
            return self.x_min / 2
        return float(self.omega_supp)


def _psi(P, V):
    return V - P @ (P.T @ V)


def _ls_on_support(B, mask, P):
    """Columnwise ``argmin ||B - Psi x||`` over x supported on `mask`.

    `B` must lie in range(Psi).  Uses ``(Psi_T' Psi_T)^-1 = I + P_T (I - P_T'P_T)^-1 P_T'``
    with a pseudo-inverse for the r x r core.
    """
    Mf = mask.astype(float)
    W = B * Mf
    r = P.shape[1]
    G = np.empty((B.shape[1], r, r))
    for i in range(B.shape[1]):
        A = P[mask[:, i]]
        G[i] = A.T @ A
    H = np.linalg.pinv(np.eye(r)[None] - G, hermitian=True)
    u = np.einsum("mij,jm->im", H, P.T @ W)
    return W + (P @ u) * Mf


def _fista(Yt, P, pen, lam, X0, max_iter, tol):
    """Weighted lasso ``min 0.5||Yt - Psi x||^2 + lam * ||x_pen||_1`` per column.

    Step size 1 is exact since ``Psi' Psi = Psi`` has norm 1.  Momentum is
    restarted whenever it points uphill.
    """
    X = X0.copy()
    V = X.copy()
    tk = np.ones(X.shape[1])
    active = np.ones(X.shape[1], dtype=bool)
    it = 0
    for it in range(1, max_iter + 1):
        cols = np.flatnonzero(active)
        if cols.size == 0:
            break
        Vc = V[:, cols]
        U = Vc - (_psi(P, Vc) - Yt[:, cols])
        thr = lam[cols] * pen[:, cols]
        Xn = np.sign(U) * np.maximum(np.abs(U) - thr, 0.0)
        dX = Xn - X[:, cols]
        restart = np.einsum("ij,ij->j", Vc - Xn, dX) > 0
        tn = np.where(restart, 1.0, 0.5 * (1 + np.sqrt(1 + 4 * tk[cols] ** 2)))
        mom = np.where(restart, 0.0, (tk[cols] - 1) / tn)
        V[:, cols] = Xn + mom * dX
        X[:, cols] = Xn
        tk[cols] = tn
        change = np.linalg.norm(dX, axis=0)
        scale = np.maximum(np.linalg.norm(Xn, axis=0), 1.0)
        active[cols] = change > tol * scale
    return X, it


def modified_cs(y_tilde, P, T_known, xi, *, max_iter=2000, tol=1e-8, max_search=60):
    """Sparse vector with the smallest l1 norm off `T_known` whose projection
    matches `y_tilde` to within `xi`.

    Solves ``min ||x_{T^c}||_1  s.t.  ||y_tilde - Psi x|| <= xi`` with
    ``Psi = I - P P'``.  If a vector supported on `T_known` alone is feasible
    it is returned (its l1 cost is zero).  Otherwise the equivalent weighted
    lasso is solved by proximal gradient while the penalty is tuned (regula
    falsi in log space) until the residual sits within ``1e-3 * xi`` of the
    bound.

    Parameters
    ----------
    y_tilde : ndarray (n,) or (n, m)
        Projected observations, in range(Psi).
    P : ndarray (n, r)
    T_known : index array, or boolean mask (n, m) for a block
    xi : float

    Returns
    -------
    x : ndarray, shape of `y_tilde`
    """
    Yt = np.asarray(y_tilde, dtype=float)
    single = Yt.ndim == 1
    if single:
        Yt = Yt[:, None]
        mask = np.zeros(Yt.shape, dtype=bool)
        mask[np.asarray(T_known, dtype=int), 0] = True
    else:
        mask = np.asarray(T_known, dtype=bool)
    P = np.asarray(P, dtype=float)
    n, m = Yt.shape
    if not xi > 0:
        raise ValueError("xi must be positive")

    X = _ls_on_support(Yt, mask, P) if mask.any() else np.zeros_like(Yt)
    res = np.linalg.norm(Yt - _psi(P, X), axis=0)
    todo = np.flatnonzero(res > xi)
    if todo.size == 0:
        return X[:, 0] if single else X

    Yw, Mw, X0 = Yt[:, todo], mask[:, todo], X[:, todo]
    pen = (~Mw).astype(float)
    R0 = Yw - _psi(P, X0)
    lam_hi = np.max(np.abs(R0) * pen, axis=0)
    # at lam_hi the support-only fit is already optimal and infeasible
    f_hi = res[todo] - xi
    lo = np.log(lam_hi * 1e-4)
    hi = np.log(lam_hi)
    Xlo, _ = _fista(Yw, P, pen, np.exp(lo), X0, max_iter, tol)
    f_lo = np.linalg.norm(Yw - _psi(P, Xlo), axis=0) - xi
    for _ in range(20):
        bad = f_lo > 0
        if not bad.any():
            break
        lo[bad] -= np.log(100.0)
        Xn, _ = _fista(Yw[:, bad], P, pen[:, bad], np.exp(lo[bad]), Xlo[:, bad], max_iter, tol)
        Xlo[:, bad] = Xn
        f_lo[bad] = np.linalg.norm(Yw[:, bad] - _psi(P, Xn), axis=0) - xi
    best = Xlo.copy()
    best_f = f_lo.copy()
    Xcur = Xlo.copy()
    side = np.zeros(todo.size)
    active = np.abs(f_lo) > 1e-3 * xi
    for _ in range(max_search):
        cols = np.flatnonzero(active)
        if cols.size == 0:
            break
        # Illinois regula falsi on f(log lam) = residual - xi
        mid = (lo[cols] * f_hi[cols] - hi[cols] * f_lo[cols]) / (f_hi[cols] - f_lo[cols])
        mid = np.where(np.isfinite(mid), mid, 0.5 * (lo[cols] + hi[cols]))
        Xn, _ = _fista(Yw[:, cols], P, pen[:, cols], np.exp(mid), Xcur[:, cols], max_iter, tol)
        Xcur[:, cols] = Xn
        f = np.linalg.norm(Yw[:, cols] - _psi(P, Xn), axis=0) - xi
        up = f <= 0
        c_up, c_dn = cols[up], cols[~up]
        lo[c_up], f_lo[c_up] = mid[up], f[up]
        hi[c_dn], f_hi[c_dn] = mid[~up], f[~up]
        # halve the stale endpoint's value when the same side moves twice
        f_hi[c_up[side[c_up] > 0]] *= 0.5
        f_lo[c_dn[side[c_dn] < 0]] *= 0.5
        side[c_up], side[c_dn] = 1, -1
        better = up & (f > best_f[cols])
        best[:, cols[better]] = Xn[:, better]
        best_f[cols[better]] = f[better]
        active[cols] = np.abs(f) > 1e-3 * xi
    if active.any():
        warnings.warn(f"modified_cs: {int(active.sum())} column(s) stopped short of the "
                      "residual bound; returning the best feasible iterate", RuntimeWarning,
                      stacklevel=2)
    X[:, todo] = best
    return X[:, 0] if single else X


def support_estimate(x_cs, T_known, omega_supp):
    """Known-missing set plus coordinates where ``|x_cs| > omega_supp``.

    For a vector returns a sorted index array; for a block (with a boolean
    mask as `T_known` and scalar or per-column threshold) a boolean mask.
    """
    x = np.asarray(x_cs, dtype=float)
    if x.ndim == 1:
        big = np.abs(x) > omega_supp
        big[np.asarray(T_known, dtype=int)] = True
        return np.flatnonzero(big)
    return np.asarray(T_known, dtype=bool) | (np.abs(x) > np.asarray(omega_supp))


def _rank_r(A, r):
    """Best rank-`r` approximation of `A` and its left singular vectors."""
    if A.shape[1] <= A.shape[0]:
        # eigenvectors of the small Gram give the right singular vectors
        w, V = np.linalg.eigh(A.T @ A)
        w, V = w[::-1][:r], V[:, ::-1][:, :r]
        if w[-1] > 1e-12 * w[0]:
            B = A @ V
            return B @ V.T, B / np.sqrt(w)
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    return (U[:, :r] * s[:r]) @ Vt[:r], U[:, :r]


def altproj_init(Y_train, r, *, floor, max_iter=500, tol=1e-3, decay=0.7, mu=1.0):
    """Robust PCA basis for a training batch by alternating projections.

    Alternates hard thresholding of ``Y - L`` at ``zeta_k`` with a rank-`r`
    projection of ``Y - S``.  The threshold decays geometrically,
    ``zeta_k = max(zeta_0 * decay**k, floor)``, from
    ``zeta_0 = beta * sigma_1(Y - H_floor(Y))`` with
    ``beta = mu * r / sqrt(n * t_train)``.  Taking the top singular value after
    removing entries above `floor` keeps large outliers from setting the scale.
    Stops once the threshold has reached `floor` and the low-rank part moves by
    at most `tol` (relative Frobenius).

    Parameters
    ----------
    Y_train : ndarray (n, t_train)
        Training frames, missing entries already set to a constant.
    r : int
    floor : float
        Smallest threshold; a natural choice is half the minimum outlier size.

    Returns
    -------
    P : ndarray (n, r)
    """
    Y = np.asarray(Y_train, dtype=float)
    n, m = Y.shape
    if m < r:
        raise ValueError(f"need at least r={r} training frames, got {m}")
    if floor <= 0:
        raise ValueError("floor must be positive")
    beta = mu * r / np.sqrt(n * m)
    zeta0 = beta * np.linalg.norm(np.where(np.abs(Y) > floor, 0.0, Y), 2)
    L = np.zeros_like(Y)
    for k in range(max_iter):
        zeta = max(zeta0 * decay**k, floor)
        D = Y - L
        S = np.where(np.abs(D) > zeta, D, 0.0)
        L_new, P = _rank_r(Y - S, r)
        change = np.linalg.norm(L_new - L) / max(np.linalg.norm(L_new), np.finfo(float).tiny)
        L = L_new
        if zeta <= floor and change <= tol:
            return P
    raise NoConvergence(f"AltProj did not settle within {max_iter} iterations")


class NorstMissRobust(NorstMiss):
    """Tracker for streams with both missing entries and sparse outliers.

    Parameters
    ----------
    n : int
    params : TrackerParams
    robust : RobustParams
    variant : VariantParams, optional
    P_init : ndarray (n, r), optional
        Starting basis.  If omitted, the first ``robust.t_train`` frames of
        the first :meth:`run` call are used to obtain one by AltProj; those
        frames are then filled against it.
    oracle_support : ndarray of bool (n, d), optional
        Known outlier supports, used instead of the l1 search.
    """

    def __init__(self, n, params, robust=None, variant=None, P_init=None,
                 oracle_support=None, keep_history=True):
        super().__init__(n, params, variant, keep_history)
        self.robust = robust or RobustParams()
        self.oracle_support = None if oracle_support is None else np.asarray(oracle_support, bool)
        self.initialized = P_init is not None
        if P_init is not None:
            self.state.basis = np.asarray(P_init, dtype=float)
            if keep_history:
                self.history = [(0, self.state.basis)]

    def _effective_mask(self, Y, M):
        st = self.state
        if self.oracle_support is not None:
            lo = st.t
            return M | self.oracle_support[:, lo:lo + Y.shape[1]]
        P = st.basis
        if not np.any(P):
            return M
        rp = self.robust
        Yt = Y - P @ (P.T @ Y)
        X = modified_cs(Yt, P, M, rp.xi, max_iter=rp.cs_max_iter, tol=rp.cs_tol)
        if rp.omega_supp == "auto":
            omega = 0.9 * np.linalg.norm(Y, axis=0) / np.sqrt(Y.shape[0])
        else:
            omega = float(rp.omega_supp)
        return support_estimate(X, M, omega)

    def initialize(self, Y_train, M_train):
        """AltProj on the training batch with missing entries set to a constant."""
        rp = self.robust
        Yf = np.where(M_train, rp.fill_value, Y_train)
        P0 = altproj_init(Yf, self.params.r, floor=rp.support_threshold(),
                          max_iter=rp.altproj_max_iter, tol=rp.altproj_tol,
                          decay=rp.altproj_decay, mu=rp.altproj_mu)
        st = self.state
        st.basis = P0
        m = Y_train.shape[1]
        st.t = m
        st.s = m + 1
        st.cycle_starts = [m + 1]
        st.last_update = m
        if self.keep_history:
            self.history = [(0, P0)]
        self.initialized = True
        return P0

    def run(self, Y, missing):
        Y = np.asarray(Y, dtype=float)
        missing = np.asarray(missing, dtype=bool)
        if self.initialized:
            return super().run(Y, missing)
        m = self.robust.t_train
        if m < self.params.r:
            raise ConfigInvalid({"t_train": f"must be at least r={self.params.r}"})
        if m >= Y.shape[1]:
            raise ConfigInvalid({"t_train": "must be shorter than the stream"})
        Yz = np.where(missing, 0.0, Y)
        self.initialize(Yz[:, :m], missing[:, :m])
        # training frames are filled against the initial basis as well
        st = self.state
        t_saved = st.t
        st.t = 0
        M_eff = self._effective_mask(Yz[:, :m], missing[:, :m])
        st.t = t_saved
        head, _ = self._project(Yz[:, :m], M_eff, st.basis)
        rest = super().run(Yz[:, m:], missing[:, m:])
        return RunResult(
            L_hat=np.hstack([head, rest.L_hat]),
            effective_mask=np.hstack([M_eff, rest.effective_mask]),
            failed=np.concatenate([np.zeros(m, dtype=bool), rest.failed]),
            tracker=self,
            frame_seconds=np.concatenate([np.zeros(m), rest.frame_seconds]),
        )


def robust_step(tracker, y, T):
    """One frame of robust tracking; the tracker must already hold a basis
    (from :meth:`NorstMissRobust.initialize` or ``P_init``)."""
    if not tracker.initialized:
        raise ValueError("robust tracker is not initialized; call initialize() or pass P_init")
    return tracker.step(y, T)
