"""Variant knobs layered over the basic tracker: coefficient-fit fills after an
update cycle completes, overlapping update windows, and re-filling the update
window several times before committing a basis."""

from dataclasses import dataclass

import numpy as np

from .fill import project_ls_fill, sample_efficient_fill  # noqa: F401 (re-export)
from .linalg import r_svd

MODES = ("basic", "sample-efficient", "sliding", "reuse", "sliding-reuse")


@dataclass
class VariantParams:
    """Which variant to run.

    Attributes
    ----------
    mode : str
        One of ``MODES``.
    beta : int or None
        Hop between overlapping update windows (sliding modes); ``None``
        means no overlap, i.e. ``beta = alpha``.
    R : int
        Extra re-fill passes per update (reuse modes).
    """

    mode: str = "basic"
    beta: int = None
    R: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown variant {self.mode!r}; expected one of {', '.join(MODES)}")
        if self.R < 0:
            raise ValueError("R must be nonnegative")
        if self.beta is not None and self.beta < 1:
            raise ValueError("beta must be at least 1")

    @property
    def sliding(self):
        return self.mode in ("sliding", "sliding-reuse")

    @property
    def reuse(self):
        return self.mode in ("reuse", "sliding-reuse")

    @property
    def sample_efficient(self):
        return self.mode == "sample-efficient"

    def hop(self, alpha):
        if self.sliding and self.beta is not None:
            if self.beta > alpha:
                raise ValueError(f"beta={self.beta} exceeds alpha={alpha}")
            return self.beta
        return alpha

    def reuse_count(self):
        return self.R if self.reuse else 0

    @classmethod
    def parse(cls, text):
        """Parse ``basic``, ``sample-efficient``, ``sliding:10``, ``reuse:4`` or
        ``sliding-reuse:10:1``."""
        parts = text.strip().lower().split(":")
        mode, args = parts[0], [int(p) for p in parts[1:]]
        if mode == "sliding":
            return cls(mode, beta=args[0] if args else None)
        if mode == "reuse":
            return cls(mode, R=args[0] if args else 0)
        if mode == "sliding-reuse":
            if len(args) != 2:
                raise ValueError("sliding-reuse needs beta and R, e.g. sliding-reuse:10:1")
            return cls(mode, beta=args[0], R=args[1])
        if args:
            raise ValueError(f"variant {mode!r} takes no arguments")
        return cls(mode)

    def label(self):
        if self.mode == "sliding":
            return f"sliding(beta={self.beta})"
        if self.mode == "reuse":
            return f"reuse(R={self.R})"
        if self.mode == "sliding-reuse":
            return f"sliding-reuse(beta={self.beta},R={self.R})"
        return self.mode


class UpdateSchedule:
    """Update times within one cycle that starts at frame `s`.

    Updates fire at ``s + alpha - 1 + m*beta`` for ``m = 0, 1, ...`` up to and
    including the freeze time ``s + K*alpha - 1``, which always fires.
    """

    def __init__(self, alpha, K, beta=None):
        self.alpha = int(alpha)
        self.K = int(K)
        self.beta = self.alpha if beta is None else int(beta)
        if not 1 <= self.beta <= self.alpha:
            raise ValueError("need 1 <= beta <= alpha")

    def freeze_time(self, s):
        return s + self.K * self.alpha - 1

    def fires(self, t, s):
        first = s + self.alpha - 1
        if t < first or t > self.freeze_time(s):
            return False
        return (t - first) % self.beta == 0 or t == self.freeze_time(s)

    def next_after(self, t, s):
        """First update time strictly after `t`, or None past the freeze."""
        first = s + self.alpha - 1
        fin = self.freeze_time(s)
        if t < first:
            return first
        if t >= fin:
            return None
        m = (t - first) // self.beta + 1
        return min(first + m * self.beta, fin)

    def times(self, s):
        out, t = [], s - 1
        while True:
            t = self.next_after(t, s)
            if t is None:
                return out
            out.append(t)


def sliding_window_schedule(beta, alpha, K=1):
    """Predicate ``fires(t, s)`` for update times of a cycle starting at `s`."""
    return UpdateSchedule(alpha, K, beta).fires


def buffer_reuse_update(Y_win, masks_win, R, r, *, fills=None, P_start=None,
                        fill_fn=None, svd_seed=0):
    """Basis from an update window, re-filling the window `R` extra times.

    The first pass uses `fills` (the fills already computed online) or, if
    absent, fills the window against `P_start`.  Each pass takes the top-`r`
    left singular vectors of the current fills; each of the `R` further passes
    first re-fills the window against the newest basis.

    Returns
    -------
    P : ndarray (n, r)
    fills : ndarray (n, alpha)
        Fills from the last pass (the input fills when ``R == 0``).
    """
    if R < 0:
        raise ValueError("R must be nonnegative")
    if fill_fn is None:
        def fill_fn(Y, M, P):
            ell, _, failed = project_ls_fill(Y, M, P, raise_on_fail=False)
            return ell, failed
    if fills is None:
        if P_start is None:
            raise ValueError("need either fills or P_start")
        fills, _ = fill_fn(Y_win, masks_win, P_start)
    P, _ = r_svd(fills, r, seed=svd_seed)
    for _ in range(R):
        fills, _ = fill_fn(Y_win, masks_win, P)
        P, _ = r_svd(fills, r, seed=svd_seed)
    return P, np.asarray(fills)
