"""Synthetic streams: planted subspaces, bounded coefficients, missing-entry
supports, sparse outliers and noise, plus CSV import/export.

Supports are carried as ``(n, d)`` boolean masks with ``True`` marking a
missing (or outlier) entry; :func:`mask_to_sets` / :func:`sets_to_mask`
convert to and from per-frame sorted index arrays.  Frames are numbered from
1, so frame ``t`` is column ``t - 1``.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ParseError, ShapeMismatch
from .linalg import orthonormalize, skew_expm

# independent random streams, one per generator
STREAM_SUBSPACES = 0
STREAM_COEFFS = 1
STREAM_MISSING = 2
STREAM_OUTLIERS = 3
STREAM_NOISE = 4


def rng_for(seed, stream):
    """Counter-based generator for sub-stream `stream` of the master `seed`."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class CoefficientSpec:
    """Bounded-uniform coefficient model with condition number `f`.

    Coordinate ``i`` is uniform on ``[-q_i, q_i]``; with ``time_varying`` the
    half-widths of the first ``r - 1`` coordinates are shifted by
    ``-lambda_minus/2`` on even frames and ``+lambda_minus/2`` on odd ones.
    """

    r: int
    f: float = 100.0
    time_varying: bool = False

    def __post_init__(self):
        if self.r < 1:
            raise ValueError("r must be at least 1")
        if self.f < 1:
            raise ValueError("f must be at least 1")

    def half_widths(self):
        r, sf = self.r, np.sqrt(self.f)
        q = sf - sf * np.arange(r) / (2 * r)
        q[-1] = 1.0
        return q

    def eigenvalues(self):
        return self.half_widths() ** 2 / 3.0

    @property
    def lambda_minus(self):
        return float(self.eigenvalues().min())

    @property
    def lambda_plus(self):
        return float(self.eigenvalues().max())


@dataclass
class GroundTruth:
    """Planted model: ``L[:, t-1] = P_(t) a_t`` with ``P_(t)`` piecewise constant."""

    subspaces: list
    change_times: list
    coefficients: np.ndarray
    noise_std_ratio: float = 0.0
    clean: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.change_times = [int(t) for t in self.change_times]
        if len(self.change_times) != len(self.subspaces) - 1:
            raise ShapeMismatch("need exactly one change time per subspace after the first")
        if any(b <= a for a, b in zip([1] + self.change_times, self.change_times)):
            raise ValueError("change times must be increasing and after t=1")
        if self.clean is None:
            self.clean = self._build_clean()

    @property
    def n(self):
        return self.subspaces[0].shape[0]

    @property
    def r(self):
        return self.subspaces[0].shape[1]

    @property
    def d(self):
        return self.coefficients.shape[1]

    def epoch(self, t):
        """Index j of the subspace active at frame t (1-based)."""
        return int(np.searchsorted(self.change_times, t, side="right"))

    def epochs(self):
        return np.searchsorted(self.change_times, np.arange(1, self.d + 1), side="right")

    def basis_at(self, t):
        return self.subspaces[self.epoch(t)]

    def _build_clean(self):
        L = np.empty((self.n, self.d))
        bounds = [1] + self.change_times + [self.d + 1]
        for j, P in enumerate(self.subspaces):
            lo, hi = bounds[j] - 1, min(bounds[j + 1] - 1, self.d)
            if lo < hi:
                L[:, lo:hi] = P @ self.coefficients[:, lo:hi]
        return L


@dataclass
class ObservationStream:
    """Observed frames ``Y`` (zero on missing entries) and the missing mask."""

    Y: np.ndarray
    missing: np.ndarray
    outliers: np.ndarray = None
    outlier_mask: np.ndarray = None

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=float)
        self.missing = np.asarray(self.missing, dtype=bool)
        if self.Y.shape != self.missing.shape:
            raise ShapeMismatch(f"values {self.Y.shape} vs mask {self.missing.shape}")

    @property
    def n(self):
        return self.Y.shape[0]

    @property
    def d(self):
        return self.Y.shape[1]

    def frame(self, t):
        return self.Y[:, t - 1], np.flatnonzero(self.missing[:, t - 1])


def mask_to_sets(mask):
    mask = np.asarray(mask, dtype=bool)
    return [np.flatnonzero(mask[:, t]) for t in range(mask.shape[1])]


def sets_to_mask(sets, n):
    mask = np.zeros((n, len(sets)), dtype=bool)
    for t, idx in enumerate(sets):
        idx = np.asarray(idx, dtype=int)
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise ValueError(f"frame {t + 1}: index out of range [0, {n})")
        mask[idx, t] = True
    return mask


def gen_subspaces(n, r, J, gamma, seed):
    """``P_0`` from an orthonormalised Gaussian matrix, then
    ``P_j = expm(gamma * B_j) P_{j-1}`` with ``B_j = G_j - G_j'``."""
    if not 1 <= r <= n:
        raise ValueError("need 1 <= r <= n")
    if J < 0 or gamma < 0:
        raise ValueError("J and gamma must be nonnegative")
    rng = rng_for(seed, STREAM_SUBSPACES)
    P = orthonormalize(rng.standard_normal((n, r)))
    out = [P]
    for _ in range(J):
        G = rng.standard_normal((n, n))
        if gamma == 0:
            P = out[-1].copy()
        else:
            P = skew_expm(G - G.T, gamma) @ out[-1]
            # undo the slow drift from repeated products
            P = orthonormalize(P)
        out.append(P)
    return out


def gen_coefficients(spec, d, seed):
    rng = rng_for(seed, STREAM_COEFFS)
    q = np.repeat(spec.half_widths()[:, None], d, axis=1)
    if spec.time_varying and spec.r > 1:
        t = np.arange(1, d + 1)
        shift = np.where(t % 2 == 0, -0.5, 0.5) * spec.lambda_minus
        q[:-1] += shift
    return rng.uniform(-1.0, 1.0, size=(spec.r, d)) * q


def gen_bernoulli_supports(n, d, rho, seed, stream=STREAM_MISSING):
    """Missing mask with each entry observed independently with probability `rho`."""
    if not 0 < rho <= 1:
        raise ValueError("rho must lie in (0, 1]")
    rng = rng_for(seed, stream)
    return rng.random((n, d)) >= rho


def gen_moving_object_supports(n, d, s, b0, seed, start=None, stream=STREAM_MISSING):
    """Contiguous block of `s` rows whose start advances by ``ceil(s*b0)`` per frame.

    The initial offset is drawn from the seed unless `start` is given.
    """
    if not 1 <= s < n:
        raise ValueError("need 1 <= s < n")
    if not 0 < b0 <= 1:
        raise ValueError("b0 must lie in (0, 1]")
    if start is None:
        start = int(rng_for(seed, stream).integers(n))
    step = int(np.ceil(s * b0))
    starts = (start + step * np.arange(d)) % n
    rows = (starts[None, :] + np.arange(s)[:, None]) % n
    mask = np.zeros((n, d), dtype=bool)
    mask[rows, np.arange(d)[None, :]] = True
    return mask


@dataclass
class OutlierSpec:
    """Moving-object outlier blocks of size `s` with magnitudes in [x_min, x_max]."""

    s: int
    b0: float = 0.05
    x_min: float = 10.0
    x_max: float = 25.0
    random_sign: bool = False

    def __post_init__(self):
        if not 0 < self.x_min <= self.x_max:
            raise ValueError("need 0 < x_min <= x_max")


def gen_outliers(n, d, spec, missing, seed):
    """Sparse outliers supported outside the missing set.

    Each frame's support starts from the moving-object block start and takes
    the first ``spec.s`` observed rows walking forward cyclically, so a block
    that runs into missing rows slides past them.

    Returns
    -------
    X : ndarray (n, d)
        Outlier values, zero off-support.
    support : ndarray of bool (n, d)
    """
    missing = np.asarray(missing, dtype=bool)
    if missing.shape != (n, d):
        raise ShapeMismatch("missing mask has the wrong shape")
    rng = rng_for(seed, STREAM_OUTLIERS)
    start = int(rng.integers(n))
    step = int(np.ceil(spec.s * spec.b0))
    support = np.zeros((n, d), dtype=bool)
    for t in range(d):
        order = (start + step * t + np.arange(n)) % n
        free = order[~missing[order, t]]
        if free.size < spec.s:
            raise ValueError(f"frame {t + 1}: only {free.size} observed rows for {spec.s} outliers")
        support[free[: spec.s], t] = True
    X = np.zeros((n, d))
    vals = rng.uniform(spec.x_min, spec.x_max, size=int(support.sum()))
    if spec.random_sign:
        vals *= rng.choice([-1.0, 1.0], size=vals.size)
    # fill column by column so values do not depend on the mask layout in memory
    X.T[support.T] = vals
    return X, support


def assemble_stream(truth, missing, outliers=None, noise_std=0.0, seed=0):
    """Observed stream: clean frames plus outliers plus noise, zeroed on missing entries.

    `outliers` is ``None`` or the ``(X, support)`` pair from :func:`gen_outliers`.
    """
    L = truth.clean
    missing = np.asarray(missing, dtype=bool)
    if missing.shape != L.shape:
        raise ShapeMismatch(f"mask {missing.shape} vs data {L.shape}")
    Y = L.copy()
    X = support = None
    if outliers is not None:
        X, support = outliers
        if X.shape != L.shape:
            raise ShapeMismatch("outlier matrix has the wrong shape")
        Y += X
    if noise_std > 0:
        Y += noise_std * rng_for(seed, STREAM_NOISE).standard_normal(Y.shape)
    Y[missing] = 0.0
    return ObservationStream(Y, missing, X, support)


def gen_truth(n, d, r, f=100.0, J=0, change_times=None, gamma=0.0, seed=0,
              time_varying=False, noise_std_ratio=0.0):
    """Convenience wrapper drawing subspaces and coefficients for one stream."""
    if change_times is None:
        change_times = []
    if len(change_times) != J:
        raise ValueError(f"expected {J} change times, got {len(change_times)}")
    spec = CoefficientSpec(r, f, time_varying)
    Ps = gen_subspaces(n, r, J, gamma, seed)
    A = gen_coefficients(spec, d, seed)
    return GroundTruth(Ps, list(change_times), A, noise_std_ratio)


def miss_frac_stats(missing, alpha):
    """Worst per-column missing fraction and worst per-row fraction over any
    window of `alpha` consecutive frames."""
    missing = np.asarray(missing, dtype=bool)
    n, d = missing.shape
    if not 1 <= alpha <= d:
        raise ValueError("need 1 <= alpha <= d")
    col = missing.sum(axis=0).max() / n
    csum = np.zeros((n, d + 1), dtype=np.int64)
    np.cumsum(missing, axis=1, out=csum[:, 1:])
    win = csum[:, alpha:] - csum[:, :-alpha]
    return float(col), float(win.max() / alpha)


# ---------------------------------------------------------------- CSV I/O
#
# One frame per line.  Values are written with 17 significant digits so that
# reading them back reproduces every float64 bit for bit.

_FMT = "%.17g"


def _write_rows(path, rows):
    with open(path, "w") as fh:
        for row in rows:
            fh.write(",".join(_FMT % v for v in row))
            fh.write("\n")


def _read_rows(path, allow_empty=False, conv=float):
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                if allow_empty:
                    rows.append([])
                    continue
                raise ParseError("empty line", path, lineno)
            try:
                rows.append([conv(tok) for tok in line.split(",")])
            except ValueError as exc:
                raise ParseError(f"bad value ({exc})", path, lineno) from None
    return rows


def write_dense_csv(path, Y, missing):
    """Export frames with missing entries written as NaN."""
    Z = np.array(Y, dtype=float)
    Z[np.asarray(missing, dtype=bool)] = np.nan
    _write_rows(path, Z.T)


def read_dense_csv(path):
    """Read a NaN-for-missing CSV; returns ``(Y, missing)`` with Y zeroed on missing."""
    rows = _read_rows(path)
    if not rows:
        raise ParseError("no frames", path)
    n = len(rows[0])
    for lineno, row in enumerate(rows, start=1):
        if len(row) != n:
            raise ParseError(f"expected {n} values, found {len(row)}", path, lineno)
    # C order so downstream BLAS calls match in-memory runs bit for bit
    Z = np.ascontiguousarray(np.array(rows, dtype=float).T)
    missing = np.isnan(Z)
    if np.isinf(Z).any():
        bad = int(np.flatnonzero(np.isinf(Z).any(axis=0))[0]) + 1
        raise ParseError("infinite value", path, bad)
    Z[missing] = 0.0
    return Z, missing


def write_pair_csv(values_path, missing_path, Y, missing):
    """Export values (zero on missing entries) and per-frame missing indices."""
    missing = np.asarray(missing, dtype=bool)
    Z = np.array(Y, dtype=float)
    Z[missing] = 0.0
    _write_rows(values_path, Z.T)
    with open(missing_path, "w") as fh:
        for idx in mask_to_sets(missing):
            fh.write(",".join(str(int(i)) for i in idx))
            fh.write("\n")


def read_pair_csv(values_path, missing_path):
    rows = _read_rows(values_path)
    if not rows:
        raise ParseError("no frames", values_path)
    n = len(rows[0])
    for lineno, row in enumerate(rows, start=1):
        if len(row) != n:
            raise ParseError(f"expected {n} values, found {len(row)}", values_path, lineno)
        if not np.all(np.isfinite(row)):
            raise ParseError("non-finite value", values_path, lineno)
    sets = _read_rows(missing_path, allow_empty=True, conv=int)
    if len(sets) != len(rows):
        raise ParseError(f"{len(sets)} index lines for {len(rows)} frames", missing_path)
    for lineno, idx in enumerate(sets, start=1):
        if any(i < 0 or i >= n for i in idx):
            raise ParseError(f"index out of range [0, {n})", missing_path, lineno)
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ParseError("indices must be strictly increasing", missing_path, lineno)
    Y = np.ascontiguousarray(np.array(rows, dtype=float).T)
    missing = sets_to_mask(sets, n)
    Y[missing] = 0.0
    return Y, missing


def write_matrix_csv(path, M):
    """Plain matrix export, one column (frame) per line."""
    _write_rows(path, np.asarray(M, dtype=float).T)


def read_matrix_csv(path):
    rows = _read_rows(path)
    if not rows:
        raise ParseError("no frames", path)
    n = len(rows[0])
    for lineno, row in enumerate(rows, start=1):
        if len(row) != n:
            raise ParseError(f"expected {n} values, found {len(row)}", path, lineno)
    return np.ascontiguousarray(np.array(rows, dtype=float).T)


def save_truth(directory, truth):
    """Write the planted model so metrics can be recomputed offline."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(directory / "clean.csv", truth.clean)
    write_matrix_csv(directory / "coefficients.csv", truth.coefficients)
    for j, P in enumerate(truth.subspaces):
        # bases are stored column by column like frames
        write_matrix_csv(directory / f"subspace_{j}.csv", P)
    with open(directory / "change_times.csv", "w") as fh:
        fh.write(",".join(str(t) for t in truth.change_times) + "\n")
        fh.write(_FMT % truth.noise_std_ratio + "\n")


def load_truth(directory):
    directory = Path(directory)
    with open(directory / "change_times.csv") as fh:
        lines = fh.read().splitlines()
    times = [int(x) for x in lines[0].split(",") if x]
    ratio = float(lines[1]) if len(lines) > 1 else 0.0
    Ps = [read_matrix_csv(directory / f"subspace_{j}.csv") for j in range(len(times) + 1)]
    A = read_matrix_csv(directory / "coefficients.csv")
    L = read_matrix_csv(directory / "clean.csv")
    return GroundTruth(Ps, times, A, ratio, clean=L)
