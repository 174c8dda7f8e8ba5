"""Evaluation quantities: subspace error over time, relative errors, detection
delays and the number of samples needed to reach an accuracy level."""

import csv
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionMismatch, ZeroMatrix
from .linalg import sin_theta_max

SERIES_HEADER = ("t", "sin_theta", "rel_col_err", "j", "k", "event")


@dataclass
class ErrorSeries:
    """Per-frame error records.

    ``t`` runs over frames 1..d.  ``sin_theta[i]`` compares the basis in
    force after frame ``t[i]`` (so including an update made at that frame)
    with the true subspace active at ``t[i]``.  ``event`` holds the
    ``;``-joined kinds of tracker events at each frame.
    """

    t: np.ndarray
    sin_theta: np.ndarray
    rel_col_err: np.ndarray
    j: np.ndarray
    k: np.ndarray
    event: list
    events: list = field(default_factory=list)

    def __len__(self):
        return len(self.t)

    def at(self, t):
        return float(self.sin_theta[int(t) - 1])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SERIES_HEADER)
            for i in range(len(self.t)):
                w.writerow([int(self.t[i]), "%.17g" % self.sin_theta[i],
                            "%.17g" % self.rel_col_err[i], int(self.j[i]), int(self.k[i]),
                            self.event[i]])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or tuple(rows[0]) != SERIES_HEADER:
            raise ValueError(f"{path}: expected header {','.join(SERIES_HEADER)}")
        cols = list(zip(*rows[1:])) or [()] * len(SERIES_HEADER)
        return cls(t=np.array(cols[0], dtype=np.int64),
                   sin_theta=np.array(cols[1], dtype=float),
                   rel_col_err=np.array(cols[2], dtype=float),
                   j=np.array(cols[3], dtype=np.int64), k=np.array(cols[4], dtype=np.int64),
                   event=list(cols[5]))


def _epoch_labels(events, d):
    """(j, k) in force after each frame, and per-frame event kinds."""
    j = np.zeros(d, dtype=np.int64)
    k = np.zeros(d, dtype=np.int64)
    kinds = [[] for _ in range(d)]
    cj = ck = 0
    last = 0
    for e in sorted(events, key=lambda e: e.t):
        if e.t > d:
            break
        if e.t >= 1:
            j[last:e.t - 1] = cj
            k[last:e.t - 1] = ck
            last = e.t - 1
            kinds[e.t - 1].append(e.kind)
        if e.kind == "detect":
            cj, ck = e.j, 0
        elif e.kind in ("update", "final-update"):
            cj, ck = e.j, e.k
    j[last:] = cj
    k[last:] = ck
    return j, k, [";".join(x) for x in kinds]


def subspace_error_series(basis_history, truth, *, L_hat=None, events=(), d=None):
    """Error of the tracked basis against the truth at every frame.

    Parameters
    ----------
    basis_history : list of (t, ndarray)
        Committed bases with the frame at which each took effect; the first
        entry is the initial basis at ``t = 0``.
    truth : GroundTruth
    L_hat : ndarray (n, d), optional
        Tracker output; gives the per-column relative error (NaN otherwise).
    events : list of Event
        Used for the (j, k) labels and event column.
    d : int, optional
        Number of frames (defaults to ``truth.d``).

    Returns
    -------
    ErrorSeries
    """
    d = truth.d if d is None else int(d)
    if not basis_history:
        raise ValueError("empty basis history")
    n = truth.n
    times = np.array([t for t, _ in basis_history], dtype=np.int64)
    if np.any(np.diff(times) < 0):
        raise ValueError("basis history must be ordered in time")
    for _, B in basis_history:
        if B.shape[0] != n:
            raise DimensionMismatch(f"basis has {B.shape[0]} rows, truth has {n}")
    t = np.arange(1, d + 1)
    # index of the newest basis committed at or before each frame
    idx = np.searchsorted(times, t, side="right") - 1
    if np.any(idx < 0):
        raise ValueError("basis history must start at or before frame 1")
    epoch = truth.epochs()[:d] if d <= truth.d else np.array([truth.epoch(x) for x in t])
    sin = np.empty(d)
    cache = {}
    for i in range(d):
        key = (idx[i], epoch[i])
        if key not in cache:
            cache[key] = sin_theta_max(basis_history[idx[i]][1], truth.subspaces[epoch[i]])
        sin[i] = cache[key]
    if L_hat is not None:
        L = truth.clean[:, :d]
        if L_hat.shape[0] != n or L_hat.shape[1] < d:
            raise DimensionMismatch(f"L_hat shape {L_hat.shape} does not cover {n}x{d}")
        num = np.linalg.norm(L_hat[:, :d] - L, axis=0)
        den = np.linalg.norm(L, axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            col = np.where(den > 0, num / den, np.where(num > 0, np.inf, 0.0))
    else:
        col = np.full(d, np.nan)
    j, k, kinds = _epoch_labels(list(events), d)
    return ErrorSeries(t=t, sin_theta=sin, rel_col_err=col, j=j, k=k, event=kinds,
                       events=list(events))


def rel_frobenius(L_hat, L):
    """``||L_hat - L||_F / ||L||_F``."""
    L_hat = np.asarray(L_hat, dtype=float)
    L = np.asarray(L, dtype=float)
    if L_hat.shape != L.shape:
        raise DimensionMismatch(f"shapes {L_hat.shape} and {L.shape} differ")
    den = np.linalg.norm(L)
    if den == 0:
        raise ZeroMatrix("reference matrix is zero")
    return float(np.linalg.norm(L_hat - L) / den)


@dataclass
class DetectionReport:
    """Matched detections ``(t_j, t_hat, delay)``, missed change times and
    detections with no change in the preceding window."""

    matched: list = field(default_factory=list)
    misses: list = field(default_factory=list)
    false_alarms: list = field(default_factory=list)

    @property
    def delays(self):
        return [delay for _, _, delay in self.matched]


def detection_report(detections, change_times, alpha, *, window=4):
    """Match detections to true change times.

    Each detection is paired with the nearest change time at or before it if
    that change lies within ``window * alpha`` frames and has not already been
    claimed; otherwise it is a false alarm.  Change times left unclaimed are
    misses.

    Parameters
    ----------
    detections : list of int or Event
        Detection times (events of kinds other than ``detect`` are skipped).
    change_times : list of int
    alpha : int
    """
    times = []
    for e in detections:
        if hasattr(e, "kind"):
            if e.kind == "detect":
                times.append(int(e.t))
        else:
            times.append(int(e))
    times.sort()
    changes = sorted(int(c) for c in change_times)
    claimed = set()
    rep = DetectionReport()
    for th in times:
        prior = [c for c in changes if c <= th]
        c = prior[-1] if prior else None
        if c is not None and th - c <= window * alpha and c not in claimed:
            claimed.add(c)
            rep.matched.append((c, th, th - c))
        else:
            rep.false_alarms.append(th)
    rep.misses = [c for c in changes if c not in claimed]
    return rep


def samples_to_threshold(series, threshold, alpha):
    """Frames needed until the error stays at or below `threshold`.

    Returns ``t + alpha - 1`` for the first frame ``t`` such that frames
    ``t .. t + alpha - 1`` are all at or below `threshold`, or None if that
    never happens within the series.
    """
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    alpha = int(alpha)
    s = np.asarray(series.sin_theta if isinstance(series, ErrorSeries) else series, dtype=float)
    below = s <= threshold
    if below.size < alpha:
        return None
    # run length of consecutive sub-threshold frames ending at each frame
    run = np.zeros(below.size, dtype=np.int64)
    count = 0
    for i, b in enumerate(below):
        count = count + 1 if b else 0
        run[i] = count
    hit = np.flatnonzero(run >= alpha)
    if hit.size == 0:
        return None
    return int(hit[0]) + 1


def update_errors(basis_history, truth, events):
    """sin_theta of each basis committed by an update, in order.

    Returns a list of ``(t, j, k, sin_theta)``.
    """
    kinds = {e.t: e for e in events if e.kind in ("update", "final-update")}
    out = []
    for t, B in basis_history:
        if t in kinds:
            e = kinds[t]
            out.append((t, e.j, e.k, sin_theta_max(B, truth.basis_at(t))))
    return out


@dataclass
class RunReport:
    """Summary of one run; written as ``metric,value`` rows.

    Wall time is kept out of :meth:`rows` so that the file is reproducible;
    it is reported separately.
    """

    rel_frobenius: float = None
    rel_frobenius_online: float = None
    samples: dict = field(default_factory=dict)
    detection: DetectionReport = None
    ms_per_frame: float = None
    final_sin_theta: float = None
    extra: dict = field(default_factory=dict)

    def rows(self):
        out = [("rel_frobenius", self.rel_frobenius),
               ("rel_frobenius_online", self.rel_frobenius_online),
               ("final_sin_theta", self.final_sin_theta)]
        for thr in sorted(self.samples):
            v = self.samples[thr]
            out.append((f"samples_to_{thr:g}", "never" if v is None else v))
        if self.detection is not None:
            out.append(("detections", len(self.detection.matched) + len(self.detection.false_alarms)))
            out.append(("misses", len(self.detection.misses)))
            out.append(("false_alarms", len(self.detection.false_alarms)))
            for c, th, delay in self.detection.matched:
                out.append((f"delay_at_{c}", delay))
        out.extend(sorted(self.extra.items()))
        return [(k, v) for k, v in out if v is not None]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("metric", "value"))
            for k, v in self.rows():
                w.writerow((k, "%.17g" % v if isinstance(v, float) else v))


def steady_ms_per_frame(frame_seconds, alpha):
    """Median wall time per frame in milliseconds, skipping the first `alpha` frames."""
    s = np.asarray(frame_seconds, dtype=float)
    if s.size > alpha:
        s = s[alpha:]
    return float(np.median(s) * 1e3) if s.size else float("nan")


__all__ = [
    "ErrorSeries", "DetectionReport", "RunReport", "subspace_error_series", "rel_frobenius",
    "detection_report", "samples_to_threshold", "update_errors", "steady_ms_per_frame",
    "SERIES_HEADER",
]
