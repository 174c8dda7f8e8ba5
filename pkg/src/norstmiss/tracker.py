"""Subspace tracking from missing data: the update/detect state machine,
offline smoothing for matrix completion, and checkpointing.

Frames are numbered from 1.  A cycle starts at frame ``s`` (``s = 1`` for the
first one, otherwise the frame at which a change was detected).  Within a
cycle the basis is re-estimated from the trailing ``alpha`` fills at each
scheduled update time, frozen at ``s + K*alpha - 1``, after which the tracker
checks every ``alpha`` frames whether the residual energy outside the frozen
basis has grown past ``alpha * omega_evals``.

Events at a single time are handled in the order update, freeze, detect, and
the fill of frame ``t`` always uses the basis in force after frame ``t - 1``.
"""

import time
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .datagen import _read_rows
from .exceptions import BudgetExceeded, BudgetWarning, ParseError
from .fill import project_ls_fill, psi_condition, sample_efficient_fill
from .linalg import lambda_max_sym, r_svd, union_basis
from .variants import UpdateSchedule, VariantParams, buffer_reuse_update

UPDATE, DETECT = "update", "detect"


@dataclass
class TrackerParams:
    """Algorithm parameters.

    Attributes
    ----------
    r : int
        Subspace dimension.
    K : int
        Number of ``alpha``-frame blocks per update cycle.
    alpha : int
        Update window length; defaults to ``2 r``.
    omega_evals : float or None
        Detection threshold in variance units.  ``None`` sets it to
        ``omega_scale`` times the r-th eigenvalue of the buffer covariance
        measured at the first freeze.
    """

    r: int
    K: int = 33
    alpha: int = None
    omega_evals: float = None
    omega_scale: float = 0.0008
    cgls_tol: float = 1e-16
    cgls_max_iter: int = 20
    svd_seed: int = 0
    cond_limit: float = 1e8
    ls_solver: str = "cgls"

    def __post_init__(self):
        if self.alpha is None:
            self.alpha = 2 * self.r
        errs = {}
        if self.r < 1:
            errs["r"] = "must be at least 1"
        if self.K < 1:
            errs["K"] = "must be at least 1"
        if self.alpha < self.r:
            errs["alpha"] = f"must be at least r={self.r}"
        if self.omega_evals is not None and not self.omega_evals > 0:
            errs["omega_evals"] = "must be positive"
        if not self.omega_scale > 0:
            errs["omega_scale"] = "must be positive"
        if not self.cgls_tol > 0:
            errs["cgls_tol"] = "must be positive"
        if self.ls_solver not in ("cgls", "direct"):
            errs["ls_solver"] = "must be cgls or direct"
        if self.cgls_max_iter < 1:
            errs["cgls_max_iter"] = "must be at least 1"
        if errs:
            from .exceptions import ConfigInvalid
            raise ConfigInvalid(errs)


@dataclass
class Event:
    t: int
    kind: str  # update | freeze | detect | final-update
    j: int
    k: int
    statistic: float = float("nan")


@dataclass
class FrameOutput:
    ell_hat: np.ndarray
    basis: np.ndarray
    events: list
    failed: bool = False


@dataclass
class TrackerState:
    n: int
    basis: np.ndarray
    phase: str = UPDATE
    j: int = 0
    k: int = 0
    t: int = 0
    s: int = 1
    t_fin: int = None
    last_update: int = 0
    lambda_minus_hat: float = None
    omega: float = None
    detections: list = field(default_factory=list)
    fin_times: list = field(default_factory=list)
    frozen: list = field(default_factory=list)
    cycle_starts: list = field(default_factory=lambda: [1])
    events: list = field(default_factory=list)
    # trailing window of at most alpha frames
    buf_t: np.ndarray = None
    buf_fill: np.ndarray = None
    buf_y: np.ndarray = None
    buf_mask: np.ndarray = None


class NorstMiss:
    """Online tracker.

    Parameters
    ----------
    n : int
        Ambient dimension.
    params : TrackerParams
    variant : VariantParams, optional
    keep_history : bool
        Record every basis the tracker commits (needed for error series).
    """

    def __init__(self, n, params, variant=None, keep_history=True):
        self.params = params
        self.variant = variant or VariantParams()
        self.schedule = UpdateSchedule(params.alpha, params.K, self.variant.hop(params.alpha))
        self.keep_history = keep_history
        st = TrackerState(n=n, basis=np.zeros((n, params.r)))
        st.buf_t = np.zeros(0, dtype=np.int64)
        st.buf_fill = np.zeros((n, 0))
        st.buf_y = np.zeros((n, 0))
        st.buf_mask = np.zeros((n, 0), dtype=bool)
        if params.omega_evals is not None:
            st.omega = float(params.omega_evals)
        self.state = st
        self.history = [(0, st.basis)] if keep_history else []
        self._revisions = []

    # ------------------------------------------------------------- filling
    def _project(self, Y, M, P):
        p = self.params
        ell, _, failed = project_ls_fill(Y, M, P, tol=p.cgls_tol, max_iter=p.cgls_max_iter,
                                         cond_limit=p.cond_limit, raise_on_fail=False,
                                         solver=p.ls_solver)
        return ell, failed

    def _effective_mask(self, Y, M):
        """Coordinates to be re-estimated; the robust tracker enlarges this."""
        return M

    def _fill(self, Y, M):
        """Fill a block of frames with the current basis.

        Returns the output estimate, the fill stored in the window (these
        differ only for coefficient-fit fills), the effective mask and the
        per-frame failure flags.
        """
        st = self.state
        M_eff = self._effective_mask(Y, M)
        P = st.basis
        if self.variant.sample_efficient and st.phase == DETECT:
            p = self.params
            out, fb = sample_efficient_fill(Y, M_eff, P, cond_limit=p.cond_limit,
                                            tol=p.cgls_tol, max_iter=p.cgls_max_iter)
            window = np.where(M_eff, out, Y)
            failed = np.zeros(Y.shape[1], dtype=bool)
            if fb.any():
                failed[fb] = psi_condition(P, M_eff[:, fb]) > p.cond_limit
            return out, window, M_eff, failed
        ell, failed = self._project(Y, M_eff, P)
        return ell, ell, M_eff, failed

    # ------------------------------------------------------------ schedule
    def next_event_time(self):
        st = self.state
        if st.phase == UPDATE:
            return self.schedule.next_after(st.t, st.s)
        a = self.params.alpha
        return st.t_fin + ((st.t - st.t_fin) // a + 1) * a

    def _push(self, times, fills, Y, M):
        st, a = self.state, self.params.alpha
        st.buf_t = np.concatenate([st.buf_t, times])[-a:]
        st.buf_fill = np.hstack([st.buf_fill, fills])[:, -a:]
        st.buf_y = np.hstack([st.buf_y, Y])[:, -a:]
        st.buf_mask = np.hstack([st.buf_mask, M])[:, -a:]

    def _commit(self, t, P):
        self.state.basis = P
        if self.keep_history:
            self.history.append((t, P))

    def _update(self, t):
        st, p = self.state, self.params
        R = self.variant.reuse_count()
        if R > 0:
            P, fills = buffer_reuse_update(st.buf_y, st.buf_mask, R, p.r, fills=st.buf_fill,
                                           fill_fn=self._project, svd_seed=p.svd_seed)
            st.buf_fill = fills
            self._revisions.append((st.buf_t.copy(), fills))
        else:
            P, _ = r_svd(st.buf_fill, p.r, seed=p.svd_seed)
        st.k += 1
        st.last_update = t
        self._commit(t, P)
        events = [Event(t, "update", st.j, st.k)]
        if t == self.schedule.freeze_time(st.s):
            st.frozen.append(P)
            st.t_fin = t
            st.fin_times.append(t)
            st.phase = DETECT
            if st.omega is None:
                sv = np.linalg.svd(st.buf_fill, compute_uv=False)
                st.lambda_minus_hat = float(sv[p.r - 1] ** 2 / p.alpha)
                st.omega = p.omega_scale * st.lambda_minus_hat
            events.append(Event(t, "freeze", st.j, st.k))
        return events

    def _detect(self, t):
        st, p = self.state, self.params
        detected, stat = detect_change(st.buf_fill, st.basis, st.omega, p.alpha)
        if not detected:
            return []
        st.j += 1
        st.k = 0
        st.s = t
        st.phase = UPDATE
        st.detections.append(t)
        st.cycle_starts.append(t)
        return [Event(t, "detect", st.j, 0, stat)]

    def _handle_event(self, t):
        if self.state.phase == UPDATE:
            events = self._update(t)
        else:
            events = self._detect(t)
        self.state.events.extend(events)
        return events

    # -------------------------------------------------------------- driving
    def _advance(self, Y, M):
        """Process a block that ends at or before the next event time."""
        st = self.state
        m = Y.shape[1]
        nxt = self.next_event_time()
        if nxt is not None and st.t + m > nxt:
            raise ValueError(f"block of {m} frames runs past the event at t={nxt}")
        times = np.arange(st.t + 1, st.t + m + 1)
        out, window, M_eff, failed = self._fill(Y, M)
        self._push(times, window, Y, M_eff)
        st.t += m
        events = []
        if st.t == nxt:
            events = self._handle_event(st.t)
        return out, M_eff, failed, events

    def step(self, y, T):
        """Process one frame given its missing index set `T`."""
        y = np.asarray(y, dtype=float)
        M = np.zeros((y.shape[0], 1), dtype=bool)
        M[np.asarray(T, dtype=int), 0] = True
        Y = np.where(M, 0.0, y[:, None])
        out, _, failed, events = self._advance(Y, M)
        return FrameOutput(out[:, 0], self.state.basis, events, bool(failed[0]))

    def pop_revisions(self):
        """Window fills replaced by re-fill passes since the last call, as
        ``[(times, fills), ...]``."""
        revs, self._revisions = self._revisions, []
        return revs

    def run(self, Y, missing):
        """Track a whole block of frames; returns a :class:`RunResult`."""
        Y = np.asarray(Y, dtype=float)
        missing = np.asarray(missing, dtype=bool)
        n, d = Y.shape
        t0 = self.state.t
        L_hat = np.empty((n, d))
        eff = np.empty((n, d), dtype=bool)
        failed = np.zeros(d, dtype=bool)
        seconds = np.zeros(d)
        Yz = np.where(missing, 0.0, Y)
        i = 0
        while i < d:
            nxt = self.next_event_time()
            stop = d if nxt is None else min(d, nxt - self.state.t + i)
            stop = min(stop, i + self.params.alpha)
            tic = time.perf_counter()
            out, M_eff, bad, _ = self._advance(Yz[:, i:stop], missing[:, i:stop])
            # frames in a block share its wall time evenly
            seconds[i:stop] = (time.perf_counter() - tic) / (stop - i)
            L_hat[:, i:stop] = out
            eff[:, i:stop] = M_eff
            failed[i:stop] = bad
            for times, fills in self.pop_revisions():
                cols = times - t0 - 1
                keep = cols >= 0
                L_hat[:, cols[keep]] = fills[:, keep]
            i = stop
        return RunResult(L_hat=L_hat, effective_mask=eff, failed=failed, tracker=self,
                         frame_seconds=seconds)

    def finalize(self):
        """At stream end inside an update cycle, commit one more basis from the
        trailing fills of that cycle if at least ``r`` new frames arrived since
        the last update.  Returns the event or None."""
        st, p = self.state, self.params
        if st.phase != UPDATE or st.t - max(st.last_update, st.s - 1) < p.r:
            return None
        use = st.buf_t >= st.s
        P, _ = r_svd(st.buf_fill[:, use], p.r, seed=p.svd_seed)
        st.last_update = st.t
        self._commit(st.t, P)
        ev = Event(st.t, "final-update", st.j, st.k)
        st.events.append(ev)
        return ev

    def cycle_bases(self):
        """Per-cycle ``(start, basis)``: the frozen basis for completed cycles,
        otherwise the newest basis committed inside the cycle (or the previous
        cycle's basis if none was)."""
        st = self.state
        out = []
        for idx, s in enumerate(st.cycle_starts):
            if idx < len(st.frozen):
                out.append((s, st.frozen[idx]))
            elif st.last_update >= s:
                out.append((s, st.basis))
            else:
                out.append((s, out[-1][1] if out else st.basis))
        return out

    # ------------------------------------------------------------ checkpoint
    def save(self, directory):
        save_checkpoint(self, directory)

    @classmethod
    def load(cls, directory):
        return load_checkpoint(directory)


@dataclass
class RunResult:
    L_hat: np.ndarray
    effective_mask: np.ndarray
    failed: np.ndarray
    tracker: NorstMiss
    frame_seconds: np.ndarray = None

    @property
    def events(self):
        return self.tracker.state.events

    @property
    def detections(self):
        return list(self.tracker.state.detections)

    @property
    def history(self):
        return self.tracker.history


def step(tracker, y, T):
    """Advance `tracker` by one frame with missing index set `T`; returns the
    :class:`FrameOutput` (the tracker's state is updated in place)."""
    return tracker.step(y, T)


def detect_change(fills, P_prev, omega_evals, alpha):
    """Residual-energy test against the frozen basis.

    Returns ``(detected, statistic)`` with statistic ``lambda_max(B B')`` for
    ``B = (I - P P') fills``.
    """
    B = fills - P_prev @ (P_prev.T @ fills)
    stat = lambda_max_sym(B.T @ B)
    return bool(stat >= alpha * omega_evals), float(stat)


def subspace_update(fills, r, seed=0):
    """Top-`r` left singular basis of the window of fills."""
    P, _ = r_svd(fills, r, seed=seed)
    return P


def smooth(Y, missing, cycles, params, d=None, chunk=500):
    """Re-fill every frame against the union of adjacent cycle bases.

    Cycle ``j`` (start ``s_j``) ends at ``e_j = s_j + K*alpha - 1``.  Frames
    ``e_{j-1}+1 .. e_j`` are re-filled against ``union(B_{j-1}, B_j)`` (just
    ``B_0`` for the first cycle) and frames after the last cycle's end reuse
    its basis.
    """
    Y = np.asarray(Y, dtype=float)
    missing = np.asarray(missing, dtype=bool)
    n, d = Y.shape
    if not cycles:
        raise ValueError("need at least one cycle")
    span = params.K * params.alpha
    out = np.where(missing, 0.0, Y)
    lo = 1
    for idx, (s, B) in enumerate(cycles):
        last = idx == len(cycles) - 1
        hi = d if last else min(d, s + span - 1)
        if hi < lo:
            continue
        P = B if idx == 0 else union_basis(cycles[idx - 1][1], B)
        for a in range(lo, hi + 1, chunk):
            b = min(hi, a + chunk - 1)
            ell, _, _ = project_ls_fill(out[:, a - 1:b], missing[:, a - 1:b], P,
                                        tol=params.cgls_tol, max_iter=params.cgls_max_iter,
                                        cond_limit=params.cond_limit, raise_on_fail=False,
                                        solver=params.ls_solver)
            out[:, a - 1:b] = ell
        lo = hi + 1
    return out


def complete_matrix(Y, missing, params, variant=None, tracker_cls=None, **tracker_kw):
    """Track the whole stream, then smooth.  Returns ``(L_hat, RunResult)``."""
    Y = np.asarray(Y, dtype=float)
    cls = tracker_cls or NorstMiss
    tr = cls(Y.shape[0], params, variant=variant, **tracker_kw)
    res = tr.run(Y, missing)
    tr.finalize()
    L_hat = smooth(Y, res.effective_mask, tr.cycle_bases(), params)
    return L_hat, res


def check_budget(missing, r, override=False):
    """Refuse (or warn about) frames with at least ``n - r`` missing entries."""
    missing = np.asarray(missing, dtype=bool)
    n = missing.shape[0]
    counts = missing.sum(axis=0)
    bad = np.flatnonzero(counts >= n - r)
    if bad.size == 0:
        return
    msg = (f"{bad.size} frame(s) have at least n - r = {n - r} missing entries "
           f"(first: frame {bad[0] + 1} with {counts[bad[0]]})")
    if not override:
        raise BudgetExceeded(msg)
    warnings.warn(msg, BudgetWarning, stacklevel=2)


# ----------------------------------------------------------------- checkpoints

def _write_kv(path, items):
    with open(path, "w") as fh:
        for k, v in items:
            fh.write(f"{k},{'' if v is None else repr(v)}\n")


def _read_kv(path):
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            key, sep, val = line.partition(",")
            if not sep:
                raise ParseError("expected key,value", path, lineno)
            out[key] = val
    return out


def _num(text, kind):
    if text == "":
        return None
    return kind(text)


def _save_mat(path, M):
    M = np.asarray(M, dtype=float)
    with open(path, "w") as fh:
        fh.write(f"{M.shape[0]},{M.shape[1]}\n")
    if M.size:
        with open(path, "a") as fh:
            for row in M.T:
                fh.write(",".join("%.17g" % v for v in row) + "\n")


def _load_mat(path):
    with open(path) as fh:
        head = fh.readline().strip().split(",")
        rows_, cols_ = int(head[0]), int(head[1])
        data = [[float(x) for x in line.strip().split(",")] for line in fh if line.strip()]
    if cols_ == 0:
        return np.zeros((rows_, 0))
    M = np.array(data, dtype=float).T
    if M.shape != (rows_, cols_):
        raise ParseError(f"expected {rows_}x{cols_} matrix, found {M.shape}", path)
    # C order, so BLAS sees the same layout as before saving
    return np.ascontiguousarray(M)


def save_checkpoint(tracker, directory):
    """Write tracker parameters and state as a directory of CSV files.

    Floats are written with 17 significant digits so loading restores every
    bit.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    p, v, st = tracker.params, tracker.variant, tracker.state
    _write_kv(d / "params.csv", [(f.name, getattr(p, f.name)) for f in fields(p)]
              + [("variant_mode", v.mode), ("variant_beta", v.beta), ("variant_R", v.R),
                 ("keep_history", tracker.keep_history)])
    _write_kv(d / "state.csv", [
        ("n", st.n), ("phase", st.phase), ("j", st.j), ("k", st.k), ("t", st.t), ("s", st.s),
        ("t_fin", st.t_fin), ("last_update", st.last_update),
        ("lambda_minus_hat", st.lambda_minus_hat), ("omega", st.omega),
        ("n_frozen", len(st.frozen)), ("n_history", len(tracker.history)),
    ])
    with open(d / "times.csv", "w") as fh:
        for name in ("detections", "fin_times", "cycle_starts"):
            fh.write(name + "," + ",".join(str(x) for x in getattr(st, name)) + "\n")
        fh.write("buf_t," + ",".join(str(int(x)) for x in st.buf_t) + "\n")
        fh.write("history_t," + ",".join(str(t) for t, _ in tracker.history) + "\n")
    with open(d / "events.csv", "w") as fh:
        fh.write("t,kind,j,k,statistic\n")
        for e in st.events:
            fh.write(f"{e.t},{e.kind},{e.j},{e.k},{e.statistic!r}\n")
    _save_mat(d / "basis.csv", st.basis)
    _save_mat(d / "buffer_fill.csv", st.buf_fill)
    _save_mat(d / "buffer_y.csv", st.buf_y)
    _save_mat(d / "buffer_mask.csv", st.buf_mask.astype(float))
    for i, B in enumerate(st.frozen):
        _save_mat(d / f"frozen_{i}.csv", B)
    for i, (_, B) in enumerate(tracker.history):
        _save_mat(d / f"history_{i}.csv", B)


def load_checkpoint(directory):
    d = Path(directory)
    if not (d / "params.csv").exists():
        raise ParseError("not a checkpoint directory (params.csv missing)", d)
    kv = _read_kv(d / "params.csv")
    kinds = {"r": int, "K": int, "alpha": int, "omega_evals": float, "omega_scale": float,
             "cgls_tol": float, "cgls_max_iter": int, "svd_seed": int, "cond_limit": float}
    params = TrackerParams(**{k: _num(kv[k], f) for k, f in kinds.items()},
                           ls_solver=kv["ls_solver"].strip("'"))
    variant = VariantParams(kv["variant_mode"].strip("'"), _num(kv["variant_beta"], int),
                            int(kv["variant_R"]))
    sv = _read_kv(d / "state.csv")
    n = int(sv["n"])
    tr = NorstMiss(n, params, variant, keep_history=kv["keep_history"] == "True")
    st = tr.state
    st.phase = sv["phase"].strip("'")
    for key in ("j", "k", "t", "s", "last_update"):
        setattr(st, key, int(sv[key]))
    st.t_fin = _num(sv["t_fin"], int)
    st.lambda_minus_hat = _num(sv["lambda_minus_hat"], float)
    st.omega = _num(sv["omega"], float)
    times = {}
    with open(d / "times.csv") as fh:
        for line in fh:
            name, _, rest = line.rstrip("\n").partition(",")
            times[name] = [int(x) for x in rest.split(",") if x]
    st.detections = times["detections"]
    st.fin_times = times["fin_times"]
    st.cycle_starts = times["cycle_starts"]
    st.buf_t = np.array(times["buf_t"], dtype=np.int64)
    st.events = []
    rows = _read_rows(d / "events.csv", conv=str)[1:]
    for t, kind, j, k, stat in rows:
        st.events.append(Event(int(t), kind, int(j), int(k), float(stat)))
    st.basis = _load_mat(d / "basis.csv")
    st.buf_fill = _load_mat(d / "buffer_fill.csv")
    st.buf_y = _load_mat(d / "buffer_y.csv")
    st.buf_mask = _load_mat(d / "buffer_mask.csv").astype(bool)
    st.frozen = [_load_mat(d / f"frozen_{i}.csv") for i in range(int(sv["n_frozen"]))]
    tr.history = [(t, _load_mat(d / f"history_{i}.csv"))
                  for i, t in enumerate(times["history_t"])]
    return tr


__all__ = [
    "TrackerParams", "TrackerState", "FrameOutput", "Event", "NorstMiss", "RunResult",
    "step", "detect_change", "subspace_update", "smooth", "complete_matrix", "check_budget",
    "save_checkpoint", "load_checkpoint",
]
