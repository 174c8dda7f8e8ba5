import numpy as np
import pytest

from conftest import make_stream
from norstmiss.exceptions import DimensionMismatch, ZeroMatrix
from norstmiss.metrics import (SERIES_HEADER, ErrorSeries, RunReport, detection_report,
                               rel_frobenius, samples_to_threshold, steady_ms_per_frame,
                               subspace_error_series, update_errors)
from norstmiss.tracker import NorstMiss, TrackerParams


def test_rel_frobenius_trivial():
    L = np.arange(6.0).reshape(2, 3)
    assert rel_frobenius(L, L) == 0.0
    assert rel_frobenius(np.zeros_like(L), L) == 1.0
    assert rel_frobenius(2 * L, L) == pytest.approx(1.0)
    with pytest.raises(ZeroMatrix):
        rel_frobenius(L, np.zeros_like(L))
    with pytest.raises(DimensionMismatch):
        rel_frobenius(L, L.T)


def test_samples_to_threshold_already_below():
    assert samples_to_threshold(np.full(300, 1e-14), 1e-13, 60) == 60


def test_samples_to_threshold_crossing():
    s = np.r_[np.ones(100), np.full(200, 1e-14)]
    assert samples_to_threshold(s, 1e-13, 60) == 160


def test_samples_to_threshold_needs_sustained_run():
    s = np.r_[np.ones(10), np.full(30, 1e-14), np.ones(5), np.full(60, 1e-14)]
    assert samples_to_threshold(s, 1e-13, 60) == 10 + 30 + 5 + 60
    assert samples_to_threshold(s[:80], 1e-13, 60) is None
    assert samples_to_threshold(np.ones(5), 1e-13, 60) is None
    with pytest.raises(ValueError):
        samples_to_threshold(s, 0.0, 60)


def test_detection_report_cases():
    rep = detection_report([850, 2000, 3100], [801, 1601, 3001], 100)
    assert rep.matched == [(801, 850, 49), (1601, 2000, 399), (3001, 3100, 99)]
    assert rep.delays == [49, 399, 99]
    assert not rep.misses and not rep.false_alarms
    rep = detection_report([500, 850, 870], [801, 1601], 100)
    assert rep.false_alarms == [500, 870]
    assert rep.misses == [1601]
    # a detection far beyond the window is a false alarm, and the change is missed
    rep = detection_report([1300], [801], 100)
    assert rep.false_alarms == [1300] and rep.misses == [801]


def test_error_series_with_and_without_updates(small_change):
    tr, st = small_change
    t = NorstMiss(tr.n, TrackerParams(r=3, K=6, alpha=20, omega_evals=1e-3))
    res = t.run(st.Y, st.missing)
    s = subspace_error_series(t.history, tr, L_hat=res.L_hat, events=t.state.events)
    assert len(s) == st.Y.shape[1]
    # before the first update the basis is zero
    assert np.all(s.sin_theta[:19] == 1.0) and s.sin_theta[19] < 1
    # after the change and before detection the old basis meets the new subspace
    det = t.state.detections[0]
    assert s.at(det) > 0.1 > s.at(450)
    assert s.event[19] == "update" and s.event[det - 1] == "detect"
    assert s.j[det - 1] == 1 and s.k[det - 1] == 0 and s.j[0] == 0
    ue = update_errors(t.history, tr, t.state.events)
    assert len(ue) == sum(e.kind == "update" for e in t.state.events)
    assert ue[0][0] == 20 and ue[0][3] == pytest.approx(s.at(20))


def test_error_series_csv_round_trip(tmp_path, small_static):
    tr, st = small_static
    t = NorstMiss(tr.n, TrackerParams(r=3, K=4, alpha=20, omega_evals=1e-3))
    res = t.run(st.Y, st.missing)
    s = subspace_error_series(t.history, tr, L_hat=res.L_hat, events=t.state.events)
    s.to_csv(tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == ",".join(SERIES_HEADER)
    s2 = ErrorSeries.from_csv(tmp_path / "s.csv")
    assert np.array_equal(s2.sin_theta, s.sin_theta) and s2.event == s.event
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        ErrorSeries.from_csv(tmp_path / "bad.csv")


def test_error_series_rejects_wrong_dimension(small_static):
    tr, _ = small_static
    with pytest.raises(DimensionMismatch):
        subspace_error_series([(0, np.zeros((5, 3)))], tr)


def test_run_report_rows(tmp_path):
    rep = RunReport(rel_frobenius=1e-3, rel_frobenius_online=2e-3, samples={1e-13: None, 1e-8: 900},
                    detection=detection_report([850], [801], 100), ms_per_frame=3.0,
                    final_sin_theta=1e-9)
    rows = dict(rep.rows())
    assert rows["samples_to_1e-13"] == "never" and rows["samples_to_1e-08"] == 900
    assert rows["delay_at_801"] == 49 and "ms_per_frame" not in rows
    rep.to_csv(tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "metric,value"


def test_steady_ms_per_frame():
    s = np.r_[np.full(60, 1.0), np.full(100, 0.002)]
    assert steady_ms_per_frame(s, 60) == pytest.approx(2.0)


def test_metrics_on_generated_noise_floor():
    tr, st = make_stream(noise=1e-3, d=400)
    t = NorstMiss(tr.n, TrackerParams(r=3, K=8, alpha=20, omega_evals=1e-3))
    t.run(st.Y, st.missing)
    s = subspace_error_series(t.history, tr)
    # with noise the error levels off well above machine precision
    assert 1e-8 < s.sin_theta[-1] < 1e-2
    assert samples_to_threshold(s, 1e-13, 20) is None
