import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from norstmiss import datagen as D
from norstmiss.exceptions import ParseError
from norstmiss.linalg import is_orthonormal, sin_theta_max


def test_rng_streams_independent_and_reproducible():
    a = D.rng_for(5, D.STREAM_COEFFS).random(3)
    b = D.rng_for(5, D.STREAM_COEFFS).random(3)
    c = D.rng_for(5, D.STREAM_MISSING).random(3)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


# ------------------------------------------------------------------ subspaces

def test_subspaces_gamma_zero_identical():
    Ps = D.gen_subspaces(50, 3, 2, 0.0, seed=1)
    assert len(Ps) == 3
    assert all(np.array_equal(P, Ps[0]) for P in Ps)
    assert sin_theta_max(Ps[2], Ps[0]) <= 1e-14


def test_subspaces_tiny_gamma_continuity():
    Ps = D.gen_subspaces(100, 5, 1, 1e-9, seed=2)
    assert sin_theta_max(Ps[1], Ps[0]) <= 1e-6


def test_subspaces_large_gamma_big_change():
    for seed in range(3):
        Ps = D.gen_subspaces(1000, 30, 1, 100.0, seed=seed)
        assert is_orthonormal(Ps[1])
        assert sin_theta_max(Ps[1], Ps[0]) > 0.9


# --------------------------------------------------------------- coefficients

def test_coefficients_f1_r1_bounded():
    A = D.gen_coefficients(D.CoefficientSpec(1, 1.0), 500, seed=0)
    assert np.all(np.abs(A) <= 1)


def test_coefficients_half_widths():
    spec = D.CoefficientSpec(30, 100.0)
    q = spec.half_widths()
    assert q[0] == pytest.approx(10.0) and q[-1] == 1.0
    A = D.gen_coefficients(spec, 2000, seed=0)
    assert np.max(np.abs(A)) <= 10
    assert spec.lambda_minus == pytest.approx(1 / 3)


def test_coefficients_empirical_condition_number():
    spec = D.CoefficientSpec(30, 100.0)
    A = D.gen_coefficients(spec, 10000, seed=3)
    ev = np.linalg.eigvalsh(A @ A.T / A.shape[1])
    assert ev[-1] / ev[0] == pytest.approx(100.0, rel=0.15)


def test_coefficients_time_varying_alternates():
    spec = D.CoefficientSpec(4, 100.0, time_varying=True)
    A = D.gen_coefficients(spec, 4000, seed=4)
    assert A.shape == (4, 4000)
    # last coordinate keeps unit half-width, the others differ between parities
    assert np.max(np.abs(A[-1])) <= 1
    lam = spec.lambda_minus
    q = spec.half_widths()
    # frame t = 1 is column 0; even frames are narrowed
    assert np.max(np.abs(A[0, 1::2])) <= q[0] - lam / 2 + 1e-12
    assert np.max(np.abs(A[0, 0::2])) > q[0] - lam / 2


# -------------------------------------------------------------------- supports

def test_bernoulli_rho_one_empty():
    assert not D.gen_bernoulli_supports(30, 40, 1.0, seed=0).any()


def test_bernoulli_counts():
    M = D.gen_bernoulli_supports(1000, 4000, 0.9, seed=0)
    counts = M.sum(axis=0)
    assert abs(counts.mean() - 100) <= 10
    sd = np.sqrt(0.1 * 0.9 / M.size)
    assert abs(M.mean() - 0.1) <= 3 * sd
    # per-row long-run fraction: a 3-sigma band holds for all but a few rows
    row = M.mean(axis=1)
    inside = np.abs(row - 0.1) <= 3 * np.sqrt(0.09 / 4000)
    assert inside.mean() >= 0.99


def test_moving_object_tiling_b0_one():
    M = D.gen_moving_object_supports(100, 10, 20, 1.0, seed=0, start=0)
    # five consecutive frames tile the rows exactly once
    assert np.array_equal(M[:, :5].sum(axis=1), np.ones(100))


def test_moving_object_fraction_and_occupancy():
    n, s = 1000, 200
    M = D.gen_moving_object_supports(n, 400, s, 0.05, seed=1)
    assert np.all(M.sum(axis=0) == s)
    assert M.mean() == pytest.approx(0.2)
    # each stay of a row inside the block lasts ceil(1/b0) = 20 frames
    row = M[0].astype(int)
    edges = np.flatnonzero(np.diff(np.r_[0, row, 0]))
    runs = edges[1::2] - edges[0::2]
    inner = runs[(edges[0::2] > 0) & (edges[1::2] < 400)]
    assert inner.size and np.all(inner == 20)


@settings(max_examples=30, deadline=None)
@given(st.integers(5, 60), st.integers(1, 4), st.floats(0.05, 1.0), st.integers(0, 1000))
def test_moving_object_contiguous(n, s, b0, seed):
    s = min(s, n - 1)
    M = D.gen_moving_object_supports(n, 30, s, b0, seed=seed)
    for t in range(30):
        idx = np.flatnonzero(M[:, t])
        assert idx.size == s
        # contiguous modulo n: rolling to the block start gives 0..s-1
        start = [i for i in idx if (i - 1) % n not in idx][0]
        assert sorted((idx - start) % n) == list(range(s))


# -------------------------------------------------------------------- outliers

def test_outliers_equal_magnitudes():
    M = D.gen_bernoulli_supports(100, 50, 0.9, seed=0)
    X, S = D.gen_outliers(100, 50, D.OutlierSpec(5, 0.2, 10, 10), M, seed=0)
    assert np.all(X[S] == 10) and np.all(X[~S] == 0)


def test_outliers_rmc_fraction_and_disjoint():
    n, d = 1000, 300
    M = D.gen_bernoulli_supports(n, d, 0.9, seed=2)
    X, S = D.gen_outliers(n, d, D.OutlierSpec(50, 0.05, 10, 25), M, seed=2)
    assert np.all(S.sum(axis=0) == 50)
    assert S.mean() == pytest.approx(0.05)
    assert not (S & M).any()
    assert X[S].min() >= 10 and X[S].max() <= 25


# --------------------------------------------------------------------- streams

def test_clean_columns_match_model():
    tr = D.gen_truth(80, 300, 4, 10.0, J=2, change_times=[100, 200], gamma=1.0, seed=3)
    for t in (1, 99, 100, 150, 200, 300):
        np.testing.assert_allclose(tr.clean[:, t - 1], tr.basis_at(t) @ tr.coefficients[:, t - 1],
                                   atol=1e-12)
    assert tr.epoch(99) == 0 and tr.epoch(100) == 1 and tr.epoch(300) == 2


def test_assemble_no_missing_no_noise_exact():
    tr = D.gen_truth(40, 50, 3, seed=0)
    st_ = D.assemble_stream(tr, np.zeros((40, 50), bool))
    np.testing.assert_array_equal(st_.Y, tr.clean)


def test_assemble_noise_std_and_masking():
    tr = D.gen_truth(200, 2000, 3, 100.0, seed=0)
    lam = D.CoefficientSpec(3, 100.0).lambda_minus
    std = 3e-3 * np.sqrt(lam)
    M = D.gen_bernoulli_supports(200, 2000, 0.9, seed=0)
    s = D.assemble_stream(tr, M, noise_std=std, seed=0)
    resid = (s.Y - tr.clean)[~M]
    assert resid.std() == pytest.approx(std, rel=0.02)
    assert np.all(s.Y[M] == 0)
    again = np.where(M, 0.0, s.Y)
    np.testing.assert_array_equal(again, s.Y)


# --------------------------------------------------------------- miss fractions

def _miss_frac_bruteforce(M, alpha):
    n, d = M.shape
    col = max(M[:, t].sum() / n for t in range(d))
    row = 0.0
    for i in range(n):
        for t0 in range(max(d - alpha + 1, 1)):
            row = max(row, M[i, t0:t0 + alpha].sum() / alpha)
    return col, row


def test_miss_frac_trivial():
    assert D.miss_frac_stats(np.zeros((5, 10), bool), 3) == (0.0, 0.0)
    M = np.zeros((4, 6), bool)
    M[:, 2] = True
    assert D.miss_frac_stats(M, 6) == pytest.approx((1.0, 1 / 6))


def test_miss_frac_matches_bruteforce():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n, d = rng.integers(2, 50), rng.integers(1, 200)
        alpha = int(rng.integers(1, d + 1))
        M = rng.random((n, d)) < rng.uniform(0, 0.5)
        assert D.miss_frac_stats(M, alpha) == pytest.approx(_miss_frac_bruteforce(M, alpha), abs=1e-12)


def test_miss_frac_bernoulli_rows():
    M = D.gen_bernoulli_supports(1000, 600, 0.9, seed=5)
    col, row = D.miss_frac_stats(M, 60)
    assert 0.1 < col < 0.16
    # worst 60-frame window over 1000 rows is a binomial tail
    assert 0.2 < row < 0.45


# -------------------------------------------------------------------------- I/O

def test_dense_csv_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    Y = rng.standard_normal((7, 9))
    M = rng.random((7, 9)) < 0.3
    D.write_dense_csv(tmp_path / "y.csv", Y, M)
    Y2, M2 = D.read_dense_csv(tmp_path / "y.csv")
    np.testing.assert_array_equal(M2, M)
    np.testing.assert_array_equal(Y2, np.where(M, 0.0, Y))


def test_pair_csv_bit_exact(tmp_path):
    rng = np.random.default_rng(2)
    Y = rng.standard_normal((6, 8)) * 1e3
    M = rng.random((6, 8)) < 0.4
    M[:, 0] = False
    D.write_pair_csv(tmp_path / "v.csv", tmp_path / "m.csv", Y, M)
    Y2, M2 = D.read_pair_csv(tmp_path / "v.csv", tmp_path / "m.csv")
    np.testing.assert_array_equal(M2, M)
    assert np.array_equal(Y2, np.where(M, 0.0, Y))
    assert Y2.tobytes() == np.where(M, 0.0, Y).tobytes()


def test_malformed_csv_names_line(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("1,2,3\n4,5\n")
    with pytest.raises(ParseError, match="line 2"):
        D.read_dense_csv(p)
    p.write_text("1,2,3\n4,x,6\n")
    with pytest.raises(ParseError, match="line 2"):
        D.read_dense_csv(p)


def test_truth_round_trip(tmp_path):
    tr = D.gen_truth(20, 30, 2, J=1, change_times=[15], gamma=1.0, seed=0)
    D.save_truth(tmp_path / "t", tr)
    tr2 = D.load_truth(tmp_path / "t")
    assert tr2.change_times == [15]
    np.testing.assert_array_equal(tr2.clean, tr.clean)
    np.testing.assert_array_equal(tr2.subspaces[1], tr.subspaces[1])
