import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdcconv.collocation import QuadratureTables
from sdcconv.diagnostics import (
    ErrorSeries, InsufficientDataError, ReferenceKind, contraction_slope, error_inf,
    fit_order, fit_order_details, fourier_tail, last_node_error, run_convergence_study,
)
from sdcconv.problems import Heat1D, LinearSystem


def naive_dft(x):
    n = x.size
    idx = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(idx, idx) / n) @ x / np.sqrt(n)


DTS = 0.1 * 2.0 ** -np.arange(6)


def test_error_inf():
    U = np.ones((3, 4))
    assert error_inf(U, U) == 0.0
    V = U.copy()
    V[1, 2] += 1e-3
    assert error_inf(V, U) == pytest.approx(1e-3)
    rng = np.random.default_rng(0)
    A, B = rng.standard_normal((2, 5, 7))
    assert error_inf(A, B) == max(abs(a - b) for a, b in zip(A.ravel(), B.ravel()))
    with pytest.raises(ValueError):
        error_inf(A, B[:3])


def test_last_node_error():
    U = np.zeros((3, 4))
    assert last_node_error(U, np.zeros(4)) == 0.0
    U[-1, 0] = 2e-5
    assert last_node_error(U, np.zeros(4)) == pytest.approx(2e-5)


def test_fit_order_synthetic():
    assert fit_order(zip(DTS, 7.0 * DTS**3)) == pytest.approx(3.0, abs=1e-10)
    assert fit_order(zip(DTS, np.full(6, 0.3))) == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(q=st.floats(0.0, 8.0), C=st.floats(1e-3, 1e3))
def test_fit_order_recovers_exponent(q, C):
    errs = C * DTS**q
    assert fit_order(zip(DTS, errs), floor=0.0) == pytest.approx(q, abs=1e-8)


def test_fit_order_drops_points_below_floor():
    errs = DTS**6
    fit = fit_order_details(zip(DTS, errs), floor=1e-11)
    assert len(fit.used) == 3 and len(fit.excluded) == 3
    assert fit.order == pytest.approx(6.0)
    with pytest.raises(InsufficientDataError):
        fit_order(zip(DTS, errs), floor=1e-9)
    with pytest.raises(InsufficientDataError):
        fit_order([(0.1, 1.0), (0.05, 0.5)])


def test_contraction_slope_synthetic():
    k = np.arange(4)
    s2 = ErrorSeries(DTS, DTS[:, None] ** (2 * k), ReferenceKind.COLLOCATION)
    s1 = ErrorSeries(DTS, DTS[:, None] ** k, ReferenceKind.COLLOCATION)
    for j in (1, 2, 3):
        assert contraction_slope(s2, j, floor=0.0) == pytest.approx(2.0, abs=1e-10)
        assert contraction_slope(s1, j, floor=0.0) == pytest.approx(1.0, abs=1e-10)
    with pytest.raises(ValueError):
        contraction_slope(s1, 4)


def test_contraction_slope_below_floor():
    errs = np.column_stack([np.full(6, 1e-15), np.full(6, 1e-16)])
    with pytest.raises(ZeroDivisionError):
        contraction_slope(ErrorSeries(DTS, errs, ReferenceKind.COLLOCATION), 1)


def test_error_series_invariants():
    with pytest.raises(ValueError):
        ErrorSeries(DTS[::-1], np.ones((6, 2)), ReferenceKind.EXACT)
    with pytest.raises(ValueError):
        ErrorSeries(DTS, -np.ones((6, 2)), ReferenceKind.EXACT)
    with pytest.raises(ValueError):
        ErrorSeries(DTS, np.ones((5, 2)), ReferenceKind.EXACT)


def test_fourier_tail_pure_modes():
    N = 32
    x = np.arange(N)
    low = np.cos(2 * np.pi * 3 * x / N)
    assert fourier_tail(low[None, :], 10, symmetric=True).remainders[0] < 1e-13
    high = np.exp(2j * np.pi * 12 * x / N)
    tail = fourier_tail(high[None, :], 10)
    assert tail.remainders[0] == pytest.approx(np.sqrt(N), rel=1e-12)
    assert tail.remainders[0] == pytest.approx(np.abs(naive_dft(high))[10:].sum(), rel=1e-12)


def test_fourier_tail_single_coefficient():
    N = 16
    coeffs = np.zeros(N, dtype=complex)
    coeffs[11] = 0.7
    err = np.fft.ifft(coeffs, norm="ortho")
    t = fourier_tail(err[None, :], 5)
    assert t.remainders[0] == pytest.approx(0.7, rel=1e-12)
    assert fourier_tail(err[None, :], 12).remainders[0] < 1e-14


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), N=st.integers(4, 40), M=st.integers(1, 4))
def test_fourier_tail_against_naive_dft_and_parseval(seed, N, M):
    err = np.random.default_rng(seed).standard_normal((M, N))
    N0 = 1 + seed % N
    tail = fourier_tail(err, N0)
    for m in range(M):
        c = naive_dft(err[m])
        assert tail.remainders[m] == pytest.approx(np.abs(c[N0:]).sum(), rel=1e-10)
        assert np.sum(np.abs(c) ** 2) == pytest.approx(np.sum(err[m] ** 2), rel=1e-12)
    prev = fourier_tail(err, 1).remainders
    for n0 in range(2, N + 1):
        cur = fourier_tail(err, n0).remainders
        assert np.all(cur <= prev + 1e-12)
        prev = cur


def test_fourier_tail_2d_and_range():
    err = np.random.default_rng(1).standard_normal((2, 64))
    t = fourier_tail(err, 3, grid_shape=(8, 8))
    assert t.heuristic and t.remainders.shape == (2,)
    with pytest.raises(ValueError):
        fourier_tail(err, 0)
    with pytest.raises(ValueError):
        fourier_tail(err, 65)
    with pytest.raises(ValueError):
        fourier_tail(err, 3, grid_shape=(8, 7))


def test_study_with_zero_rhs_has_zero_errors():
    prob = LinearSystem.zero([1.0, 2.0, 3.0])
    res = run_convergence_study("SDC", [0.4, 0.2, 0.1], 3, problem=prob,
                                tables=QuadratureTables.build(3), guess="random", seed=5)
    for s in res.series.values():
        assert np.all(s.errors[:, 1:] == 0.0)


def test_study_is_deterministic_and_job_independent():
    prob = Heat1D(N=31)
    T = QuadratureTables.build(3)
    kw = dict(problem=prob, tables=T, guess="random", seed=11)
    a = run_convergence_study("SDC", [0.02, 0.01, 0.005], 3, **kw)
    b = run_convergence_study("SDC", [0.02, 0.01, 0.005], 3, jobs=2, **kw)
    for kind in ReferenceKind:
        np.testing.assert_array_equal(a.series[kind].errors, b.series[kind].errors)
    assert [(r.dt, r.k, r.err_coll) for r in a.rows()] == \
        [(r.dt, r.k, r.err_coll) for r in b.rows()]


def test_study_records_divergence_per_cell():
    prob = LinearSystem.scalar(-50.0)
    T = QuadratureTables.build(5, "LeftRectangle")
    res = run_convergence_study("SDC", [1.0, 0.01, 0.005, 0.0025], 12, problem=prob,
                                tables=T)
    assert 1.0 in res.failures
    assert np.all(np.isnan(res.series[ReferenceKind.COLLOCATION].errors[0]))
    assert np.all(np.isfinite(res.series[ReferenceKind.COLLOCATION].errors[1:]))


def test_study_multistep_and_t_end():
    prob = LinearSystem.scalar(-1.0)
    T = QuadratureTables.build(3)
    res = run_convergence_study("SDC", [0.25, 0.125, 0.0625], 2, problem=prob, tables=T,
                                t_end=1.0)
    assert res.orders[1] == pytest.approx(1.0, abs=0.3)
    with pytest.raises(ValueError):
        run_convergence_study("SDC", [0.3], 2, problem=prob, tables=T, t_end=1.0)
    with pytest.raises(ValueError):
        run_convergence_study("MLSDC", [0.1], 2)
