import mpmath
import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st

from sdcconv.collocation import (
    FactorizationError, PreconditionerKind, QuadratureTables, collocation_residual,
    compute_nodes, compute_Q, compute_QDelta, doolittle_lu, lagrange_matrix,
)
from sdcconv.problems import Heat1D, LinearSystem


def mp_radau_nodes(M, dps=40):
    """Right Radau points on (0, 1] as roots of P_{M-1} - P_M, in high precision."""
    with mpmath.workdps(dps):
        x = sympy.Symbol("x")
        poly = sympy.Poly(sympy.legendre(M - 1, x) - sympy.legendre(M, x), x)
        coeffs = [mpmath.mpf(sympy.Rational(c).p) / sympy.Rational(c).q
                  for c in poly.all_coeffs()]
        roots = mpmath.polyroots(coeffs, maxsteps=200, extraprec=200)
        return sorted(float((mpmath.re(r) + 1) / 2) for r in roots)


@pytest.mark.parametrize("M", range(1, 11))
def test_nodes_match_root_oracle(M):
    np.testing.assert_allclose(compute_nodes(M), mp_radau_nodes(M), rtol=0, atol=1e-13)


def test_known_nodes():
    np.testing.assert_allclose(compute_nodes(1), [1.0])
    np.testing.assert_allclose(compute_nodes(2), [1 / 3, 1.0], atol=1e-15)
    s6 = np.sqrt(6.0)
    np.testing.assert_allclose(compute_nodes(3), [(4 - s6) / 10, (4 + s6) / 10, 1.0],
                               atol=1e-15)


@pytest.mark.parametrize("M", [0, -1, 2.5])
def test_bad_node_count(M):
    with pytest.raises(ValueError):
        compute_nodes(M)


def sympy_Q(nodes):
    t = sympy.Symbol("t")
    M = len(nodes)
    Q = sympy.zeros(M, M)
    for j in range(M):
        lj = sympy.Integer(1)
        for i in range(M):
            if i != j:
                lj *= (t - nodes[i]) / (nodes[j] - nodes[i])
        for m in range(M):
            Q[m, j] = sympy.integrate(lj, (t, 0, nodes[m]))
    return Q


def test_Q_two_nodes_exact():
    Q = compute_Q(compute_nodes(2))
    np.testing.assert_allclose(Q, [[5 / 12, -1 / 12], [3 / 4, 1 / 4]], atol=1e-15)


def test_Q_three_nodes_symbolic():
    s6 = sympy.sqrt(6)
    nodes = [(4 - s6) / 10, (4 + s6) / 10, sympy.Integer(1)]
    ref = np.array(sympy_Q(nodes).evalf(30), dtype=float)
    np.testing.assert_allclose(compute_Q(compute_nodes(3)), ref, atol=1e-14)


@pytest.mark.parametrize("M", [2, 3, 5, 8])
def test_Q_integrates_monomials(M):
    tau = compute_nodes(M)
    Q = compute_Q(tau)
    for d in range(M):
        assert np.max(np.abs(Q @ tau**d - tau**(d + 1) / (d + 1))) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(M=st.integers(1, 12), d=st.integers(0, 11))
def test_Q_exact_for_low_degree(M, d):
    d = d % M
    tau = compute_nodes(M)
    np.testing.assert_allclose(compute_Q(tau) @ tau**d, tau**(d + 1) / (d + 1), atol=1e-12)


def test_lagrange_matrix_properties():
    nodes = compute_nodes(5)
    np.testing.assert_allclose(lagrange_matrix(nodes, nodes), np.eye(5), atol=0)
    pts = np.linspace(0, 1, 17)
    L = lagrange_matrix(nodes, pts)
    np.testing.assert_allclose(L.sum(axis=1), 1.0, atol=1e-13)
    # exact for polynomials of degree < M
    np.testing.assert_allclose(L @ nodes**4, pts**4, atol=1e-13)


@pytest.mark.parametrize("bad", [[0.5, 0.2], [0.0, 1.0], [0.5, 1.5], []])
def test_Q_rejects_bad_nodes(bad):
    with pytest.raises(ValueError):
        compute_Q(bad)


def test_right_rectangle():
    tau = compute_nodes(3)
    QD = compute_QDelta("RightRectangle", tau)
    d = np.diff(tau, prepend=0.0)
    np.testing.assert_allclose(QD, [[d[0], 0, 0], [d[0], d[1], 0], [d[0], d[1], d[2]]])


def test_left_rectangle():
    QD = compute_QDelta(PreconditionerKind.LEFT_RECTANGLE, compute_nodes(2))
    np.testing.assert_allclose(QD, [[0, 0], [2 / 3, 0]], atol=1e-15)
    QD = compute_QDelta(PreconditionerKind.LEFT_RECTANGLE, compute_nodes(5))
    assert np.all(np.triu(QD) == 0)


@pytest.mark.parametrize("M", [2, 3, 5])
def test_lu_trick_matches_sympy(M):
    Q = compute_Q(compute_nodes(M))
    L, U, _ = sympy.Matrix(Q.T).LUdecomposition()
    ref = np.array(U.T, dtype=float)
    QD = compute_QDelta("LUTrick", compute_nodes(M), Q)
    np.testing.assert_allclose(QD, ref, atol=1e-13)
    assert np.all(np.triu(QD, 1) == 0)


def test_doolittle_reconstructs_and_detects_zero_pivot():
    A = np.array([[4.0, 3, 2], [2, 1, 3], [3, 2, 1]])
    L, U = doolittle_lu(A)
    np.testing.assert_allclose(L @ U, A, atol=1e-14)
    np.testing.assert_allclose(np.diag(L), 1.0)
    with pytest.raises(FactorizationError):
        doolittle_lu([[0.0, 1.0], [1.0, 0.0]])


def test_unknown_preconditioner():
    with pytest.raises(ValueError):
        compute_QDelta("Midpoint", compute_nodes(3))


def test_tables_are_read_only():
    T = QuadratureTables.build(4, "LUTrick")
    assert T.num_nodes == 4 and T.kind is PreconditionerKind.LU_TRICK
    with pytest.raises(ValueError):
        T.Q[0, 0] = 1.0
    np.testing.assert_allclose(T.spacings.sum(), 1.0)


def test_collocation_residual_of_direct_solution():
    prob = Heat1D(N=31)
    T = QuadratureTables.build(3)
    A = prob.linear_operator().toarray()
    dt = 0.01
    K = np.eye(3 * 31) - dt * np.kron(T.Q, A)
    U = np.linalg.solve(K, np.tile(prob.u0, 3)).reshape(3, 31)
    assert np.max(np.abs(collocation_residual(U, prob.u0, T, dt, prob))) < 1e-13
    with pytest.raises(ValueError):
        collocation_residual(U[:2], prob.u0, T, dt, prob)
    with pytest.raises(ValueError):
        collocation_residual(U, prob.u0[:3], T, dt, prob)


def test_dahlquist_radau_stability_function():
    # two-node Radau IIA: R(z) = (1 + z/3) / (1 - 2z/3 + z^2/6)
    T = QuadratureTables.build(2)
    for z in (-0.5, -3.0, 0.7):
        prob = LinearSystem.scalar(z)
        U = np.linalg.solve(np.eye(2) - z * T.Q, np.ones(2))
        assert abs(U[-1] - (1 + z / 3) / (1 - 2 * z / 3 + z * z / 6)) < 1e-14
        assert np.max(np.abs(collocation_residual(U[:, None], prob.u0, T, 1.0, prob))) < 1e-14
