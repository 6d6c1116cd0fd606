import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from sdcconv.problems import AllenCahn2D, Auzinger, Heat1D, LinearSystem, SolverError


def fd_jacobian_action(prob, u, v, h=1e-6):
    return (prob.eval_f(u + h * v) - prob.eval_f(u - h * v)) / (2 * h)


def test_heat_eigenvalue_against_expm():
    prob = Heat1D(N=63)
    A = prob.linear_operator().toarray()
    for t in (1e-3, 0.05, 0.3):
        np.testing.assert_allclose(prob.exact_solution(t), expm(t * A) @ prob.u0,
                                   rtol=0, atol=1e-12)
    np.testing.assert_allclose(prob.eval_f(prob.u0), -prob.eigenvalue * prob.u0, atol=1e-9)


def test_heat_defaults():
    prob = Heat1D()
    assert prob.size == 255 and prob.dx == 1 / 256
    assert prob.eigenvalue == pytest.approx(0.1 * 16 * np.pi**2, rel=1e-3)


def test_heat_rejects_bad_parameters():
    with pytest.raises(ValueError):
        Heat1D(N=0)
    with pytest.raises(ValueError):
        Heat1D(nu=-1.0)


def test_heat_node_solve():
    prob = Heat1D(N=31)
    b = np.random.default_rng(1).standard_normal(31)
    u = prob.solve_node_implicit(0.01, b)
    np.testing.assert_allclose(u - 0.01 * prob.eval_f(u), b, atol=1e-12)
    np.testing.assert_array_equal(prob.solve_node_implicit(0.0, b), b)


@pytest.mark.parametrize("prob", [AllenCahn2D(N=16), Auzinger()], ids=["allencahn", "auzinger"])
def test_jacobian_matches_finite_differences(prob):
    rng = np.random.default_rng(3)
    u = prob.u0 + 0.1 * rng.standard_normal(prob.size)
    v = rng.standard_normal(prob.size)
    Jv = prob.jacobian_action(u, v)
    fd = fd_jacobian_action(prob, u, v)
    assert np.linalg.norm(Jv - fd) <= 1e-6 * np.linalg.norm(Jv)


@settings(max_examples=25, deadline=None)
@given(x=st.floats(-2, 2), y=st.floats(-2, 2), vx=st.floats(-1, 1), vy=st.floats(-1, 1))
def test_auzinger_jacobian_property(x, y, vx, vy):
    prob = Auzinger()
    u, v = np.array([x, y]), np.array([vx, vy])
    Jv = prob.jacobian_action(u, v)
    fd = fd_jacobian_action(prob, u, v, h=1e-5)
    assert np.linalg.norm(Jv - fd) <= 1e-6 * max(np.linalg.norm(Jv), 1e-3)


def test_auzinger_exact_solution_solves_ode():
    prob = Auzinger()
    for t in np.linspace(0, 3, 7):
        np.testing.assert_allclose(prob.eval_f(prob.exact_solution(t)),
                                   [-np.sin(t), np.cos(t)], atol=1e-15)
    np.testing.assert_array_equal(prob.u0, [1.0, 0.0])
    with pytest.raises(ValueError):
        Auzinger(lam=0.5)


def test_allencahn_laplacian_of_mode():
    prob = AllenCahn2D(N=32)
    g = prob.u0.reshape(32, 32)
    k = 4 * np.pi
    sym = 2 * (2 - 2 * np.cos(k * prob.dx)) / prob.dx**2
    np.testing.assert_allclose(prob.laplacian(prob.u0), -sym * g.ravel(), atol=1e-9)
    assert prob.grid_shape == (32, 32)


@pytest.mark.parametrize("prob", [AllenCahn2D(N=16), Auzinger()], ids=["allencahn", "auzinger"])
def test_nonlinear_node_solve(prob):
    a = 0.01
    b = prob.u0 + 0.05
    u = prob.solve_node_implicit(a, b, tol=1e-12)
    assert np.max(np.abs(u - a * prob.eval_f(u) - b)) <= 1e-12


def test_node_solve_failure_reports_residual():
    prob = AllenCahn2D(N=16)
    with pytest.raises(SolverError) as info:
        prob.solve_node_implicit(0.01, prob.u0 + 0.5, tol=1e-30, max_newton=1)
    assert info.value.residual > 0


def test_linear_system_and_shape_checks():
    prob = LinearSystem([[0.0, 1.0], [-1.0, 0.0]], [1.0, 0.0])
    np.testing.assert_allclose(prob.exact_solution(np.pi / 2), [0.0, -1.0], atol=1e-14)
    zero = LinearSystem.zero([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(zero.eval_f(zero.u0), 0.0)
    with pytest.raises(ValueError):
        prob.eval_f(np.zeros(3))
    with pytest.raises(ValueError):
        prob.u0[0] = 2.0
