"""SDC sweeps, the collocation solver and time-stepping helpers.

Node arrays have shape (M, N): row m is the state at collocation node m.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, gmres, spsolve

from .collocation import PreconditionerKind, QuadratureTables, collocation_residual
from .problems import SolverError


class DivergenceError(RuntimeError):
    """The iteration increments kept growing; the step size is too large."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class ReferenceAccuracyError(RuntimeError):
    def __init__(self, message, estimate):
        super().__init__(message)
        self.estimate = estimate


class InitialGuess(str, enum.Enum):
    SPREAD = "spread"
    ZERO = "zero"
    RANDOM = "random"


@dataclass(frozen=True)
class CollocationSpec:
    num_nodes: int
    t0: float = 0.0
    t1: float = 1.0

    def __post_init__(self):
        if int(self.num_nodes) != self.num_nodes or self.num_nodes < 1:
            raise ValueError("num_nodes must be a positive integer")
        if not self.t1 > self.t0:
            raise ValueError("interval must have t1 > t0")

    @property
    def dt(self):
        return self.t1 - self.t0


@dataclass(frozen=True)
class SweepConfig:
    preconditioner: PreconditionerKind = PreconditionerKind.RIGHT_RECTANGLE
    node_solve_tol: float = 1e-12
    max_newton: int = 50
    k0_label: Optional[int] = None

    def __post_init__(self):
        if not self.node_solve_tol > 0:
            raise ValueError("node_solve_tol must be positive")


def make_initial_guess(problem, num_nodes, kind=InitialGuess.SPREAD, seed=None, u0=None,
                       rng=None):
    """Starting iterate U^(0) of shape (M, N).

    ``random`` draws i.i.d. uniform [0, 1) values from ``rng`` or, if none is
    given, from a generator seeded with ``seed``.
    """
    kind = InitialGuess(kind)
    u0 = problem.u0 if u0 is None else np.asarray(u0, dtype=float)
    shape = (int(num_nodes), problem.size)
    if kind is InitialGuess.SPREAD:
        return np.tile(u0, (shape[0], 1))
    if kind is InitialGuess.ZERO:
        return np.zeros(shape)
    if rng is None:
        rng = np.random.default_rng(seed)
    return rng.random(shape)


def eval_nodes(problem, U):
    return np.array([problem.eval_f(u) for u in U])


def _check_shape(U, tables, problem):
    U = np.asarray(U, dtype=float)
    if U.shape != (tables.num_nodes, problem.size):
        raise ValueError(
            f"node array has shape {U.shape}, expected {(tables.num_nodes, problem.size)}")
    return U


def picard_sweep(U, u0, tables, dt, problem):
    """U_0 + dt (Q x I) F(U)."""
    U = _check_shape(U, tables, problem)
    return np.asarray(u0)[None, :] + dt * (tables.Q @ eval_nodes(problem, U))


def sdc_sweep(U, u0, tables, dt, problem, tau=None, QDelta=None, F_old=None,
              config=SweepConfig()):
    """One preconditioned Picard sweep, solved node by node.

    For m = 1..M the right-hand side
    b_m = u0 + tau_m + dt sum_{j<m} qd_mj f(u_j^new) + dt sum_j (q - qd)_mj f(u_j^old)
    is assembled and u_m^new = b_m + dt qd_mm f(u_m^new) is solved with the
    old node value as Newton guess.
    """
    U = _check_shape(U, tables, problem)
    QD = tables.QDelta if QDelta is None else np.asarray(QDelta)
    M = tables.num_nodes
    if F_old is None:
        F_old = eval_nodes(problem, U)
    rhs = np.asarray(u0, dtype=float)[None, :] + dt * ((tables.Q - QD) @ F_old)
    if tau is not None:
        rhs = rhs + tau
    U_new = np.empty_like(U)
    F_new = np.empty_like(U)
    for m in range(M):
        b = rhs[m] + dt * (QD[m, :m] @ F_new[:m])
        a = dt * QD[m, m]
        if a == 0.0:
            U_new[m] = b
        else:
            try:
                U_new[m] = problem.solve_node_implicit(
                    a, b, U[m], tol=config.node_solve_tol, max_newton=config.max_newton)
            except SolverError as err:
                raise SolverError(f"node {m + 1}: {err}", residual=err.residual,
                                  node=m + 1) from err
        F_new[m] = problem.eval_f(U_new[m])
    return U_new


def _watch_divergence(increments, iteration, growth=10.0, patience=3):
    if len(increments) <= patience:
        return
    recent = increments[-patience - 1:]
    if all(b > growth * a for a, b in zip(recent[:-1], recent[1:])):
        raise DivergenceError(
            f"iteration increments grew by more than {growth:g}x for {patience} "
            f"consecutive sweeps (last {recent[-1]:.3e})", iteration=iteration)


def run_sdc(problem, tables, dt, k_max, U_init=None, u0=None, guess=InitialGuess.SPREAD,
            seed=None, config=SweepConfig()):
    """Iterates U^(0), ..., U^(k_max) of SDC for a single time step."""
    if k_max < 0:
        raise ValueError("k_max must be non-negative")
    u0 = problem.u0 if u0 is None else np.asarray(u0, dtype=float)
    if U_init is None:
        U_init = make_initial_guess(problem, tables.num_nodes, guess, seed=seed, u0=u0)
    iterates = [_check_shape(U_init, tables, problem).copy()]
    increments = []
    for k in range(k_max):
        U = sdc_sweep(iterates[-1], u0, tables, dt, problem, config=config)
        increments.append(np.max(np.abs(U - iterates[-1])))
        _watch_divergence(increments, k + 1)
        iterates.append(U)
    return iterates


def _collocation_linear(problem, tables, dt, u0):
    M, N = tables.num_nodes, problem.size
    A = problem.linear_operator()
    rhs = np.tile(u0, M)
    if sp.issparse(A):
        K = sp.identity(M * N, format="csc") - dt * sp.kron(tables.Q, A, format="csc")
        return spsolve(K, rhs).reshape(M, N)
    K = np.eye(M * N) - dt * np.kron(tables.Q, A)
    return np.linalg.solve(K, rhs).reshape(M, N)


def solve_collocation(problem, tables, dt, u0=None, tol=1e-12, warm_sweeps=20,
                      max_newton=30, config=SweepConfig()):
    """Solve C(U) = U_0 to ``tol`` in the max-norm of the residual.

    Linear problems use a direct solve of (I - dt Q x A). Nonlinear problems
    run Newton on the full M*N system from an SDC-sweep warm start; the
    Newton corrections come from GMRES preconditioned by one linearized sweep.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    u0 = problem.u0 if u0 is None else np.asarray(u0, dtype=float)
    if problem.is_linear:
        return _collocation_linear(problem, tables, dt, u0)

    M, N = tables.num_nodes, problem.size
    QD = tables.QDelta
    U = make_initial_guess(problem, M, InitialGuess.SPREAD, u0=u0)
    history = []
    for _ in range(warm_sweeps):
        U = sdc_sweep(U, u0, tables, dt, problem, config=config)
        res = collocation_residual(U, u0, tables, dt, problem)
        history.append(np.max(np.abs(res)))
        if history[-1] <= tol:
            return U

    for _ in range(max_newton):
        res = collocation_residual(U, u0, tables, dt, problem)
        rnorm = np.max(np.abs(res))
        history.append(rnorm)
        if rnorm <= tol:
            return U
        Ucur = U

        def jac(v, Ucur=Ucur):
            V = v.reshape(M, N)
            JV = np.array([problem.jacobian_action(Ucur[m], V[m]) for m in range(M)])
            return (V - dt * (tables.Q @ JV)).ravel()

        def prec(r, Ucur=Ucur):
            R = r.reshape(M, N)
            Y = np.empty_like(R)
            JY = np.empty_like(R)
            for m in range(M):
                b = R[m] + dt * (QD[m, :m] @ JY[:m])
                a = dt * QD[m, m]
                Y[m] = b if a == 0.0 else problem.solve_linearized(Ucur[m], a, b)
                JY[m] = problem.jacobian_action(Ucur[m], Y[m])
            return Y.ravel()

        n = M * N
        delta, info = gmres(LinearOperator((n, n), matvec=jac, dtype=float), -res.ravel(),
                            M=LinearOperator((n, n), matvec=prec, dtype=float),
                            rtol=1e-3, atol=0.1 * tol, restart=30, maxiter=10)
        U = U + delta.reshape(M, N)

    res = collocation_residual(U, u0, tables, dt, problem)
    history.append(np.max(np.abs(res)))
    if history[-1] <= tol:
        return U
    err = SolverError(f"collocation Newton stalled at residual {history[-1]:.3e}",
                      residual=history[-1])
    err.history = history
    raise err


def step_collocation(problem, tables, dt, n_steps, u0=None, tol=1e-12):
    """March n_steps collocation steps; returns the state at n_steps*dt."""
    u = problem.u0 if u0 is None else np.asarray(u0, dtype=float)
    for _ in range(n_steps):
        u = solve_collocation(problem, tables, dt, u, tol=tol)[-1]
    return u


def reference_solution(problem, t_end, accuracy, num_nodes=6, max_steps=4096, tol=1e-13):
    """High-order reference state at ``t_end`` by collocation time stepping.

    The number of steps is doubled until two consecutive runs differ by less
    than ``accuracy``; the finer run is returned.
    """
    if not accuracy > 0:
        raise ValueError("accuracy must be positive")
    tables = QuadratureTables.build(num_nodes)
    n = 1
    prev = step_collocation(problem, tables, t_end, 1, tol=tol)
    estimate = np.inf
    while 2 * n <= max_steps:
        n *= 2
        cur = step_collocation(problem, tables, t_end / n, n, tol=tol)
        estimate = np.max(np.abs(cur - prev))
        if estimate <= accuracy:
            return cur
        prev = cur
    raise ReferenceAccuracyError(
        f"reference estimate {estimate:.3e} above {accuracy:g} after {n} steps", estimate)
