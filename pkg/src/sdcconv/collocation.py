"""Gauss-Radau collocation nodes, spectral integration matrices and the
lower-triangular preconditioners used by SDC sweeps.

All tables live on the unit interval; callers scale by the step size.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre
from scipy.linalg import eigh_tridiagonal


class PreconditionerKind(str, enum.Enum):
    RIGHT_RECTANGLE = "RightRectangle"
    LEFT_RECTANGLE = "LeftRectangle"
    LU_TRICK = "LUTrick"


class FactorizationError(ArithmeticError):
    """Raised when an unpivoted LU factorization hits a zero pivot."""


def _radau_interior_jacobi(n):
    """Zeros of the Jacobi polynomial P_n^(1,0) on [-1, 1] (Golub-Welsch)."""
    if n == 0:
        return np.empty(0)
    alpha, beta = 1.0, 0.0
    k = np.arange(n, dtype=float)
    s = 2 * k + alpha + beta
    diag = (beta**2 - alpha**2) / (s * (s + 2))
    k = np.arange(1, n, dtype=float)
    s = 2 * k + alpha + beta
    off = np.sqrt(4 * k * (k + alpha) * (k + beta) * (k + alpha + beta)
                  / (s**2 * (s + 1) * (s - 1)))
    return eigh_tridiagonal(diag, off, eigvals_only=True)


def compute_nodes(num_nodes):
    """Right Gauss-Radau nodes on (0, 1].

    The interior points come from the eigenvalues of the Jacobi matrix for
    the weight (1 - x); a Newton step on P_{M-1} - P_M polishes them.
    """
    if int(num_nodes) != num_nodes or num_nodes < 1:
        raise ValueError(f"number of nodes must be a positive integer, got {num_nodes!r}")
    M = int(num_nodes)
    x = _radau_interior_jacobi(M - 1)
    if M > 1:
        radau = legendre.Legendre.basis(M - 1) - legendre.Legendre.basis(M)
        dradau = radau.deriv()
        for _ in range(3):
            step = radau(x) / dradau(x)
            x = x - step
            if np.max(np.abs(step)) < 1e-15:
                break
    x = np.sort(np.append(x, 1.0))
    nodes = 0.5 * (x + 1.0)
    nodes[-1] = 1.0
    return nodes


def barycentric_weights(nodes):
    nodes = np.asarray(nodes, dtype=float)
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    return 1.0 / np.prod(diff, axis=1)


def lagrange_matrix(nodes, points):
    """Values of the Lagrange basis of ``nodes`` at ``points``.

    Entry (i, j) is l_j(points[i]), so ``lagrange_matrix(x, y) @ f(x)``
    evaluates the interpolant of f at y.
    """
    nodes = np.asarray(nodes, dtype=float)
    points = np.atleast_1d(np.asarray(points, dtype=float))
    w = barycentric_weights(nodes)
    diff = points[:, None] - nodes[None, :]
    exact = diff == 0.0
    diff[exact] = 1.0
    terms = w[None, :] / diff
    L = terms / terms.sum(axis=1, keepdims=True)
    rows = exact.any(axis=1)
    L[rows] = exact[rows].astype(float)
    return L


def _check_nodes(nodes):
    nodes = np.asarray(nodes, dtype=float)
    if nodes.ndim != 1 or nodes.size == 0:
        raise ValueError("nodes must be a non-empty 1-d sequence")
    if np.any(np.diff(nodes) <= 0):
        raise ValueError("nodes must be strictly increasing")
    if nodes[0] <= 0 or nodes[-1] > 1:
        raise ValueError("nodes must lie in (0, 1]")
    return nodes


def compute_Q(nodes):
    """Spectral integration matrix with q[m, j] = int_0^{tau_m} l_j(s) ds.

    Each row integral uses a 2M-point Gauss-Legendre rule on [0, tau_m],
    exact for the degree M-1 basis polynomials.
    """
    nodes = _check_nodes(nodes)
    M = nodes.size
    gx, gw = legendre.leggauss(2 * M)
    Q = np.empty((M, M))
    for m, tau in enumerate(nodes):
        pts = 0.5 * tau * (gx + 1.0)
        Q[m] = 0.5 * tau * gw @ lagrange_matrix(nodes, pts)
    return Q


def node_spacings(nodes):
    nodes = np.asarray(nodes, dtype=float)
    return np.diff(nodes, prepend=0.0)


def doolittle_lu(A):
    """Unpivoted LU with unit lower-triangular L."""
    A = np.array(A, dtype=float)
    n = A.shape[0]
    L = np.eye(n)
    U = np.zeros_like(A)
    for i in range(n):
        U[i, i:] = A[i, i:] - L[i, :i] @ U[:i, i:]
        if U[i, i] == 0.0:
            raise FactorizationError(f"zero pivot in leading minor {i + 1}")
        L[i + 1:, i] = (A[i + 1:, i] - L[i + 1:, :i] @ U[:i, i]) / U[i, i]
    return L, U


def compute_QDelta(kind, nodes, Q=None):
    """Lower-triangular approximation of Q used to precondition the sweep."""
    kind = PreconditionerKind(kind)
    nodes = _check_nodes(nodes)
    dtau = node_spacings(nodes)
    M = nodes.size
    if kind is PreconditionerKind.RIGHT_RECTANGLE:
        return np.tril(np.broadcast_to(dtau, (M, M)))
    if kind is PreconditionerKind.LEFT_RECTANGLE:
        # entry (m, j) = dtau_{j+1} for j < m; the f(t0) piece is carried by U_0
        QD = np.zeros((M, M))
        for m in range(1, M):
            QD[m, :m] = dtau[1:m + 1]
        return QD
    if Q is None:
        Q = compute_Q(nodes)
    _, U = doolittle_lu(np.asarray(Q).T)
    return U.T


@dataclass(frozen=True)
class QuadratureTables:
    """Nodes, integration matrix and preconditioner for one collocation level."""

    nodes: np.ndarray
    Q: np.ndarray
    QDelta: np.ndarray
    kind: PreconditionerKind

    @classmethod
    def build(cls, num_nodes, kind=PreconditionerKind.RIGHT_RECTANGLE):
        nodes = compute_nodes(num_nodes)
        Q = compute_Q(nodes)
        QD = compute_QDelta(kind, nodes, Q)
        for a in (nodes, Q, QD):
            a.setflags(write=False)
        return cls(nodes, Q, QD, PreconditionerKind(kind))

    @property
    def num_nodes(self):
        return self.nodes.size

    @property
    def spacings(self):
        return node_spacings(self.nodes)


def collocation_residual(U, u0, tables, dt, problem):
    """Return C(U) - U_0 = U - dt (Q x I) F(U) - U_0, row m being node m."""
    U = np.asarray(U, dtype=float)
    M = tables.num_nodes
    if U.shape != (M, problem.size):
        raise ValueError(f"expected node array of shape {(M, problem.size)}, got {U.shape}")
    u0 = np.asarray(u0, dtype=float)
    if u0.shape != (problem.size,):
        raise ValueError(f"initial value has shape {u0.shape}, expected {(problem.size,)}")
    F = np.array([problem.eval_f(u) for u in U])
    return U - dt * (tables.Q @ F) - u0[None, :]
