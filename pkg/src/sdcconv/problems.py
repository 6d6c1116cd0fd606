"""Initial value problems u' = f(u) used by the sweepers.

Every problem exposes the right-hand side, its Jacobian action, a solver for
the implicit node equation ``u - a*f(u) = b`` and, where available, the exact
solution of the semi-discrete system.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.linalg import expm, solve_banded
from scipy.sparse.linalg import LinearOperator, cg, gmres


class SolverError(RuntimeError):
    """An implicit solve failed to reach its tolerance."""

    def __init__(self, message, residual=None, node=None):
        super().__init__(message)
        self.residual = residual
        self.node = node


class IVProblem:
    """Base class for autonomous problems u' = f(u), u(0) = u0.

    Subclasses implement ``eval_f`` and ``jacobian_action``; the generic
    ``solve_node_implicit`` runs Newton on u - a f(u) = b and delegates the
    linear solves to ``solve_linearized``.
    """

    is_linear = False
    #: spatial layout of the state, e.g. (N,) or (N, N); () for ODEs
    grid_shape: tuple = ()

    def __init__(self, u0):
        u0 = np.array(u0, dtype=float).ravel()
        u0.setflags(write=False)
        self._u0 = u0

    @property
    def u0(self):
        return self._u0

    @property
    def size(self):
        return self._u0.size

    def _check(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape != (self.size,):
            raise ValueError(f"state has shape {u.shape}, expected {(self.size,)}")
        return u

    def eval_f(self, u):
        raise NotImplementedError

    def jacobian_action(self, u, v):
        raise NotImplementedError

    def exact_solution(self, t):
        return None

    def solve_linearized(self, u, a, rhs):
        """Solve (I - a J(u)) x = rhs."""
        raise NotImplementedError

    def solve_node_implicit(self, a, b, guess=None, tol=1e-12, max_newton=50):
        b = self._check(b)
        if a == 0:
            return b.copy()
        u = b.copy() if guess is None else self._check(guess).copy()

        def residual(u):
            af = a * self.eval_f(u)
            # the residual cannot drop below the roundoff of its own evaluation
            scale = max(np.max(np.abs(u)), np.max(np.abs(af)), np.max(np.abs(b)))
            return u - af - b, max(tol, 64 * np.finfo(float).eps * scale)

        res, target = residual(u)
        rnorm = np.max(np.abs(res))
        for _ in range(max_newton):
            if rnorm <= target:
                return u
            u = u - self.solve_linearized(u, a, res)
            res, target = residual(u)
            rnorm = np.max(np.abs(res))
        if rnorm <= target:
            return u
        raise SolverError(
            f"Newton did not reach {tol:g} in {max_newton} iterations "
            f"(residual {rnorm:.3e})", residual=rnorm)


class LinearSystem(IVProblem):
    """Dense linear system u' = A u; the zero matrix gives f = 0."""

    is_linear = True

    def __init__(self, A, u0):
        super().__init__(u0)
        A = np.array(A, dtype=float).reshape(self.size, self.size)
        A.setflags(write=False)
        self.A = A

    @classmethod
    def scalar(cls, lam, u0=1.0):
        return cls([[lam]], [u0])

    @classmethod
    def zero(cls, u0):
        u0 = np.atleast_1d(np.asarray(u0, dtype=float))
        return cls(np.zeros((u0.size, u0.size)), u0)

    def linear_operator(self):
        return self.A

    def eval_f(self, u):
        return self.A @ self._check(u)

    def jacobian_action(self, u, v):
        return self.A @ v

    def solve_linearized(self, u, a, rhs):
        return np.linalg.solve(np.eye(self.size) - a * self.A, rhs)

    def solve_node_implicit(self, a, b, guess=None, tol=1e-12, max_newton=50):
        b = self._check(b)
        if a == 0:
            return b.copy()
        return np.linalg.solve(np.eye(self.size) - a * self.A, b)

    def exact_solution(self, t):
        return expm(t * self.A) @ self.u0


class Heat1D(IVProblem):
    """u_t = nu u_xx on [0, 1], homogeneous Dirichlet, second-order FD.

    ``N`` interior points with spacing 1/(N+1); u0 = sin(kappa pi x).
    """

    is_linear = True

    def __init__(self, N=255, nu=0.1, kappa=4):
        if N < 1 or nu <= 0 or kappa < 1:
            raise ValueError("Heat1D needs N >= 1, nu > 0 and kappa >= 1")
        self.N, self.nu, self.kappa = int(N), float(nu), int(kappa)
        self.dx = 1.0 / (self.N + 1)
        self.x = np.arange(1, self.N + 1) * self.dx
        self.grid_shape = (self.N,)
        super().__init__(np.sin(self.kappa * np.pi * self.x))
        self._c = self.nu / self.dx**2

    @property
    def eigenvalue(self):
        """Decay rate nu*rho of the initial mode under the FD Laplacian."""
        return self._c * (2.0 - 2.0 * np.cos(self.kappa * np.pi * self.dx))

    def linear_operator(self):
        return sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(self.N, self.N),
                        format="csr") * self._c

    def eval_f(self, u):
        u = self._check(u)
        f = -2.0 * u
        f[1:] += u[:-1]
        f[:-1] += u[1:]
        return self._c * f

    def jacobian_action(self, u, v):
        return self.eval_f(v)

    def _banded(self, a):
        ab = np.empty((3, self.N))
        ab[0] = -a * self._c
        ab[1] = 1.0 + 2.0 * a * self._c
        ab[2] = -a * self._c
        return ab

    def solve_linearized(self, u, a, rhs):
        return solve_banded((1, 1), self._banded(a), rhs)

    def solve_node_implicit(self, a, b, guess=None, tol=1e-12, max_newton=50):
        b = self._check(b)
        if a == 0:
            return b.copy()
        return solve_banded((1, 1), self._banded(a), b)

    def exact_solution(self, t):
        return self.u0 * np.exp(-t * self.eigenvalue)


class AllenCahn2D(IVProblem):
    """u_t = Lap(u) + u (1 - u^2) / eps^2 on [-0.5, 0.5]^2, periodic.

    The state is the N x N grid flattened row-major; x is the first axis.
    """

    def __init__(self, N=128, eps=0.2, kappa=4, newton_tol=1e-12, max_newton=50):
        if N < 3 or eps <= 0 or kappa < 1:
            raise ValueError("AllenCahn2D needs N >= 3, eps > 0 and kappa >= 1")
        self.N, self.eps, self.kappa = int(N), float(eps), int(kappa)
        self.dx = 1.0 / self.N
        self.x = -0.5 + np.arange(self.N) * self.dx
        self.grid_shape = (self.N, self.N)
        self.newton_tol = newton_tol
        self.max_newton = max_newton
        s = np.sin(self.kappa * np.pi * self.x)
        super().__init__(np.outer(s, s))

    def laplacian(self, u):
        g = u.reshape(self.grid_shape)
        lap = (np.roll(g, 1, 0) + np.roll(g, -1, 0) + np.roll(g, 1, 1)
               + np.roll(g, -1, 1) - 4.0 * g) / self.dx**2
        return lap.ravel()

    def eval_f(self, u):
        u = self._check(u)
        return self.laplacian(u) + u * (1.0 - u**2) / self.eps**2

    def jacobian_action(self, u, v):
        return self.laplacian(v) + (1.0 - 3.0 * u**2) / self.eps**2 * v

    def solve_linearized(self, u, a, rhs, rtol=1e-2):
        # I - a J(u) is symmetric; positive definite unless a/eps^2 is large
        n = self.size
        react = 1.0 - a * (1.0 - 3.0 * u**2) / self.eps**2
        diag = react + 4.0 * a / self.dx**2
        op = LinearOperator((n, n), matvec=lambda v: react * v - a * self.laplacian(v),
                            dtype=float)
        pre = LinearOperator((n, n), matvec=lambda v: v / diag, dtype=float)
        atol = rtol * np.linalg.norm(rhs)
        if np.all(diag > 0):
            x, info = cg(op, rhs, rtol=0.0, atol=atol, M=pre, maxiter=10 * n)
            if info == 0:
                return x
        x, info = gmres(op, rhs, rtol=0.0, atol=atol, M=pre, restart=50, maxiter=20)
        if info != 0:
            raise SolverError("linearized Allen-Cahn solve did not converge",
                              residual=np.linalg.norm(op.matvec(x) - rhs))
        return x

    def solve_node_implicit(self, a, b, guess=None, tol=None, max_newton=None):
        return super().solve_node_implicit(
            a, b, guess,
            tol=self.newton_tol if tol is None else tol,
            max_newton=self.max_newton if max_newton is None else max_newton)


class Auzinger(IVProblem):
    """Two-dimensional ODE with the unit circle as invariant set.

    x' = -y - lam x (1 - x^2 - y^2), y' = x - lam rho y (1 - x^2 - y^2),
    exact solution (cos t, sin t) for u0 = (1, 0).
    """

    def __init__(self, lam=-0.75, rho=3.0):
        if lam >= 0 or rho <= 0:
            raise ValueError("Auzinger needs lam < 0 and rho > 0")
        self.lam, self.rho = float(lam), float(rho)
        super().__init__([1.0, 0.0])

    def eval_f(self, u):
        x, y = self._check(u)
        r = 1.0 - x * x - y * y
        return np.array([-y - self.lam * x * r, x - self.lam * self.rho * y * r])

    def jacobian(self, u):
        x, y = u
        lam, rho = self.lam, self.rho
        r = 1.0 - x * x - y * y
        return np.array([
            [-lam * r + 2 * lam * x * x, -1.0 + 2 * lam * x * y],
            [1.0 + 2 * lam * rho * x * y, -lam * rho * r + 2 * lam * rho * y * y],
        ])

    def jacobian_action(self, u, v):
        return self.jacobian(u) @ v

    def solve_linearized(self, u, a, rhs):
        return np.linalg.solve(np.eye(2) - a * self.jacobian(u), rhs)

    def exact_solution(self, t):
        return np.array([np.cos(t), np.sin(t)])
