"""Error norms, log-log order fits and the convergence-study driver."""
from __future__ import annotations

import enum
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .mlsdc import run_mlsdc
from .problems import SolverError
from .sweeper import (
    DivergenceError, InitialGuess, make_initial_guess, run_sdc, solve_collocation,
)

ROUNDOFF_FLOOR = 1e-13


class InsufficientDataError(ValueError):
    """Fewer than three usable points remain for a slope fit."""


class ReferenceKind(str, enum.Enum):
    COLLOCATION = "collocation"
    EXACT = "exact"
    LAST_NODE = "last"


@dataclass
class ErrorSeries:
    """Sup-norm errors indexed by (step size, iteration)."""

    step_sizes: np.ndarray
    errors: np.ndarray  # shape (len(step_sizes), k_max + 1); NaN marks failed cells
    reference_kind: ReferenceKind

    def __post_init__(self):
        self.step_sizes = np.asarray(self.step_sizes, dtype=float)
        self.errors = np.asarray(self.errors, dtype=float)
        if self.errors.ndim != 2 or self.errors.shape[0] != self.step_sizes.size:
            raise ValueError("error table must have one row per step size")
        if np.any(np.diff(self.step_sizes) >= 0):
            raise ValueError("step sizes must be strictly decreasing")
        if np.any(self.errors[~np.isnan(self.errors)] < 0):
            raise ValueError("errors must be non-negative")

    @property
    def k_max(self):
        return self.errors.shape[1] - 1

    def column(self, k):
        return self.errors[:, k]


@dataclass(frozen=True)
class OrderFit:
    order: float
    intercept: float
    used: tuple
    excluded: tuple


@dataclass(frozen=True)
class FourierTail:
    cutoff: int
    remainders: np.ndarray
    heuristic: bool = False

    @property
    def max(self):
        return float(np.max(self.remainders))


def error_inf(U, ref):
    U, ref = np.asarray(U, dtype=float), np.asarray(ref, dtype=float)
    if U.shape != ref.shape:
        raise ValueError(f"shape mismatch {U.shape} vs {ref.shape}")
    return float(np.max(np.abs(U - ref))) if U.size else 0.0


def last_node_error(U, exact_at_t1):
    return float(np.max(np.abs(np.asarray(U)[-1] - np.asarray(exact_at_t1))))


def fit_order_details(series, floor=ROUNDOFF_FLOOR, ceiling=None, exclude=None):
    """Least-squares slope of log(error) against log(dt).

    Points below ``floor``, above ``ceiling``, non-finite or flagged in
    ``exclude`` are dropped and reported in the result.
    """
    pts = [(float(dt), float(err)) for dt, err in series]
    exclude = [False] * len(pts) if exclude is None else list(exclude)
    used, dropped = [], []
    for (dt, err), skip in zip(pts, exclude):
        bad = (skip or not np.isfinite(err) or err < floor
               or (ceiling is not None and err > ceiling))
        (dropped if bad else used).append((dt, err))
    if len(used) < 3:
        raise InsufficientDataError(
            f"need at least 3 usable points for a slope, have {len(used)}")
    x = np.log([dt for dt, _ in used])
    y = np.log([err for _, err in used])
    slope, intercept = np.polyfit(x, y, 1)
    return OrderFit(float(slope), float(intercept), tuple(used), tuple(dropped))


def fit_order(series, floor=ROUNDOFF_FLOOR, ceiling=None, exclude=None):
    return fit_order_details(series, floor, ceiling, exclude).order


def contraction_slope(series, k, floor=ROUNDOFF_FLOOR):
    """Slope s of err_k / err_{k-1} ~ dt^s over the step sizes of ``series``.

    Cells where either error is below ``floor`` are left out of the fit.
    """
    if not 1 <= k <= series.k_max:
        raise ValueError(f"iteration {k} outside 1..{series.k_max}")
    prev, cur = series.column(k - 1), series.column(k)
    finite = np.isfinite(prev) & np.isfinite(cur)
    if finite.any() and np.all(prev[finite] < floor):
        raise ZeroDivisionError(f"error at iteration {k - 1} is below the floor everywhere")
    exclude = ~finite | (prev < floor) | (cur < floor)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(exclude, np.nan, cur / prev)
    return fit_order(zip(series.step_sizes, ratios), floor=0.0, exclude=exclude)


def _tail_1d(lines, N0, symmetric):
    n = lines.shape[-1]
    c = np.fft.fft(lines, axis=-1, norm="ortho")
    ell = np.arange(n)
    if symmetric:
        ell = np.minimum(ell, n - ell)
    return np.abs(c[..., ell >= N0]).sum(axis=-1)


def fourier_tail(error, N0, grid_shape=None, symmetric=False):
    """Sum of |c_{m,l}| for l = N0..N-1 of each node's discrete Fourier transform.

    The transform is unitary, so the coefficients satisfy Parseval. With
    ``symmetric`` the index is the folded wavenumber min(l, N - l), which
    ignores the mirror images of low modes in real data. For 2-d grids the
    1-d tail is taken along every line of both axes and the maximum kept.
    """
    error = np.atleast_2d(np.asarray(error, dtype=complex))
    M, N = error.shape
    shape = (N,) if grid_shape is None else tuple(grid_shape)
    if int(np.prod(shape)) != N:
        raise ValueError(f"grid shape {shape} does not match {N} unknowns")
    n_axis = shape[0]
    if not 1 <= N0 <= n_axis:
        raise ValueError(f"cutoff N0={N0} outside 1..{n_axis}")
    if len(shape) == 1:
        return FourierTail(int(N0), _tail_1d(error, N0, symmetric).real)
    if len(shape) != 2:
        raise ValueError("only 1-d and 2-d grids are supported")
    g = error.reshape((M,) + shape)
    along_y = _tail_1d(g, N0, symmetric).max(axis=-1)
    along_x = _tail_1d(np.swapaxes(g, 1, 2), N0, symmetric).max(axis=-1)
    return FourierTail(int(N0), np.maximum(along_x, along_y).real, heuristic=True)


class Method(str, enum.Enum):
    SDC = "SDC"
    MLSDC = "MLSDC"


@dataclass
class StudyRow:
    dt: float
    k: int
    err_coll: float
    err_exact: float
    err_last: float
    order_fit: float
    contraction_slope: float
    E_max: float
    wall_ms: float


@dataclass
class StudyResult:
    method: Method
    series: dict
    orders: dict
    contraction: dict
    E_max: np.ndarray
    wall_ms: np.ndarray
    failures: dict = field(default_factory=dict)
    saturated: Optional[np.ndarray] = None

    def rows(self):
        coll = self.series.get(ReferenceKind.COLLOCATION)
        exact = self.series.get(ReferenceKind.EXACT)
        last = self.series.get(ReferenceKind.LAST_NODE)
        base = coll or exact or last
        out = []
        for i, dt in enumerate(base.step_sizes):
            for k in range(base.k_max + 1):
                out.append(StudyRow(
                    dt=float(dt), k=k,
                    err_coll=float(coll.errors[i, k]) if coll else np.nan,
                    err_exact=float(exact.errors[i, k]) if exact else np.nan,
                    err_last=float(last.errors[i, k]) if last else np.nan,
                    order_fit=self.orders.get(k, np.nan),
                    contraction_slope=self.contraction.get(k, np.nan),
                    E_max=float(self.E_max[i]),
                    wall_ms=float(self.wall_ms[i]),
                ))
        return out


def _exact_nodes(problem, nodes, t0, dt):
    vals = [problem.exact_solution(t0 + tau * dt) for tau in nodes]
    if any(v is None for v in vals):
        return None
    return np.array(vals)


def _run_cell(method, problem, tables, hierarchy, dt, k_max, guess, rng, n_steps, coll_tol):
    """Errors for one step size; returns dicts of per-k errors."""
    M = tables.num_nodes
    u0 = problem.u0
    if n_steps == 1:
        U_init = make_initial_guess(problem, M, guess, u0=u0, rng=rng)
        if method is Method.SDC:
            iterates = run_sdc(problem, tables, dt, k_max, U_init=U_init, u0=u0)
        else:
            iterates = run_mlsdc(hierarchy, dt, k_max, U_init=U_init, u0=u0)
        U_coll = solve_collocation(problem, tables, dt, u0, tol=coll_tol)
        return iterates, U_coll, _exact_nodes(problem, tables.nodes, 0.0, dt), U_init

    # time stepping: one trajectory per iteration count
    finals = []
    for k in range(k_max + 1):
        u = u0
        for _ in range(n_steps):
            U_init = make_initial_guess(problem, M, guess, u0=u, rng=rng)
            if method is Method.SDC:
                U = run_sdc(problem, tables, dt, k, U_init=U_init, u0=u)[-1]
            else:
                U = run_mlsdc(hierarchy, dt, k, U_init=U_init, u0=u)[-1]
            u = U[-1]
        finals.append(U)
    u = u0
    for _ in range(n_steps):
        U_coll = solve_collocation(problem, tables, dt, u, tol=coll_tol)
        u = U_coll[-1]
    t0 = (n_steps - 1) * dt
    return finals, U_coll, _exact_nodes(problem, tables.nodes, t0, dt), None


def _cell_task(args):
    (method, problem, tables, hierarchy, dt, k_max, guess, stream, n_steps, coll_tol,
     N0) = args
    rng = np.random.default_rng(stream)
    start = time.perf_counter()
    try:
        iterates, U_coll, U_exact, U_init = _run_cell(
            method, problem, tables, hierarchy, dt, k_max, guess, rng, n_steps, coll_tol)
    except (DivergenceError, SolverError) as exc:
        return {"failure": str(exc), "wall_ms": 1e3 * (time.perf_counter() - start)}
    wall_ms = 1e3 * (time.perf_counter() - start)
    errors = {kind: np.full(k_max + 1, np.nan) for kind in ReferenceKind}
    for k, U in enumerate(iterates):
        errors[ReferenceKind.COLLOCATION][k] = error_inf(U, U_coll)
        if U_exact is not None:
            errors[ReferenceKind.EXACT][k] = error_inf(U, U_exact)
            errors[ReferenceKind.LAST_NODE][k] = last_node_error(U, U_exact[-1])
    E_max = np.nan
    if U_init is not None and problem.grid_shape and N0 <= problem.grid_shape[0]:
        E_max = fourier_tail(U_coll - U_init, N0, problem.grid_shape, symmetric=True).max
    return {"errors": errors, "wall_ms": wall_ms, "E_max": E_max,
            "coll_exact": None if U_exact is None else error_inf(U_coll, U_exact)}


def run_convergence_study(method, dt_list, k_max, *, problem=None, tables=None,
                          hierarchy=None, guess=InitialGuess.SPREAD, seed=0, n_steps=1,
                          N0=None, floor=ROUNDOFF_FLOOR, saturation=1.0, coll_tol=1e-12,
                          jobs=1, t_end=None):
    """Run SDC or MLSDC for every step size and collect the error table.

    Errors are measured against the collocation solution, the exact solution
    at all nodes and the exact solution at the last node. With ``n_steps > 1``
    the errors refer to the final step of the trajectory. Cells whose
    iteration diverges or whose solver fails are stored as NaN and listed in
    ``failures``. A given ``t_end`` overrides ``n_steps`` with t_end / dt
    steps per cell. Order fits drop points where the iteration error is at
    most ``saturation`` times the collocation error itself. ``jobs > 1``
    runs the step sizes in a process pool.
    """
    method = Method(method)
    if method is Method.MLSDC:
        if hierarchy is None:
            raise ValueError("MLSDC studies need a level hierarchy")
        problem, tables = hierarchy.fine.problem, hierarchy.fine.tables
    elif problem is None or tables is None:
        raise ValueError("SDC studies need a problem and quadrature tables")
    dts = np.asarray(dt_list, dtype=float)
    order = np.argsort(-dts)
    dts = dts[order]
    guess = InitialGuess(guess)

    n = dts.size
    err = {kind: np.full((n, k_max + 1), np.nan) for kind in ReferenceKind}
    coll_exact = np.full(n, np.nan)
    E_max = np.full(n, np.nan)
    wall = np.zeros(n)
    failures = {}
    if N0 is None:
        N0 = 2 * getattr(problem, "kappa", 1) + 2
    # one independent stream per cell keeps results identical for any job count
    streams = np.random.SeedSequence(seed).spawn(n)
    steps = [n_steps] * n
    if t_end is not None:
        steps = [int(round(t_end / dt)) for dt in dts]
        if any(s < 1 or abs(s * dt - t_end) > 1e-12 * t_end for s, dt in zip(steps, dts)):
            raise ValueError("every step size must divide t_end")
    tasks = [(method, problem, tables, hierarchy, float(dt), k_max, guess, streams[i],
              steps[i], coll_tol, N0) for i, dt in enumerate(dts)]
    if jobs > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, n)) as pool:
            results = list(pool.map(_cell_task, tasks))
    else:
        results = [_cell_task(t) for t in tasks]

    have_exact = True
    for i, (dt, res) in enumerate(zip(dts, results)):
        wall[i] = res["wall_ms"]
        if "failure" in res:
            failures[float(dt)] = res["failure"]
            continue
        for kind, row in res["errors"].items():
            err[kind][i] = row
        if res["coll_exact"] is None:
            have_exact = False
        else:
            coll_exact[i] = res["coll_exact"]
        E_max[i] = res["E_max"]

    series = {ReferenceKind.COLLOCATION: ErrorSeries(dts, err[ReferenceKind.COLLOCATION],
                                                     ReferenceKind.COLLOCATION)}
    if have_exact:
        for kind in (ReferenceKind.EXACT, ReferenceKind.LAST_NODE):
            series[kind] = ErrorSeries(dts, err[kind], kind)

    saturated = None
    orders = {}
    if have_exact:
        ecoll = err[ReferenceKind.COLLOCATION]
        saturated = ecoll <= saturation * coll_exact[:, None]
        for k in range(k_max + 1):
            try:
                orders[k] = fit_order(zip(dts, err[ReferenceKind.EXACT][:, k]), floor=floor,
                                      exclude=saturated[:, k])
            except InsufficientDataError:
                orders[k] = np.nan
    contraction = {}
    for k in range(1, k_max + 1):
        try:
            contraction[k] = contraction_slope(series[ReferenceKind.COLLOCATION], k, floor)
        except (InsufficientDataError, ZeroDivisionError):
            contraction[k] = np.nan
    return StudyResult(method, series, orders, contraction, E_max, wall, failures, saturated)
