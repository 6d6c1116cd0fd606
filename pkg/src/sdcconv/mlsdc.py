"""Two-level MLSDC with FAS coupling and the level transfer operators.

Spatial restriction is injection, spatial interpolation is piecewise
Lagrange of even order p on the p nearest coarse points. In time both
directions use Lagrange evaluation between the two node sets.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .collocation import lagrange_matrix
from .problems import SolverError
from .sweeper import (
    InitialGuess, SweepConfig, _watch_divergence, eval_nodes, make_initial_guess, sdc_sweep,
)


def _stencil_weights(points, x):
    """Lagrange weights for evaluating at x from values at ``points``."""
    return lagrange_matrix(points, [x])[0]


def _interp_dirichlet(n_fine, n_coarse, order):
    # coarse points extended by the two boundary points, whose values are zero
    H = 1.0 / (n_coarse + 1)
    h = 1.0 / (n_fine + 1)
    ext = np.arange(n_coarse + 2) * H
    rows, cols, vals = [], [], []
    for i in range(n_fine):
        x = (i + 1) * h
        if (i + 1) % 2 == 0:
            rows.append(i), cols.append((i + 1) // 2 - 1), vals.append(1.0)
            continue
        left = (i + 1) // 2
        start = min(max(left - order // 2 + 1, 0), n_coarse + 2 - order)
        idx = np.arange(start, start + order)
        w = _stencil_weights(ext[idx], x)
        for j, wj in zip(idx, w):
            if 1 <= j <= n_coarse:
                rows.append(i), cols.append(j - 1), vals.append(wj)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n_fine, n_coarse))


def _interp_periodic(n_fine, n_coarse, order):
    offsets = np.arange(-order // 2 + 1, order // 2 + 1)
    w = _stencil_weights(offsets.astype(float), 0.5)
    rows, cols, vals = [], [], []
    for j in range(n_coarse):
        rows.append(2 * j), cols.append(j), vals.append(1.0)
        for o, wo in zip(offsets, w):
            rows.append(2 * j + 1), cols.append((j + o) % n_coarse), vals.append(wo)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n_fine, n_coarse))


class SpatialTransfer:
    """Injection and piecewise Lagrange interpolation between nested grids.

    Parameters
    ----------
    n_fine, n_coarse : int
        Points per dimension. Dirichlet grids need n_fine = 2 n_coarse + 1,
        periodic grids n_fine = 2 n_coarse.
    order : int
        Even interpolation order p (number of coarse points per stencil).
    boundary : {"dirichlet", "periodic"}
    ndim : int
        1 or 2; in 2-d the 1-d operators act along both axes.
    """

    def __init__(self, n_fine, n_coarse, order=8, boundary="dirichlet", ndim=1):
        boundary = boundary.lower()
        if boundary not in ("dirichlet", "periodic"):
            raise ValueError(f"unknown boundary {boundary!r}")
        if order < 2 or order % 2:
            raise ValueError("interpolation order must be a positive even integer")
        # Dirichlet stencils may use the two boundary points as well
        available = n_coarse + 2 if boundary == "dirichlet" else n_coarse
        if order > available:
            raise ValueError(f"interpolation order {order} exceeds the {available} coarse "
                             f"points available")
        if ndim not in (1, 2):
            raise ValueError("only 1-d and 2-d grids are supported")
        expected = 2 * n_coarse + 1 if boundary == "dirichlet" else 2 * n_coarse
        if n_fine != expected:
            raise ValueError(
                f"{boundary} coarsening needs n_fine = {expected} for n_coarse = {n_coarse}")
        self.n_fine, self.n_coarse = int(n_fine), int(n_coarse)
        self.order, self.boundary, self.ndim = int(order), boundary, int(ndim)
        build = _interp_dirichlet if boundary == "dirichlet" else _interp_periodic
        self.P = build(self.n_fine, self.n_coarse, self.order)
        self.inject_index = (np.arange(1, n_fine, 2) if boundary == "dirichlet"
                             else np.arange(0, n_fine, 2))

    @property
    def fine_size(self):
        return self.n_fine**self.ndim

    @property
    def coarse_size(self):
        return self.n_coarse**self.ndim

    def restrict(self, u):
        """Injection of a single state (or the last axis of a stack)."""
        u = np.asarray(u)
        lead = u.shape[:-1]
        if self.ndim == 1:
            return u[..., self.inject_index]
        g = u.reshape(lead + (self.n_fine, self.n_fine))
        g = g[..., self.inject_index, :][..., self.inject_index]
        return g.reshape(lead + (self.coarse_size,))

    def interpolate(self, u):
        u = np.asarray(u)
        lead = u.shape[:-1]
        flat = u.reshape(-1, self.coarse_size)
        if self.ndim == 1:
            out = (self.P @ flat.T).T
        else:
            out = np.empty((flat.shape[0], self.n_fine, self.n_fine))
            for r, row in enumerate(flat):
                g = self.P @ row.reshape(self.n_coarse, self.n_coarse)
                out[r] = (self.P @ g.T).T
        return out.reshape(lead + (self.fine_size,))


class TemporalTransfer:
    """Lagrange evaluation between fine and coarse collocation nodes."""

    def __init__(self, fine_nodes, coarse_nodes):
        fine_nodes = np.asarray(fine_nodes, dtype=float)
        coarse_nodes = np.asarray(coarse_nodes, dtype=float)
        if coarse_nodes.size > fine_nodes.size:
            raise ValueError("coarse level cannot have more nodes than the fine level")
        self.fine_nodes, self.coarse_nodes = fine_nodes, coarse_nodes
        self.interpolation = lagrange_matrix(coarse_nodes, fine_nodes)
        self.restriction = lagrange_matrix(fine_nodes, coarse_nodes)


@dataclass(frozen=True)
class Level:
    problem: object
    tables: object

    @property
    def shape(self):
        return (self.tables.num_nodes, self.problem.size)


@dataclass(frozen=True)
class LevelHierarchy:
    """Fine and coarse level plus the transfers connecting them.

    With neither transfer the coarse level must equal the fine one; this
    degenerate mode is useful to check the FAS bookkeeping.
    """

    fine: Level
    coarse: Level
    spatial: Optional[SpatialTransfer] = None
    temporal: Optional[TemporalTransfer] = None
    config: SweepConfig = SweepConfig()

    def __post_init__(self):
        Mh, Nh = self.fine.shape
        MH, NH = self.coarse.shape
        if self.spatial is None:
            if Nh != NH:
                raise ValueError("levels differ in space but no spatial transfer is given")
        elif (self.spatial.fine_size, self.spatial.coarse_size) != (Nh, NH):
            raise ValueError("spatial transfer does not match the level sizes")
        if self.temporal is None:
            if Mh != MH:
                raise ValueError("levels differ in time but no temporal transfer is given")
        elif (self.temporal.fine_nodes.size, self.temporal.coarse_nodes.size) != (Mh, MH):
            raise ValueError("temporal transfer does not match the node counts")

    def _check(self, U, level):
        U = np.asarray(U, dtype=float)
        if U.shape != level.shape:
            raise ValueError(f"node array has shape {U.shape}, expected {level.shape}")
        return U

    def restrict(self, U_h):
        U = self._check(U_h, self.fine)
        if self.temporal is not None:
            U = self.temporal.restriction @ U
        if self.spatial is not None:
            U = self.spatial.restrict(U)
        return U

    def interpolate(self, U_H):
        U = self._check(U_H, self.coarse)
        if self.spatial is not None:
            U = self.spatial.interpolate(U)
        if self.temporal is not None:
            U = self.temporal.interpolation @ U
        return U

    def restrict_state(self, u_h):
        u_h = np.asarray(u_h, dtype=float)
        return u_h if self.spatial is None else self.spatial.restrict(u_h)


def compute_tau(hier, U_h, dt, F_h=None, F_H=None):
    """FAS correction R(dt Q_h F_h(U_h)) - dt Q_H F_H(R U_h)."""
    U_h = hier._check(U_h, hier.fine)
    if F_h is None:
        F_h = eval_nodes(hier.fine.problem, U_h)
    if F_H is None:
        F_H = eval_nodes(hier.coarse.problem, hier.restrict(U_h))
    return (hier.restrict(dt * (hier.fine.tables.Q @ F_h))
            - dt * (hier.coarse.tables.Q @ F_H))


def mlsdc_iteration(hier, U_h, u0_h, dt):
    """One two-level cycle: tau, coarse sweep, coarse correction, fine sweep."""
    fine, coarse, cfg = hier.fine, hier.coarse, hier.config
    U_h = hier._check(U_h, fine)
    u0_H = hier.restrict_state(u0_h)
    RU = hier.restrict(U_h)
    F_RU = eval_nodes(coarse.problem, RU)
    tau = compute_tau(hier, U_h, dt, F_H=F_RU)
    try:
        U_H = sdc_sweep(RU, u0_H, coarse.tables, dt, coarse.problem, tau=tau, F_old=F_RU,
                        config=cfg)
    except SolverError as err:
        raise SolverError(f"coarse sweep (step 2): {err}", residual=err.residual,
                          node=err.node) from err
    U_half = U_h + hier.interpolate(U_H - RU)
    try:
        return sdc_sweep(U_half, u0_h, fine.tables, dt, fine.problem, config=cfg)
    except SolverError as err:
        raise SolverError(f"fine sweep (step 4): {err}", residual=err.residual,
                          node=err.node) from err


def run_mlsdc(hier, dt, k_max, U_init=None, u0=None, guess=InitialGuess.SPREAD, seed=None):
    """Fine-level iterates U_h^(0), ..., U_h^(k_max)."""
    if k_max < 0:
        raise ValueError("k_max must be non-negative")
    fine = hier.fine
    u0 = fine.problem.u0 if u0 is None else np.asarray(u0, dtype=float)
    if U_init is None:
        U_init = make_initial_guess(fine.problem, fine.tables.num_nodes, guess, seed=seed,
                                    u0=u0)
    iterates = [hier._check(U_init, fine).copy()]
    increments = []
    for k in range(k_max):
        U = mlsdc_iteration(hier, iterates[-1], u0, dt)
        increments.append(np.max(np.abs(U - iterates[-1])))
        _watch_divergence(increments, k + 1)
        iterates.append(U)
    return iterates
