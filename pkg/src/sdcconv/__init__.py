"""Spectral deferred corrections and two-level MLSDC with convergence diagnostics."""
from .collocation import (
    FactorizationError, PreconditionerKind, QuadratureTables, collocation_residual,
    compute_nodes, compute_Q, compute_QDelta, lagrange_matrix,
)
from .diagnostics import (
    ErrorSeries, FourierTail, InsufficientDataError, Method, ReferenceKind,
    contraction_slope, error_inf, fit_order, fourier_tail, last_node_error,
    run_convergence_study,
)
from .mlsdc import (
    Level, LevelHierarchy, SpatialTransfer, TemporalTransfer, compute_tau, mlsdc_iteration,
    run_mlsdc,
)
from .problems import AllenCahn2D, Auzinger, Heat1D, IVProblem, LinearSystem, SolverError
from .sweeper import (
    DivergenceError, InitialGuess, SweepConfig, make_initial_guess, picard_sweep,
    reference_solution, run_sdc, sdc_sweep, solve_collocation,
)

__version__ = "0.1.0"
