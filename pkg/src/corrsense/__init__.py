"""Joint recovery of a structured signal and a structured corruption from
noisy, corrupted linear measurements y = Phi x + v + z."""

from .errors import DimensionMismatchError, InnerSolverError, InvalidSpecError, SolverDivergenceError
from .problem import (
    EnsembleSpec,
    NoiseSpec,
    ProblemInstance,
    StructureSpec,
    make_instance,
)
from .regularizers import Regularizer, SubdiffAnchor, make_regularizer
from .solvers import (
    SolverConfig,
    SolverResult,
    solve_constrained_corruption,
    solve_constrained_signal,
    solve_fully_penalized,
    solve_partially_penalized,
)

__version__ = "0.1.0"

__all__ = [
    "DimensionMismatchError",
    "EnsembleSpec",
    "InnerSolverError",
    "InvalidSpecError",
    "NoiseSpec",
    "ProblemInstance",
    "Regularizer",
    "SolverConfig",
    "SolverDivergenceError",
    "SolverResult",
    "StructureSpec",
    "SubdiffAnchor",
    "make_instance",
    "make_regularizer",
    "solve_constrained_corruption",
    "solve_constrained_signal",
    "solve_fully_penalized",
    "solve_partially_penalized",
]
