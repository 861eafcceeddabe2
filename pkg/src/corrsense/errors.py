"""Exception types raised across the package."""


class InvalidSpecError(ValueError):
    """A structure, ensemble, noise, solver or config spec is malformed."""


class DimensionMismatchError(ValueError):
    pass


class SolverDivergenceError(RuntimeError):
    """The iterates or the objective became non-finite."""


class InnerSolverError(RuntimeError):
    pass
