"""Exception types shared across the package."""


class GneflexError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(GneflexError):
    """Invalid or unresolvable run configuration."""


class GraphError(GneflexError):
    """Invalid communication graph (bad edges, disconnected, ...)."""


class InfeasibleError(GneflexError):
    """Empty feasible set, or a projection/best-response target with no
    admissible point."""


class TuningError(GneflexError):
    """Step-size preconditions violated: cocoercivity not guaranteed, empty
    gain interval, or an indefinite/singular preconditioner."""


class ConvergenceError(GneflexError):
    """An iterative solve hit its iteration cap before reaching tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
