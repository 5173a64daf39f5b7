"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class MeshError(RuntimeError):
    """Mesh construction or validity failure."""


class AssemblyError(RuntimeError):
    """Finite-element assembly failure (e.g. degenerate triangle)."""


class SolverError(RuntimeError):
    """Linear or nonlinear solver failure."""


class AscentError(SolverError):
    """Inner concave maximization did not converge.

    Carries the best value found so far, which is a valid lower bound
    on the true maximum.
    """

    def __init__(self, message, lower_bound):
        super().__init__(message)
        self.lower_bound = lower_bound


class InfeasibleFlowError(RuntimeError):
    """Network flow problem has no feasible solution."""
