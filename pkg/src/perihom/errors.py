"""Exception types shared across the package."""


class GeometryError(ValueError):
    """Invalid geometric specification (hole touching the boundary, bad radii)."""


class MeshingError(RuntimeError):
    """The mesher produced a non-conforming or degenerate triangulation."""


class ConfigError(ValueError):
    """Invalid run configuration; carries the full list of violations."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class DomainError(ValueError):
    """A point lies outside the domain of an evaluation."""


class TransformError(ValueError):
    """The evolving-geometry map degenerated (non-positive radial derivative)."""


class SolverError(RuntimeError):
    """Linear solver failed to converge; carries the residual history."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = [] if residuals is None else list(residuals)


class StepSizeError(RuntimeError):
    """Fixed-point sweeps did not contract; advises a smaller time step."""
