"""Exception hierarchy shared by the solvers."""

from __future__ import annotations


class GhostflowError(RuntimeError):
    """Base class for all solver failures raised by this package."""


class CompatibilityViolation(GhostflowError):
    """Data violates a solvability condition (e.g. a Neumann problem whose
    right-hand side does not integrate to zero)."""

    def __init__(self, message: str, integral: float | None = None):
        super().__init__(message)
        self.integral = integral


class SmallnessViolation(GhostflowError):
    """A smallness precondition required for a well-posed solve failed."""

    def __init__(self, message: str, value: float | None = None):
        super().__init__(message)
        self.value = value


class NonPositiveTemperature(GhostflowError):
    """A temperature field that must be positive is not."""


class FixedPointDivergence(GhostflowError):
    """A fixed-point iteration failed to converge."""

    def __init__(self, message: str, history: list[float] | None = None):
        super().__init__(message)
        self.history = list(history or [])


class BallEscape(GhostflowError):
    """An outer iterate left the admissible ball ``||u||_K + ||theta||_H3 <= A``."""

    def __init__(self, message: str, norms: list[float] | None = None, radius: float | None = None):
        super().__init__(message)
        self.norms = list(norms or [])
        self.radius = radius


class NewtonDivergence(GhostflowError):
    """Damped Newton failed (step halving exhausted or iteration cap hit)."""

    def __init__(self, message: str, history: list[float] | None = None):
        super().__init__(message)
        self.history = list(history or [])


class JacobianSingular(GhostflowError):
    """The Newton Jacobian could not be factorized."""


class LinearSolverError(GhostflowError):
    """An iterative linear solve did not reach its tolerance."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual
