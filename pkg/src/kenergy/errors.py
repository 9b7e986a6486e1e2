"""Exception hierarchy shared by all kenergy modules."""


class KEnergyError(Exception):
    """Base class for all errors raised by this package."""


class NonConvexInput(KEnergyError, ValueError):
    pass


class DomainMismatch(KEnergyError, ValueError):
    pass


class DegenerateHessian(KEnergyError, ValueError):
    pass


class BoundaryDivergence(KEnergyError, ArithmeticError):
    pass


class MassDeficit(KEnergyError, ValueError):
    pass


class NonConvexDirection(KEnergyError, ValueError):
    pass


class EmptyFamily(KEnergyError, ValueError):
    pass


class Unbounded(KEnergyError, ArithmeticError):
    pass


class NonConvergence(KEnergyError, RuntimeError):
    """Iterative solver stopped before its tolerance was met.

    ``last_iterate`` and ``grad_norm`` describe where it stopped.
    """

    def __init__(self, message, last_iterate=None, grad_norm=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.grad_norm = grad_norm


class HypothesisFailed(KEnergyError):
    """A uniqueness-certificate stage did not pass."""

    def __init__(self, stage, message, diagnostics=None):
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage
        self.diagnostics = diagnostics or {}


class ConfigError(KEnergyError, ValueError):
    pass
