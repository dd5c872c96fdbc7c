"""Exception hierarchy shared by all erds modules."""


class ErdsError(Exception):
    """Base class for every error raised by erds."""


class DomainError(ErdsError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ArgumentError(ErdsError, ValueError):
    """Shapes or lengths of arguments are inconsistent."""


class ConfigError(ErdsError):
    """Invalid scenario configuration.

    ``errors`` holds every problem found, not only the first one.
    """

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class PreconditionError(ErdsError, ValueError):
    """Inputs violate a documented precondition of an inequality oracle."""


class ModelIncompatibleError(ErdsError, ValueError):
    """The model does not satisfy the hypotheses an estimate relies on."""


class NumericalError(ErdsError, RuntimeError):
    """A numerical procedure failed (non-convergence, singular system...).

    Optional context is attached as attributes: ``best`` (best iterate),
    ``time`` (simulation time) and ``extrema`` (field min/max).
    """

    def __init__(self, message, *, best=None, time=None, extrema=None):
        super().__init__(message)
        self.best = best
        self.time = time
        self.extrema = extrema


class DegenerateMobilityError(NumericalError):
    """The scalar mobility M(u, e) vanished."""


class StepRejected(NumericalError):
    """A time step produced a non-positive state and must be retried."""
