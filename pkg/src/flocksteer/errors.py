"""Exception hierarchy shared by the model, integrator and CLI."""


class FlockError(Exception):
    """Base class for all errors raised by flocksteer."""


class DomainError(FlockError, ValueError):
    """Input outside the domain of an operation (non-finite, wrong shape, bad parameter)."""


class DegenerateInfluenceError(FlockError, ArithmeticError):
    """Raw influence weights underflowed, so strict positivity can no longer be guaranteed."""


class IntegrationError(FlockError):
    """Time integration aborted. ``last_t`` is the last time with a valid state."""

    def __init__(self, message, last_t):
        super().__init__(f"{message} (last valid t={last_t!r})")
        self.last_t = last_t


class StiffnessError(IntegrationError):
    """Adaptive step size fell below the configured minimum."""


class SamplingError(FlockError):
    """A trajectory is sampled too coarsely for a finite-difference diagnostic."""


class ConfigError(FlockError):
    """Invalid experiment configuration.

    ``field`` is a dotted path into the config tree and ``line`` the 1-based
    source line when it could be located.
    """

    def __init__(self, message, field=None, line=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.field = field
        self.line = line
