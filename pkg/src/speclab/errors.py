"""Exception taxonomy shared across the package."""


class SpeclabError(Exception):
    """Base class for all speclab failures (CLI exit code 3)."""


class DomainError(SpeclabError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class AccuracyError(SpeclabError):
    """A grid or step size is too coarse to resolve the requested quantity."""


class AssemblyError(SpeclabError):
    """Operator assembly failed (e.g. nonpositive density from a corrupt profile)."""


class SupportError(SpeclabError, ValueError):
    """A cutoff or test section does not fit inside the grid."""


class PreconditionError(SpeclabError):
    """A stated hypothesis of an audit is violated by the supplied data."""


class EigensolverError(SpeclabError):
    """The tridiagonal eigensolver could not meet its residual contract."""


class ResolventError(SpeclabError):
    """A resolvent was requested at (or too close to) a spectral point."""


class SlowConvergenceError(SpeclabError):
    """A truncated integral cannot reach the requested accuracy.

    Carries ``required_tau_max`` so callers can retry with a longer horizon.
    """

    def __init__(self, message: str, required_tau_max: float | None = None):
        super().__init__(message)
        self.required_tau_max = required_tau_max


class ConfigError(SpeclabError):
    """Aggregated configuration validation failure (CLI exit code 2)."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in self.problems))
