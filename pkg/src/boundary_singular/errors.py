"""Exception types raised across the package."""


class BoundarySingularError(Exception):
    """Base class."""


class InvalidGridError(BoundarySingularError, ValueError):
    pass


class ConfigError(BoundarySingularError, ValueError):
    """A parameter lies outside an admissible window.

    The message names the violated constraint formula.
    """


class PreconditionError(BoundarySingularError, ValueError):
    pass


class NoSolutionError(BoundarySingularError):
    """Shooting could not bracket a positive solution."""


class ContractionError(BoundarySingularError):
    """A fixed-point or perturbation iteration failed to contract."""


class SingularSystemError(BoundarySingularError):
    pass


class AssemblyError(BoundarySingularError):
    """An assembled solution violated positivity."""


class TruncationError(BoundarySingularError):
    """Domain widening did not stabilise."""


class StageFailure(BoundarySingularError):
    pass
