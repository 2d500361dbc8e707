"""Exception hierarchy shared by every reflectron module."""


class ReflectronError(Exception):
    """Base class for all errors raised by this package."""


class InvalidChain(ReflectronError, ValueError):
    """Matrix is not a column-stochastic transition matrix."""


class NonErgodic(ReflectronError):
    """Chain is reducible or periodic."""


class NoConvergence(ReflectronError):
    """An iterative method hit its iteration cap."""


class NumericalFailure(ReflectronError):
    """A dense linear-algebra routine failed."""


class ZeroStationaryMass(ReflectronError):
    """Some stationary probability is zero where a positive value is required."""


class DimensionMismatch(ReflectronError, ValueError):
    pass


class GapUnreachable(ReflectronError):
    pass


class DanglingClip(ReflectronError):
    """A clip has no outgoing weight inside the requested subnetwork."""


class ZeroFlagMass(ReflectronError):
    pass


class RetryCapExceeded(ReflectronError):
    """A deliberation loop ran past its configured retry cap."""


class ActionNotFlagged(ReflectronError, KeyError):
    pass


class AncillaNotClean(ReflectronError):
    pass


class DegenerateBranch(ReflectronError):
    pass


class DegenerateData(ReflectronError, ValueError):
    pass
