"""Exception hierarchy shared by all polaron_lab modules."""


class PolaronLabError(Exception):
    """Base class for every error raised by this package."""


class AllZero(PolaronLabError, ValueError):
    pass


class NonFinite(PolaronLabError, ValueError):
    pass


class NonPositivePsi(PolaronLabError, ValueError):
    pass


class GridTooCoarse(PolaronLabError, RuntimeError):
    pass


class NoConvergence(PolaronLabError, RuntimeError):
    """Raised when an iterative solver exhausts its iteration cap.

    The last residual is kept on the instance so callers (and the CLI) can
    report it.
    """

    def __init__(self, message, residual=float("nan"), iterations=0, partial=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.partial = partial


class SingularPair(PolaronLabError, ValueError):
    pass


class PinnedNode(PolaronLabError, IndexError):
    pass


class InsufficientSamples(PolaronLabError, ValueError):
    pass


class LagTooLong(PolaronLabError, ValueError):
    pass


class LagMismatch(PolaronLabError, ValueError):
    pass


class LatticeMismatch(PolaronLabError, ValueError):
    pass


class ConfigError(PolaronLabError, ValueError):
    pass


class MissingInput(PolaronLabError, FileNotFoundError):
    pass
