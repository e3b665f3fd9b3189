"""Exception hierarchy for gwspine."""


class GWSpineError(Exception):
    """Base class for all errors raised by this package."""


class EmptySupport(GWSpineError, ValueError):
    pass


class NegativeWeight(GWSpineError, ValueError):
    pass


class PositiveP1(GWSpineError, ValueError):
    """Offspring law puts mass on k=1.

    Single-child events have to be folded into the motion (as extra jumps)
    and the branching rate reduced accordingly.
    """


class ZeroMean(GWSpineError, ValueError):
    pass


class Subcritical(GWSpineError, ValueError):
    pass


class PopulationCapExceeded(GWSpineError, RuntimeError):
    """The node cap was hit; ``partial`` carries what was built so far."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class BeyondHorizon(GWSpineError, ValueError):
    pass


class NotAlive(GWSpineError, ValueError):
    pass


class NonFiniteState(GWSpineError, FloatingPointError):
    pass


class KernelArityMismatch(GWSpineError, ValueError):
    pass


class PathsNotRecorded(GWSpineError, ValueError):
    pass


class DegeneratePairs(GWSpineError, ValueError):
    pass


class DivergenceDetected(GWSpineError, RuntimeError):
    pass


class AllExtinct(GWSpineError, RuntimeError):
    pass


class QuadratureUnderResolved(GWSpineError, RuntimeError):
    pass


class GridUnderResolved(GWSpineError, RuntimeError):
    pass


class UnknownModel(GWSpineError, KeyError):
    pass


class InvalidParameters(GWSpineError, ValueError):
    pass


class ConfigError(GWSpineError, ValueError):
    pass


class UnknownSeries(GWSpineError, KeyError):
    pass
