"""Exception types shared across the solver suite."""


class HdRobustError(Exception):
    """Base class for all package errors."""


class QuadratureFailure(HdRobustError):
    """An adaptive integral did not reach the requested tolerance."""


class NonConvergedLimit(HdRobustError):
    """Successive estimates of a numerical limit differ beyond tolerance."""


class InfiniteNoiseVariance(HdRobustError):
    """The square-loss channel needs a finite noise second moment."""


class DegenerateDenominator(HdRobustError):
    """Ridge prior update hit lambda + v_hat <= 0."""


class NotConverged(HdRobustError):
    """Fixed-point iteration ran out of iterations.

    Carries the partial result (when available) as ``.solution``.
    """

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class RootNotBracketed(HdRobustError):
    """Scalar root-finding could not bracket a solution."""


class InsufficientPoints(HdRobustError):
    """A regression/fit was asked to run on too few points."""


class SingularSystem(HdRobustError):
    """Unregularised normal equations are rank deficient."""


class ConfigError(HdRobustError):
    """Experiment configuration is invalid; message names the offending key."""
