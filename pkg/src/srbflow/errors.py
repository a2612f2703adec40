"""Exception hierarchy shared by all srbflow modules."""


class SrbFlowError(Exception):
    """Base class for every error raised by srbflow."""


# spectral_core
class GapViolation(SrbFlowError):
    pass


class QuadratureDivergence(SrbFlowError):
    pass


class SingularResolvent(SrbFlowError):
    pass


# map_model
class DegenerateJacobian(SrbFlowError):
    pass


class NotExpanding(SrbFlowError):
    """Raised when the expansion margin check fails.

    Carries the offending grid point and the smallest singular value found there.
    """

    def __init__(self, point, value, required):
        self.point = None if point is None else [float(p) for p in point]
        self.value = float(value)
        self.required = float(required)
        where = "" if self.point is None else f" at x={self.point}"
        super().__init__(
            f"map is not expanding: expansion {self.value:.6g}{where} "
            f"is below {self.required:.6g}"
        )


class BranchNewtonFailure(SrbFlowError):
    pass


class DimMismatch(SrbFlowError):
    pass


class CutoffExceeded(SrbFlowError):
    pass


# transfer_op
class GridMismatch(SrbFlowError):
    pass


class NoConvergence(SrbFlowError):
    pass


class NegativeDensity(SrbFlowError):
    pass


class GapEstimateUnstable(SrbFlowError):
    pass


# linear_response / entropy_gradient
class SeriesNotConverging(SrbFlowError):
    pass


class StepTooLarge(SrbFlowError):
    pass


class FormsDisagree(SrbFlowError):
    pass


class PairingCheckFailure(SrbFlowError):
    pass


class GradientUnavailable(SrbFlowError):
    pass


# cli_io
class ConfigError(SrbFlowError):
    pass
