"""Exception types raised by the solvers, smoothers and spectral tools."""


class BlockSmoothError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(BlockSmoothError, ValueError):
    pass


class SizeCapExceeded(BlockSmoothError, ValueError):
    def __init__(self, size, cap):
        super().__init__(f"matrix of order {size} exceeds the dense cap {cap}")
        self.size = size
        self.cap = cap


class NotSymmetric(BlockSmoothError, ValueError):
    pass


class PivotNotPositiveDefinite(BlockSmoothError, ArithmeticError):
    """A pivot block failed its Cholesky factorization.

    Attributes
    ----------
    k : int
        1-based block index at which the failure happened.
    lambda_min : float
        Smallest eigenvalue of the offending block (diagnostic only).
    stage : str
        Which sweep produced the block: ``forward``, ``backward``,
        ``combined`` or ``exchange``.
    """

    def __init__(self, k, lambda_min, stage="forward"):
        super().__init__(
            f"{stage} pivot at block {k} is not positive definite "
            f"(lambda_min = {lambda_min!r})"
        )
        self.k = k
        self.lambda_min = lambda_min
        self.stage = stage


class CovarianceNotPD(BlockSmoothError, ValueError):
    def __init__(self, what, k):
        super().__init__(f"{what} at step {k} is not positive definite")
        self.what = what
        self.k = k


class CombinedNotPD(BlockSmoothError, ArithmeticError):
    def __init__(self, k):
        super().__init__(f"combined two-filter matrix at step {k} is not positive definite")
        self.k = k


class MeasurementInfoSingular(BlockSmoothError, ValueError):
    def __init__(self, k):
        super().__init__(
            f"measurement information H_k^T R_k^-1 H_k at step {k} is singular; "
            "the Woodbury path needs it invertible at every step"
        )
        self.k = k


class IdentityViolation(BlockSmoothError, AssertionError):
    def __init__(self, k, which, magnitude):
        super().__init__(f"identity {which!r} violated at step {k}: relative error {magnitude:.3e}")
        self.k = k
        self.which = which
        self.magnitude = magnitude


class SingularInput(BlockSmoothError, ValueError):
    pass


class VacuousBound(BlockSmoothError, ArithmeticError):
    pass


class EmptySequence(BlockSmoothError, ValueError):
    pass


class BadParameters(BlockSmoothError, ValueError):
    pass
