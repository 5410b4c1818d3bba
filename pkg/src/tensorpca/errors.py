"""Exception types raised across the package."""


class TensorPCAError(Exception):
    """Base class for all package errors."""


class DimensionMismatchError(TensorPCAError, ValueError):
    """Vector lengths or tensor shapes are incompatible."""


class NonFiniteError(TensorPCAError, ArithmeticError):
    """A tensor or a contraction produced NaN or Inf."""


class DegenerateDirectionError(TensorPCAError, ArithmeticError):
    """A power step produced a (numerically) zero vector.

    Callers are expected to draw a fresh initialization. ``trial`` and
    ``iteration`` are filled in by the iteration engines when known.
    """

    def __init__(self, message, trial=None, iteration=None):
        super().__init__(message)
        self.trial = trial
        self.iteration = iteration


class UnsupportedOrderError(TensorPCAError, NotImplementedError):
    """The operation is not defined for this tensor order."""


class SingularPlateauError(TensorPCAError, ArithmeticError):
    """The closed-form plateau expression has a vanishing denominator."""


class NoConvergedTrialsError(TensorPCAError, RuntimeError):
    """Every trial of a multi-start run failed."""
