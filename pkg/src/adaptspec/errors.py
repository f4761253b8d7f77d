"""Exception types shared across the package."""


class AdaptspecError(Exception):
    """Base class for errors raised by this package."""


class DataError(AdaptspecError, ValueError):
    """Input data is malformed (bad cells, too few rows, constant columns)."""


class FitError(AdaptspecError, RuntimeError):
    """The parametric fit could not be computed."""


class DegenerateBandwidthError(AdaptspecError, RuntimeError):
    """A smoother produced unusable weights at some bandwidth.

    Attributes
    ----------
    h : float
        The offending bandwidth.
    points : tuple of int
        Indices of the observations responsible, when known.
    """

    def __init__(self, message, h=None, points=()):
        super().__init__(message)
        self.h = h
        self.points = tuple(points)
