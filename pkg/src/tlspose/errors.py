"""Exception types raised by the estimator and its front ends."""

import numpy as np


class TLSPoseError(Exception):
    """Base class for all package errors."""


class ObservabilityError(TLSPoseError):
    """The attitude is not observable from the supplied observations.

    Parameters
    ----------
    message : str
        Human readable diagnostic.
    null_direction : ndarray, shape (3,), optional
        Unit vector spanning the (numerical) null space of the attitude
        information matrix, when one could be identified.
    attitude : ndarray, shape (3, 3), optional
        Attitude at which the information matrix was evaluated.
    """

    def __init__(self, message, null_direction=None, attitude=None):
        super().__init__(message)
        self.null_direction = None if null_direction is None else np.asarray(null_direction, float)
        self.attitude = None if attitude is None else np.asarray(attitude, float)


class RankDeficientB(ObservabilityError):
    """The attitude profile matrix has rank below two."""


class NonSPDWeight(TLSPoseError):
    """A noise covariance or derived weight matrix is not positive definite."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class MaxIterationsExceeded(TLSPoseError):
    """Raised only on request; ``solve_pose`` normally returns the best iterate."""


class DegenerateRepresentation(TLSPoseError):
    """Euler angles are undefined near gimbal lock."""


class ScanFileError(TLSPoseError):
    """A scan file could not be parsed or failed validation.

    ``path`` names the offending location inside the document, e.g.
    ``observations[1].R``.
    """

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.message = message
        self.path = path
