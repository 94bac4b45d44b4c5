"""Total-least-squares pose estimation from vector observations.

The estimator handles fully populated, correlated noise on both the
reference and body vectors, and comes with first-order covariances of the
pose, of the corrected observations and of their residuals.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    DegenerateRepresentation,
    MaxIterationsExceeded,
    NonSPDWeight,
    ObservabilityError,
    RankDeficientB,
    ScanFileError,
    TLSPoseError,
)
from .model import NoiseModel, ObservationPair, Pose, ProblemInstance, validate_instance  # noqa: E402
from .solver import PoseSolution, SolverConfig, solve_isotropic, solve_pose  # noqa: E402
from .analytics import AnalyticsReport, analyze, observability_check  # noqa: E402

__all__ = [
    "DegenerateRepresentation", "MaxIterationsExceeded", "NonSPDWeight", "ObservabilityError",
    "RankDeficientB", "ScanFileError", "TLSPoseError",
    "NoiseModel", "ObservationPair", "Pose", "ProblemInstance", "validate_instance",
    "PoseSolution", "SolverConfig", "solve_isotropic", "solve_pose",
    "AnalyticsReport", "analyze", "observability_check",
]
