"""Backend dispatch for the batched solver and covariance kernels.

The numba backend is used when numba imports and ``TLSPOSE_DISABLE_NUMBA``
is unset; otherwise the vectorised NumPy path runs.  Both accept the same
arrays and return the same fields.
"""

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import _kernels_numpy
from ._accel import NUMBA_AVAILABLE, default_backend
from ._kernels_numba import CONVERGED, MAX_ITER, NONSPD, STALLED, UNOBSERVABLE

__all__ = [
    "CONVERGED", "MAX_ITER", "UNOBSERVABLE", "NONSPD", "STALLED",
    "BatchSolution", "BatchAnalysis", "solve_batch", "analyze_batch",
    "get_backend", "set_backend", "use_backend",
]

_backend = default_backend()


def get_backend():
    return _backend


def set_backend(name):
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not NUMBA_AVAILABLE:
        raise RuntimeError("numba is not installed")
    _backend = name


@contextmanager
def use_backend(name):
    prev = _backend
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)


def _impl():
    if _backend == "numba":
        from . import _kernels_numba

        return _kernels_numba
    return _kernels_numpy


@dataclass
class BatchSolution:
    attitude: np.ndarray  # (N, 3, 3)
    translation: np.ndarray  # (N, 3)
    cost: np.ndarray  # (N,)
    iterations: np.ndarray  # (N,)
    status: np.ndarray  # (N,)
    steps: np.ndarray  # (N, max_iterations, 3): |da|, |dp|, cost after the step; NaN past the last


@dataclass
class BatchAnalysis:
    P_f: np.ndarray  # (N, 6, 6)
    b_hat: np.ndarray  # (N, n, 3)
    r_hat: np.ndarray
    cov_res_b: np.ndarray  # (N, n, 3, 3)
    cov_res_r: np.ndarray
    P_b: np.ndarray
    P_r: np.ndarray


def _f64(x):
    # Writable C-contiguous float64 only: numba compiles (and caches) a
    # separate specialisation for read-only or strided arrays.
    return np.require(x, dtype=np.float64, requirements=["C", "W"])


def solve_batch(r, b, R_r, R_b, R_rb, A0, max_iterations=50, step_tolerance=1e-10,
                cost_tolerance=1e-12, max_halvings=10):
    """Solve ``N`` instances sharing one set of noise models.

    ``r`` and ``b`` have shape ``(N, n, 3)``, noise blocks ``(n, 3, 3)``,
    starting attitudes ``(N, 3, 3)``.
    """
    out = _impl().solve_batch(
        _f64(r), _f64(b), _f64(R_r), _f64(R_b), _f64(R_rb), _f64(A0),
        int(max_iterations), float(step_tolerance), float(cost_tolerance), int(max_halvings),
    )
    return BatchSolution(*out)


def analyze_batch(A, p, r, b, R_r, R_b, R_rb):
    """Joint covariance, observation estimates and their covariances per sample."""
    out = _impl().analyze_batch(_f64(A), _f64(p), _f64(r), _f64(b), _f64(R_r), _f64(R_b), _f64(R_rb))
    return BatchAnalysis(*out)
