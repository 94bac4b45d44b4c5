"""Analytic error covariances of the TLS pose estimate.

Everything here is first order in the measurement noise and is evaluated at
the supplied pose, normally the converged estimate.  Notation follows the
solver: ``W_i = Q_i^-1``, ``A_i = [A r_i x]``, ``S = (sum W_i)^-1`` and
``A_bar = S sum W_i A_i``.  The attitude error is left-multiplicative,
``A_hat = exp(-[da x]) A``.
"""

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .errors import ObservabilityError
from .geometry import cross_matrix
from .solver import (
    attitude_hessian,
    attitude_profile_matrix,
    check_attitude_information,
    compute_q_lambda,
    initial_attitude,
    profile_rank,
)

__all__ = [
    "ObservationAnalytics",
    "AnalyticsReport",
    "ObservabilityDiagnosis",
    "attitude_covariance",
    "translation_covariance",
    "fim",
    "joint_covariance",
    "a_bar",
    "estimate_observations",
    "residual_covariances",
    "estimate_covariances",
    "attitude_obs_cross_covariance",
    "observability_check",
    "analyze",
    "isotropic_hessian",
    "isotropic_translation_covariance",
    "isotropic_estimates",
    "isotropic_residual_covariances",
    "isotropic_estimate_covariances",
]


def _sym(m):
    return 0.5 * (m + np.swapaxes(m, -1, -2))


@dataclass
class ObservationAnalytics:
    b_hat: np.ndarray
    r_hat: np.ndarray
    cov_res_b: np.ndarray
    cov_res_r: np.ndarray
    P_b: np.ndarray
    P_r: np.ndarray
    C: np.ndarray
    D: np.ndarray


@dataclass
class AnalyticsReport:
    """Covariance suite at one pose.

    Attributes
    ----------
    P_delta_alpha : (3, 3) attitude error covariance, rad^2
    cov_p : (3, 3) translation covariance, m^2
    P_f : (6, 6) joint covariance of (da, dp)
    A_bar : (3, 3)
    fim : (6, 6) Fisher information
    H : (3, 3) attitude information with the translation eliminated
    S_lambda : (3, 3)
    per_observation : list of ObservationAnalytics
    """

    P_delta_alpha: np.ndarray
    cov_p: np.ndarray
    P_f: np.ndarray
    A_bar: np.ndarray
    fim: np.ndarray
    H: np.ndarray
    S_lambda: np.ndarray
    per_observation: List[ObservationAnalytics]


@dataclass
class ObservabilityDiagnosis:
    rank_of_B: int
    smallest_H_eigenvalue: float
    null_direction: Optional[np.ndarray] = None
    attitude: Optional[np.ndarray] = None

    @property
    def observable(self):
        return self.rank_of_B >= 2 and self.null_direction is None


def _weights(inst, A):
    return np.array([np.linalg.inv(compute_q_lambda(A, nm)) for nm in inst.noises])


def _a_mats(inst, A):
    return np.array([cross_matrix(a) for a in inst.r_tilde @ np.asarray(A, dtype=float).T])


def _g_mats(inst, A):
    """``G_i = [A_i, -I]``, the sensitivity of residual ``i`` to ``(da, dp)``."""
    a = _a_mats(inst, A)
    G = np.zeros((inst.n, 3, 6))
    G[:, :, :3] = a
    G[:, :, 3:] = -np.eye(3)
    return G


def attitude_covariance(H, attitude=None):
    """``P_da = H^-1``.

    Raises
    ------
    ObservabilityError
        If ``H`` is singular or has condition number above ``1e12``.
    """
    H = np.asarray(H, dtype=float)
    check_attitude_information(H, attitude)
    return _sym(np.linalg.inv(H))


def translation_covariance(S_lambda, A_bar, P_delta_alpha):
    """``cov(p) = S + A_bar P_da A_bar^T``."""
    return _sym(S_lambda + A_bar @ P_delta_alpha @ A_bar.T)


def a_bar(inst, A):
    """``A_bar = S sum W_i A_i`` and ``S``."""
    w = _weights(inst, A)
    s = np.linalg.inv(w.sum(axis=0))
    return s @ np.sum(w @ _a_mats(inst, A), axis=0), _sym(s)


def fim(inst, A):
    """Fisher information of ``(da, dp)``.

    ``F = [[sum A_i^T W_i A_i, -sum A_i^T W_i], [-sum W_i A_i, sum W_i]]``.
    """
    G = _g_mats(inst, A)
    w = _weights(inst, A)
    return _sym(np.sum(np.swapaxes(G, 1, 2) @ w @ G, axis=0))


def joint_covariance(inst, A):
    """``P_f = F^-1``.

    Raises
    ------
    ObservabilityError
        If the attitude block of the information is singular.
    """
    A = np.asarray(A, dtype=float)
    check_attitude_information(attitude_hessian(A, inst), A)
    return _sym(np.linalg.inv(fim(inst, A)))


def _cd(inst, A):
    A = np.asarray(A, dtype=float)
    w = _weights(inst, A)
    C = (np.swapaxes(inst.R_rb, 1, 2) @ A.T - inst.R_b) @ w
    D = (inst.R_r @ A.T - inst.R_rb) @ w
    return w, C, D


def estimate_observations(inst, pose):
    """Noise-free estimates of the observation vectors.

    Returns
    -------
    b_hat, r_hat : ndarray, shape (n, 3)
        ``b_i + C_i e_i`` and ``r_i + D_i e_i``; they satisfy
        ``b_hat = A r_hat - p`` exactly at any pose.
    """
    A, p = pose.attitude, pose.translation
    _, C, D = _cd(inst, A)
    e = inst.b_tilde - inst.r_tilde @ A.T + p
    return inst.b_tilde + np.einsum("nij,nj->ni", C, e), inst.r_tilde + np.einsum("nij,nj->ni", D, e)


def residual_covariances(inst, pose, P_f):
    """Covariances of ``b_hat - b`` and ``r_hat - r`` (measurement residuals).

    ``C_i (Q_i - G_i P_f G_i^T) C_i^T`` and the ``D_i`` analogue.
    """
    A = pose.attitude
    w, C, D = _cd(inst, A)
    G = _g_mats(inst, A)
    m = np.linalg.inv(w) - G @ P_f @ np.swapaxes(G, 1, 2)
    return _sym(C @ m @ np.swapaxes(C, 1, 2)), _sym(D @ m @ np.swapaxes(D, 1, 2))


def estimate_covariances(inst, pose, P_f):
    """Covariances of the estimate errors ``b_hat - b_true``, ``r_hat - r_true``.

    ``P_b = R_b + cov_res_b + X + X^T`` with
    ``X = C (I - G P_f G^T W)(R_b - A R_rb)``; for the reference vectors
    ``Y = D (I - G P_f G^T W)(R_rb^T - A R_r)``.  The last factor is the
    covariance of ``e_i`` with the measurement noise, so the cross-correlation
    block enters both terms.
    """
    A = np.asarray(pose.attitude, dtype=float)
    w, C, D = _cd(inst, A)
    cov_res_b, cov_res_r = residual_covariances(inst, pose, P_f)
    G = _g_mats(inst, A)
    t = np.eye(3) - G @ P_f @ np.swapaxes(G, 1, 2) @ w
    X = C @ t @ (inst.R_b - A @ inst.R_rb)
    Y = D @ t @ (np.swapaxes(inst.R_rb, 1, 2) - A @ inst.R_r)
    P_b = inst.R_b + cov_res_b + X + np.swapaxes(X, 1, 2)
    P_r = inst.R_r + cov_res_r + Y + np.swapaxes(Y, 1, 2)
    return _sym(P_b), _sym(P_r)


def attitude_obs_cross_covariance(inst, A):
    """``E{da da_i^T}`` with ``da_i = db_i - A dr_i``, per observation.

    To first order ``da = H^-1 sum_j (A_j - A_bar)^T W_j da_j``, hence
    ``E{da da_i^T} = H^-1 (A_i - A_bar)^T``.

    Returns
    -------
    ndarray, shape (n, 3, 3)
    """
    A = np.asarray(A, dtype=float)
    hinv = attitude_covariance(attitude_hessian(A, inst), A)
    ab, _ = a_bar(inst, A)
    return np.array([hinv @ (ai - ab).T for ai in _a_mats(inst, A)])


def observability_check(inst, attitude=None):
    """Rank of the unit-weight attitude profile matrix and conditioning of ``H``.

    ``H`` is evaluated at ``attitude`` (default: the unit-weight SVD
    attitude used to start the solver).  ``null_direction`` is the
    eigenvector of the smallest eigenvalue when ``H`` is numerically
    singular; for two observations it is parallel to ``A (r_1 - r_2)``.
    """
    r, b = inst.r_tilde, inst.b_tilde
    B, _, _ = attitude_profile_matrix(r, b, np.ones(inst.n))
    rank = profile_rank(B, r, b)
    A = initial_attitude(inst) if attitude is None else np.asarray(attitude, dtype=float)
    H = attitude_hessian(A, inst)
    lam = np.linalg.eigvalsh(H)
    null_dir = None
    try:
        check_attitude_information(H, A)
    except ObservabilityError as exc:
        null_dir = exc.null_direction
    return ObservabilityDiagnosis(rank, float(lam[0]), null_dir, A)


def analyze(inst, pose):
    """Full covariance suite at ``pose``.

    Raises
    ------
    ObservabilityError
        If the attitude is not observable from ``inst``.
    """
    A = np.asarray(pose.attitude, dtype=float)
    H = attitude_hessian(A, inst)
    P_da = attitude_covariance(H, A)
    ab, s = a_bar(inst, A)
    cov_p = translation_covariance(s, ab, P_da)
    F = fim(inst, A)
    P_f = _sym(np.linalg.inv(F))
    _, C, D = _cd(inst, A)
    b_hat, r_hat = estimate_observations(inst, pose)
    crb, crr = residual_covariances(inst, pose, P_f)
    P_b, P_r = estimate_covariances(inst, pose, P_f)
    per_obs = [
        ObservationAnalytics(b_hat[i], r_hat[i], crb[i], crr[i], P_b[i], P_r[i], C[i], D[i])
        for i in range(inst.n)
    ]
    return AnalyticsReport(P_da, cov_p, P_f, ab, F, H, s, per_obs)


# Closed forms for isotropic, uncorrelated noise: R_r = sr^2 I, R_b = sb^2 I,
# R_rb = 0, so W_i = I / s_i^2 with s_i^2 = sr_i^2 + sb_i^2.


def _iso(sigmas_r, sigmas_b):
    sr2 = np.asarray(sigmas_r, dtype=float) ** 2
    sb2 = np.asarray(sigmas_b, dtype=float) ** 2
    return sr2, sb2, sr2 + sb2


def isotropic_hessian(inst, A, sigmas_r, sigmas_b):
    """``H = -sum A_i^2 / s_i^2 + A_bar^2 / s_bar^2`` with ``s_bar^-2 = sum s_i^-2``.

    Returns ``(H, A_bar, s_bar2)``.
    """
    _, _, s2 = _iso(sigmas_r, sigmas_b)
    a = _a_mats(inst, A)
    s_bar2 = 1.0 / np.sum(1.0 / s2)
    ab = s_bar2 * np.sum(a / s2[:, None, None], axis=0)
    H = -np.sum(a @ a / s2[:, None, None], axis=0) + ab @ ab / s_bar2
    return _sym(H), ab, s_bar2


def isotropic_translation_covariance(inst, A, sigmas_r, sigmas_b):
    """``cov(p) = s_bar^2 I - A_bar H^-1 A_bar``."""
    H, ab, s_bar2 = isotropic_hessian(inst, A, sigmas_r, sigmas_b)
    return _sym(s_bar2 * np.eye(3) - ab @ np.linalg.inv(H) @ ab)


def isotropic_estimates(inst, pose, sigmas_r, sigmas_b):
    """``b_hat = b - sb^2/s^2 e``, ``r_hat = r + sr^2/s^2 A^T e``."""
    sr2, sb2, s2 = _iso(sigmas_r, sigmas_b)
    A, p = pose.attitude, pose.translation
    e = inst.b_tilde - inst.r_tilde @ A.T + p
    b_hat = inst.b_tilde - (sb2 / s2)[:, None] * e
    r_hat = inst.r_tilde + (sr2 / s2)[:, None] * (e @ A)
    return b_hat, r_hat


def _gpg(inst, A, P_f):
    G = _g_mats(inst, A)
    return G @ P_f @ np.swapaxes(G, 1, 2)


def isotropic_residual_covariances(inst, pose, P_f, sigmas_r, sigmas_b):
    """``sb^4/s^4 (s^2 I - G P_f G^T)`` and ``sr^4/s^4 A^T (s^2 I - G P_f G^T) A``."""
    sr2, sb2, s2 = _iso(sigmas_r, sigmas_b)
    A = pose.attitude
    m = s2[:, None, None] * np.eye(3) - _gpg(inst, A, P_f)
    crb = (sb2**2 / s2**2)[:, None, None] * m
    crr = (sr2**2 / s2**2)[:, None, None] * (A.T @ m @ A)
    return _sym(crb), _sym(crr)


def isotropic_estimate_covariances(inst, pose, P_f, sigmas_r, sigmas_b):
    """``P_b = sb^2 I + cov_res_b - 2 sb^4/s^2 I + 2 sb^4/s^4 G P_f G^T``.

    ``P_r`` is the same with ``sr`` and ``G P_f G^T`` rotated into the
    reference frame.
    """
    sr2, sb2, s2 = _iso(sigmas_r, sigmas_b)
    A = pose.attitude
    crb, crr = isotropic_residual_covariances(inst, pose, P_f, sigmas_r, sigmas_b)
    gpg = _gpg(inst, A, P_f)
    eye = np.eye(3)

    def col(x):
        return x[:, None, None]

    P_b = col(sb2) * eye + crb - col(2 * sb2**2 / s2) * eye + col(2 * sb2**2 / s2**2) * gpg
    P_r = col(sr2) * eye + crr - col(2 * sr2**2 / s2) * eye + col(2 * sr2**2 / s2**2) * (A.T @ gpg @ A)
    return _sym(P_b), _sym(P_r)
