"""Total-least-squares pose estimation.

The cost minimised over the attitude ``A`` and translation ``p`` is::

    J(A, p) = 1/2 sum_i e_i^T Q_i(A)^-1 e_i,   e_i = b_i - A r_i + p
    Q_i(A)  = A R_r A^T - A R_rb - R_rb^T A^T + R_b

For a fixed attitude the optimal translation is linear in the data, so the
solver alternates the closed-form translation with a Gauss-Newton attitude
step on SO(3).  Isotropic noise admits the closed-form SVD solution in
:func:`solve_isotropic`.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import NonSPDWeight, ObservabilityError, RankDeficientB
from .geometry import cross_matrix
from .model import RANK_RTOL, Pose

log = logging.getLogger(__name__)

COND_LIMIT = 1e12


@dataclass(frozen=True)
class SolverConfig:
    """Iteration controls for :func:`solve_pose`.

    ``step_tolerance`` applies to both ``|da|`` (rad) and ``|dp|`` (m).
    ``cost_tolerance`` is the relative slack under which a trial step still
    counts as non-increasing; it absorbs round-off at the optimum.
    """

    max_iterations: int = 50
    step_tolerance: float = 1e-10
    cost_tolerance: float = 1e-12
    max_halvings: int = 10
    initialization: str = "svd"  # "svd" | "provided"
    initial_pose: Pose = None

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (self.step_tolerance > 0 and self.cost_tolerance > 0):
            raise ValueError("tolerances must be positive")
        if self.initialization not in ("svd", "provided"):
            raise ValueError(f"unknown initialization mode {self.initialization!r}")
        if self.initialization == "provided" and self.initial_pose is None:
            raise ValueError("initialization='provided' needs initial_pose")


@dataclass(frozen=True)
class PoseSolution:
    pose: Pose
    final_cost: float
    iterations: int
    converged: bool
    step_norms: list = field(default_factory=list)  # [(|da|, |dp|), ...]
    status: str = "converged"
    cost_history: list = field(default_factory=list)  # initial cost, then after each step


def compute_q_lambda(A, noise):
    """Weight matrix ``Q = A R_r A^T - A R_rb - R_rb^T A^T + R_b``.

    Raises
    ------
    NonSPDWeight
        If the result is not positive definite.
    """
    A = np.asarray(A, dtype=float)
    q = A @ noise.R_r @ A.T - A @ noise.R_rb - noise.R_rb.T @ A.T + noise.R_b
    q = 0.5 * (q + q.T)
    try:
        np.linalg.cholesky(q)
    except np.linalg.LinAlgError:
        raise NonSPDWeight("Q_lambda is not positive definite; the noise model is invalid") from None
    return q


def compute_s_lambda(q_list):
    """``S = (sum_i Q_i^-1)^-1``."""
    info = sum(np.linalg.inv(q) for q in q_list)
    s = np.linalg.inv(info)
    return 0.5 * (s + s.T)


def solve_translation(A, inst, q_list):
    """Translation minimising the cost for a fixed attitude.

    ``p = -S sum_i Q_i^-1 (b_i - A r_i)``.
    """
    A = np.asarray(A, dtype=float)
    w = [np.linalg.inv(q) for q in q_list]
    s = np.linalg.inv(sum(w))
    y = inst.b_tilde - inst.r_tilde @ A.T
    return -s @ sum(wi @ yi for wi, yi in zip(w, y))


def pose_cost(inst, A, p):
    """Value of the cost at ``(A, p)`` with the weights re-evaluated at ``A``."""
    A = np.asarray(A, dtype=float)
    e = inst.b_tilde - inst.r_tilde @ A.T + np.asarray(p, dtype=float)
    total = 0.0
    for ei, nm in zip(e, inst.noises):
        q = compute_q_lambda(A, nm)
        total += ei @ np.linalg.solve(q, ei)
    return 0.5 * total


def attitude_hessian(A, inst, q_list=None):
    """Information matrix of the attitude with the translation eliminated.

    ``H = sum A_i^T W_i A_i - (sum W_i A_i)^T S (sum W_i A_i)`` with
    ``A_i = [A r_i x]`` and ``W_i = Q_i^-1``.
    """
    A = np.asarray(A, dtype=float)
    if q_list is None:
        q_list = [compute_q_lambda(A, nm) for nm in inst.noises]
    w = [np.linalg.inv(q) for q in q_list]
    s = np.linalg.inv(sum(w))
    cm = [cross_matrix(A @ r) for r in inst.r_tilde]
    f11 = sum(c.T @ wi @ c for c, wi in zip(cm, w))
    f21 = sum(wi @ c for c, wi in zip(cm, w))
    h = f11 - f21.T @ s @ f21
    return 0.5 * (h + h.T)


def check_attitude_information(H, A, inst=None):
    """Raise :class:`ObservabilityError` if ``H`` is singular or ill-conditioned."""
    lam, vecs = np.linalg.eigh(H)
    if lam[0] <= 0.0 or lam[-1] > COND_LIMIT * lam[0]:
        null_dir = vecs[:, 0]
        cond = np.inf if lam[0] <= 0 else lam[-1] / lam[0]
        raise ObservabilityError(
            f"attitude information matrix is singular (condition {cond:.3e}); "
            f"unobservable rotation axis {np.array2string(null_dir, precision=6)}",
            null_direction=null_dir,
            attitude=A,
        )


def gauss_newton_step(A, p, inst, weight_curvature=True):
    """One attitude step of the solver.

    Parameters
    ----------
    A : ndarray, shape (3, 3)
        Current attitude.
    p : ndarray, shape (3,)
        Current translation (normally from :func:`solve_translation`).
    inst : ProblemInstance
    weight_curvature : bool
        Include the gradient of the attitude-dependent weights.  Without it
        ``g`` is the first-order expression ``sum_i A_i W_i e_i``, whose zero
        differs from the true minimiser by a term quadratic in the residuals.

    Returns
    -------
    delta_alpha : ndarray, shape (3,)
        ``-H^-1 g``; apply with :func:`geometry.small_rotation_update`.
    g : ndarray, shape (3,)
        Gradient of the cost, translation eliminated, in the left-multiplicative
        attitude-error coordinates.
    H : ndarray, shape (3, 3)
        Gauss-Newton attitude information matrix.

    Raises
    ------
    ObservabilityError
        If ``H`` is singular, e.g. with only two observation pairs.
    """
    A = np.asarray(A, dtype=float)
    p = np.asarray(p, dtype=float)
    q_list = [compute_q_lambda(A, nm) for nm in inst.noises]
    w = [np.linalg.inv(q) for q in q_list]
    s = np.linalg.inv(sum(w))
    a = inst.r_tilde @ A.T
    e = inst.b_tilde - a + p
    g = np.zeros(3)
    grad_p = np.zeros(3)
    for ai, ei, wi, nm in zip(a, e, w, inst.noises):
        wei = wi @ ei
        g += np.cross(ai, wei)
        if weight_curvature:
            k = A @ nm.R_r @ A.T - nm.R_rb.T @ A.T
            g -= np.cross(wei, k.T @ wei)
        grad_p += wei
    cm = [cross_matrix(ai) for ai in a]
    # Eliminate the translation: reduced gradient g - F12 F22^-1 grad_p.
    f12 = -sum(c.T @ wi for c, wi in zip(cm, w))
    g = g - f12 @ s @ grad_p
    H = attitude_hessian(A, inst, q_list)
    check_attitude_information(H, A, inst)
    return -np.linalg.solve(H, g), g, H


def isotropic_weights(sigmas_r, sigmas_b):
    sr = np.asarray(sigmas_r, dtype=float)
    sb = np.asarray(sigmas_b, dtype=float)
    return 1.0 / (sr**2 + sb**2)


def attitude_profile_matrix(r, b, weights):
    """Weighted centred outer-product sum ``B = sum w_i (b_i - b_bar)(r_i - r_bar)^T``."""
    w = np.asarray(weights, dtype=float)
    r = np.asarray(r, dtype=float).reshape(-1, 3)
    b = np.asarray(b, dtype=float).reshape(-1, 3)
    wsum = w.sum()
    r_bar = w @ r / wsum
    b_bar = w @ b / wsum
    B = ((b - b_bar) * w[:, None]).T @ (r - r_bar)
    return B, r_bar, b_bar


def profile_rank(B, r=None, b=None, weights=None):
    """Numerical rank of ``B`` with a relative threshold of ``1e-9``.

    When the vectors are supplied the threshold also scales with
    ``sum w_i |r_i| |b_i|`` so that a ``B`` made only of round-off (identical
    vectors) counts as rank 0.
    """
    s = np.linalg.svd(B, compute_uv=False)
    scale = s[0]
    if r is not None and b is not None:
        r = np.asarray(r, dtype=float).reshape(-1, 3)
        b = np.asarray(b, dtype=float).reshape(-1, 3)
        w = np.ones(len(r)) if weights is None else np.asarray(weights, dtype=float)
        scale = max(scale, float(np.sum(w * np.linalg.norm(r, axis=1) * np.linalg.norm(b, axis=1))))
    return int(np.sum(s > RANK_RTOL * scale)) if scale > 0 else 0


def svd_attitude(B):
    """Proper rotation maximising ``trace(A^T B)``."""
    u, _, vt = np.linalg.svd(B)
    d = np.linalg.det(u) * np.linalg.det(vt)
    return u @ np.diag([1.0, 1.0, d]) @ vt


def solve_isotropic(inst, sigmas_r, sigmas_b):
    """Closed-form solution for isotropic, uncorrelated noise.

    With ``Q_i = (sigma_ri^2 + sigma_bi^2) I`` the attitude-only cost is a
    weighted Wahba problem on centred vectors, solved by the SVD of the
    attitude profile matrix.  No iteration.

    Raises
    ------
    RankDeficientB
        If the attitude profile matrix has rank below two.
    """
    w = isotropic_weights(sigmas_r, sigmas_b)
    if w.shape != (inst.n,):
        raise ValueError(f"need {inst.n} sigma pairs, got {w.shape}")
    r, b = inst.r_tilde, inst.b_tilde
    B, r_bar, b_bar = attitude_profile_matrix(r, b, w)
    rank = profile_rank(B, r, b, w)
    if rank < 2:
        null_dir = None
        if inst.n == 2:
            # Body-frame image of r_1 - r_2; the attitude itself is unknown here.
            d = b[0] - b[1]
            null_dir = d / np.linalg.norm(d) if np.linalg.norm(d) > 0 else None
        raise RankDeficientB(f"attitude profile matrix has rank {rank}; need at least 2", null_direction=null_dir)
    A = svd_attitude(B)
    p = A @ r_bar - b_bar
    e = b - r @ A.T + p
    cost = 0.5 * float(np.sum(w * np.einsum("ij,ij->i", e, e)))
    return PoseSolution(Pose(A, p), cost, 0, True, [], "closed-form")


def initial_attitude(inst):
    """Unit-weight SVD attitude used to start the iterative solver."""
    B, _, _ = attitude_profile_matrix(inst.r_tilde, inst.b_tilde, np.ones(inst.n))
    return svd_attitude(B)


def solve_pose(inst, config=None):
    """Minimise the TLS cost for fully populated noise covariances.

    Each iteration re-evaluates the weights at the current attitude, solves
    for the translation in closed form, takes a Gauss-Newton attitude step
    and halves it (up to ``max_halvings`` times) if the cost would increase.

    Returns
    -------
    PoseSolution
        ``converged`` is False if the iteration budget ran out or no
        descending step could be found; the best iterate is returned.

    Raises
    ------
    ObservabilityError
        Attitude information matrix singular at the start.
    NonSPDWeight
        A weight matrix is not positive definite.
    """
    config = config or SolverConfig()
    if config.initialization == "provided":
        A0 = np.asarray(config.initial_pose.attitude, dtype=float)
    else:
        A0 = initial_attitude(inst)
    res = kernels.solve_batch(
        inst.r_tilde[None], inst.b_tilde[None], inst.R_r, inst.R_b, inst.R_rb, A0[None],
        max_iterations=config.max_iterations,
        step_tolerance=config.step_tolerance,
        cost_tolerance=config.cost_tolerance,
        max_halvings=config.max_halvings,
    )
    status = int(res.status[0])
    if status == kernels.UNOBSERVABLE:
        H = attitude_hessian(A0, inst)
        check_attitude_information(H, A0, inst)
        raise ObservabilityError("attitude information matrix is singular", attitude=A0)
    if status == kernels.NONSPD:
        # Locate the offending observation for the message.
        for i, nm in enumerate(inst.noises):
            try:
                compute_q_lambda(A0, nm)
            except NonSPDWeight:
                raise NonSPDWeight(f"observation {i}: Q_lambda is not positive definite", i) from None
        raise NonSPDWeight("a weight matrix became indefinite during iteration")
    it = int(res.iterations[0])
    steps = [(float(a), float(b)) for a, b, _ in res.steps[0, :it]]
    q0 = [compute_q_lambda(A0, nm) for nm in inst.noises]
    history = [pose_cost(inst, A0, solve_translation(A0, inst, q0))] + [float(c) for c in res.steps[0, :it, 2]]
    converged = status == kernels.CONVERGED
    name = {kernels.CONVERGED: "converged", kernels.MAX_ITER: "max-iterations", kernels.STALLED: "stalled"}[status]
    if not converged:
        log.warning("solve_pose did not converge (%s) after %d iterations", name, it)
    return PoseSolution(
        Pose(res.attitude[0], res.translation[0]),
        float(res.cost[0]),
        it,
        converged,
        steps,
        name,
        history,
    )
