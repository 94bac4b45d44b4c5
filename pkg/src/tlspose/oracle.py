"""Brute-force reference implementations for validating the solver.

Nothing here is used on the production path.  The cost is evaluated
directly from its definition with plain loops, the minimiser is a
derivative-free multi-start simplex search and derivatives come from
central differences, so none of it shares code with the solver kernels.
"""

import numpy as np
from scipy.optimize import minimize

from .errors import NonSPDWeight
from .model import Pose

__all__ = [
    "cost_direct",
    "ols_pose",
    "local_pose",
    "finite_difference_gradient",
    "finite_difference_hessian",
    "BruteForceResult",
    "brute_force_minimize",
]

FD_STEP = 1e-5


def _rot(phi):
    # Rodrigues evaluated independently of geometry.exp_so3.
    phi = np.asarray(phi, dtype=float)
    theta = np.sqrt(phi @ phi)
    if theta < 1e-8:
        k = np.array([[0, -phi[2], phi[1]], [phi[2], 0, -phi[0]], [-phi[1], phi[0], 0]])
        return np.eye(3) + k + 0.5 * k @ k
    u = phi / theta
    k = np.array([[0, -u[2], u[1]], [u[2], 0, -u[0]], [-u[1], u[0], 0]])
    return np.eye(3) + np.sin(theta) * k + (1 - np.cos(theta)) * k @ k


def cost_direct(inst, pose):
    """``1/2 sum_i e_i^T Q_i(A)^-1 e_i`` evaluated term by term.

    Raises
    ------
    NonSPDWeight
        If some ``Q_i`` at this attitude is not positive definite.
    """
    A = np.asarray(pose.attitude, dtype=float)
    p = np.asarray(pose.translation, dtype=float)
    total = 0.0
    for i, ob in enumerate(inst.observations):
        nm = ob.noise
        q = A @ nm.R_r @ A.T - A @ nm.R_rb - (A @ nm.R_rb).T + nm.R_b
        q = 0.5 * (q + q.T)
        if np.linalg.eigvalsh(q)[0] <= 0.0:
            raise NonSPDWeight(f"observation {i}: weight matrix not positive definite", i)
        e = ob.b_tilde - A @ ob.r_tilde + p
        total += e @ np.linalg.solve(q, e)
    return 0.5 * total


def ols_pose(inst):
    """Unweighted least-squares pose (Kabsch on centred vectors)."""
    r, b = inst.r_tilde, inst.b_tilde
    rc, bc = r - r.mean(axis=0), b - b.mean(axis=0)
    u, _, vt = np.linalg.svd(bc.T @ rc)
    A = u @ np.diag([1.0, 1.0, np.sign(np.linalg.det(u @ vt))]) @ vt
    return Pose(A, A @ r.mean(axis=0) - b.mean(axis=0))


def local_pose(pose, x):
    """Pose displaced by local coordinates ``x = (da, dp)``: ``expm(-[da x]) A``, ``p + dp``."""
    x = np.asarray(x, dtype=float)
    return Pose(_rot(-x[:3]) @ np.asarray(pose.attitude), np.asarray(pose.translation) + x[3:])


def finite_difference_gradient(inst, pose, step=FD_STEP):
    """Gradient of :func:`cost_direct` in ``(da, dp)`` by the 5-point central stencil.

    The fourth-order stencil keeps the truncation error far below the
    round-off floor even when the cost curvature is ~1e9 (mm-level noise
    on metre-scale vectors), which the 3-point rule cannot.
    """
    g = np.zeros(6)
    for k in range(6):
        d = np.zeros(6)
        d[k] = step
        f = [cost_direct(inst, local_pose(pose, c * d)) for c in (-2, -1, 1, 2)]
        g[k] = (f[0] - 8 * f[1] + 8 * f[2] - f[3]) / (12 * step)
    return g


def finite_difference_hessian(inst, pose, step=FD_STEP):
    """Central-difference Hessian of :func:`cost_direct` in ``(da, dp)``, symmetrised."""
    f0 = cost_direct(inst, pose)
    h = np.zeros((6, 6))
    for j in range(6):
        ej = np.zeros(6)
        ej[j] = step
        h[j, j] = (cost_direct(inst, local_pose(pose, ej)) - 2 * f0 + cost_direct(inst, local_pose(pose, -ej))) / step**2
        for k in range(j + 1, 6):
            ek = np.zeros(6)
            ek[k] = step
            fpp = cost_direct(inst, local_pose(pose, ej + ek))
            fpm = cost_direct(inst, local_pose(pose, ej - ek))
            fmp = cost_direct(inst, local_pose(pose, -ej + ek))
            fmm = cost_direct(inst, local_pose(pose, -ej - ek))
            h[j, k] = h[k, j] = (fpp - fpm - fmp + fmm) / (4 * step**2)
    return h


class BruteForceResult(Pose):
    """Pose found by :func:`brute_force_minimize` with its cost and start index."""

    def __init__(self, attitude, translation, cost, start):
        super().__init__(attitude, translation)
        object.__setattr__(self, "cost", cost)
        object.__setattr__(self, "start", start)


def _whitening(inst, pose):
    # Scale the search coordinates by the inverse square root of a
    # finite-difference Hessian, so the simplex sees a round bowl.
    step = 1e-4 * max(1.0, float(np.abs(inst.r_tilde).max())) ** -1
    h = finite_difference_hessian(inst, pose, step=step)
    lam, v = np.linalg.eigh(h)
    lam = np.maximum(lam, 1e-12 * lam[-1])
    return v / np.sqrt(lam)


def brute_force_minimize(inst, n_starts=8, tol=1e-12, max_rounds=6):
    """Multi-start Nelder-Mead over 3 rotation-vector and 3 translation coordinates.

    Starts are the unweighted least-squares pose and seven deterministic
    perturbations of it.  Each start is refined by repeated simplex runs
    (restarted around the current best, re-whitened) until the cost stops
    decreasing.  The lowest-cost pose is returned; ties go to the lowest
    start index.
    """
    base = ols_pose(inst)
    rng = np.random.default_rng(12345)
    offsets = [np.zeros(6)] + [np.concatenate([rng.normal(scale=0.05, size=3), rng.normal(scale=0.01, size=3)]) for _ in range(n_starts - 1)]
    best = None
    for si, off in enumerate(offsets):
        pose = local_pose(base, off)
        f = cost_direct(inst, pose)
        for _ in range(max_rounds):
            T = _whitening(inst, pose)

            def fun(y, pose=pose, T=T):
                try:
                    return cost_direct(inst, local_pose(pose, T @ y))
                except NonSPDWeight:
                    return np.inf

            res = minimize(
                fun, np.zeros(6), method="Nelder-Mead",
                options={"xatol": tol, "fatol": tol * max(1.0, f), "maxiter": 20000, "maxfev": 40000,
                         "initial_simplex": np.vstack([np.zeros(6), np.eye(6)])},
            )
            if res.fun >= f:
                break
            improved = f - res.fun
            pose = local_pose(pose, T @ res.x)
            f = res.fun
            if improved <= tol * max(1.0, f):
                break
        if best is None or f < best[0]:
            best = (f, pose, si)
    f, pose, si = best
    return BruteForceResult(pose.attitude, pose.translation, f, si)
