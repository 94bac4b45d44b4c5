"""Small fixed-size linear algebra and SO(3) helpers.

Conventions
-----------
``cross_matrix(a) @ b == np.cross(a, b)``.  Attitude perturbations are
left-multiplicative, ``A_hat = expm(-[da x]) @ A``, so a positive error vector
rotates the estimate *backwards* about its axis.  Euler angles are intrinsic
z-y-x (yaw, pitch, roll), ``A = Rz(yaw) @ Ry(pitch) @ Rx(roll)``, in degrees.
"""

import math

import numpy as np

from .errors import DegenerateRepresentation

ORTHO_TOL = 1e-12


def cross_matrix(a):
    """Return the skew-symmetric matrix ``[a x]`` with ``[a x] b = a x b``."""
    a = np.asarray(a, dtype=float)
    return np.array(
        [
            [0.0, -a[2], a[1]],
            [a[2], 0.0, -a[0]],
            [-a[1], a[0], 0.0],
        ]
    )


def vee(m):
    """Inverse of :func:`cross_matrix` applied to the skew part of ``m``."""
    m = np.asarray(m, dtype=float)
    return 0.5 * np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])


def exp_so3(phi):
    """Rodrigues' formula: the rotation matrix ``expm([phi x])``."""
    phi = np.asarray(phi, dtype=float)
    theta2 = float(phi @ phi)
    k = cross_matrix(phi)
    if theta2 < 1e-12:
        # Taylor terms through theta^4 keep ~1e-24 truncation error here.
        s = 1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0
        c = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0
    else:
        theta = math.sqrt(theta2)
        s = math.sin(theta) / theta
        c = (1.0 - math.cos(theta)) / theta2
    return np.eye(3) + s * k + c * (k @ k)


def log_so3(rot):
    """Rotation vector ``phi`` such that ``exp_so3(phi) == rot``; ``|phi| <= pi``."""
    rot = np.asarray(rot, dtype=float)
    v = vee(rot)
    s = float(np.linalg.norm(v))
    c = 0.5 * (np.trace(rot) - 1.0)
    theta = math.atan2(s, c)
    if s < 1e-7 and c > 0.0:
        return (1.0 + theta * theta / 6.0) * v
    if c > -0.99:
        return (theta / s) * v
    # Near pi the skew part loses precision; recover the axis from the
    # symmetric part, then fix its sign using v.
    sym = 0.5 * (rot + rot.T) - c * np.eye(3)
    col = int(np.argmax(np.diag(sym)))
    axis = sym[:, col] / math.sqrt(max(sym[col, col], 1e-300))
    axis /= np.linalg.norm(axis)
    if axis @ v < 0.0:
        axis = -axis
    return theta * axis


def project_to_so3(m):
    """Nearest proper rotation in the Frobenius sense (polar projection)."""
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=float))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def orthogonality_residual(rot):
    return float(np.linalg.norm(rot.T @ rot - np.eye(3)))


def is_rotation(rot, tol=1e-10):
    rot = np.asarray(rot, dtype=float)
    if rot.shape != (3, 3) or not np.all(np.isfinite(rot)):
        return False
    return orthogonality_residual(rot) <= tol and abs(np.linalg.det(rot) - 1.0) <= tol


def small_rotation_update(delta_alpha, A):
    """Apply the left-multiplicative attitude correction ``expm(-[da x]) A``.

    The exact exponential is used (not its first-order truncation) and the
    result is re-projected onto SO(3) if float round-off pushed it off by
    more than ``1e-12``.
    """
    out = exp_so3(-np.asarray(delta_alpha, dtype=float)) @ np.asarray(A, dtype=float)
    if orthogonality_residual(out) > ORTHO_TOL:
        out = project_to_so3(out)
    return out


def attitude_error(A_hat, A):
    """Error vector ``da`` with ``A_hat = expm(-[da x]) A``."""
    return -log_so3(np.asarray(A_hat) @ np.asarray(A).T)


def geodesic_distance(A, B):
    """Rotation angle (rad) of ``A B^T``."""
    return float(np.linalg.norm(log_so3(np.asarray(A) @ np.asarray(B).T)))


def vec(m):
    """Stack the columns of ``m`` into a single vector."""
    return np.asarray(m, dtype=float).reshape(-1, order="F")


def vec_kron_apply(A, z):
    """Evaluate ``(z^T kron I_m) vec(A)``, which equals ``A @ z``.

    Only used to check derivation steps that are written with the
    vec/Kronecker identity.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    z = np.asarray(z, dtype=float).ravel()
    m, k = A.shape
    if z.shape[0] != k:
        raise ValueError(f"dimension mismatch: A is {m}x{k} but z has length {z.shape[0]}")
    return np.kron(z[None, :], np.eye(m)) @ vec(A)


def _rx(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _ry(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rz(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_to_attitude(roll, pitch, yaw):
    """Build ``Rz(yaw) Ry(pitch) Rx(roll)`` from angles in degrees."""
    return _rz(math.radians(yaw)) @ _ry(math.radians(pitch)) @ _rx(math.radians(roll))


def attitude_to_euler(A, gimbal_margin_deg=1e-6):
    """Return ``(roll, pitch, yaw)`` in degrees for the z-y-x sequence.

    Raises
    ------
    DegenerateRepresentation
        If ``|pitch|`` is within ``gimbal_margin_deg`` of 90 degrees.
    """
    A = np.asarray(A, dtype=float)
    pitch = -math.asin(max(-1.0, min(1.0, A[2, 0])))
    if abs(math.degrees(pitch)) >= 90.0 - gimbal_margin_deg:
        raise DegenerateRepresentation(
            f"pitch {math.degrees(pitch):.9f} deg is at gimbal lock; roll and yaw are not separable"
        )
    roll = math.atan2(A[2, 1], A[2, 2])
    yaw = math.atan2(A[1, 0], A[0, 0])
    return np.degrees([roll, pitch, yaw])
