"""Per-sample solver and covariance kernels, compiled with numba.

Every function here mirrors one in ``_kernels_numpy`` that processes a whole
batch with array broadcasting.  Small matrices are multiplied with explicit
loops into preallocated scratch arrays: at 3x3 both a BLAS call and a heap
allocation cost more than the arithmetic.
"""

import numpy as np

from ._accel import njit

CONVERGED = 0
MAX_ITER = 1
UNOBSERVABLE = 2
NONSPD = 3
STALLED = 4

COND_LIMIT = 1e12
ORTHO_TOL = 1e-12
# Relative float error per term of the cost; see _grad_hess.
ROUNDOFF = 4.0 * np.finfo(np.float64).eps


@njit(cache=True)
def _mm(a, b):
    out = np.empty((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            s = 0.0
            for k in range(a.shape[1]):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


@njit(cache=True)
def _is_spd3(m):
    # Leading principal minors (Sylvester's criterion).
    if not m[0, 0] > 0.0:
        return False
    if not m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0] > 0.0:
        return False
    det = (m[0, 0] * (m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1])
           - m[0, 1] * (m[1, 0] * m[2, 2] - m[1, 2] * m[2, 0])
           + m[0, 2] * (m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0]))
    return det > 0.0


@njit(cache=True)
def _project_so3(A):
    """Nearest rotation matrix (SVD projection)."""
    u, _, vt = np.linalg.svd(A)
    out = _mm(u, vt)
    if np.linalg.det(out) < 0.0:
        for i in range(3):
            u[i, 2] = -u[i, 2]
        out = _mm(u, vt)
    return out


@njit(cache=True)
def _q_into(A, Rr, Rb, Rrb, ar, q):
    """``q = A Rr A^T - A Rrb - Rrb^T A^T + Rb``, symmetrised; ``ar`` is scratch."""
    for i in range(3):
        for j in range(3):
            ar[i, j] = A[i, 0] * Rr[0, j] + A[i, 1] * Rr[1, j] + A[i, 2] * Rr[2, j]
    for i in range(3):
        for j in range(i, 3):
            ara_ij = ar[i, 0] * A[j, 0] + ar[i, 1] * A[j, 1] + ar[i, 2] * A[j, 2]
            ara_ji = ar[j, 0] * A[i, 0] + ar[j, 1] * A[i, 1] + ar[j, 2] * A[i, 2]
            arb_ij = A[i, 0] * Rrb[0, j] + A[i, 1] * Rrb[1, j] + A[i, 2] * Rrb[2, j]
            arb_ji = A[j, 0] * Rrb[0, i] + A[j, 1] * Rrb[1, i] + A[j, 2] * Rrb[2, i]
            v = 0.5 * (ara_ij + ara_ji) - arb_ij - arb_ji + 0.5 * (Rb[i, j] + Rb[j, i])
            q[i, j] = v
            q[j, i] = v


@njit(cache=True)
def _inv3_into(m, out):
    """Inverse of a 3x3 matrix into ``out``; returns the determinant."""
    c00 = m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1]
    c01 = m[1, 2] * m[2, 0] - m[1, 0] * m[2, 2]
    c02 = m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0]
    det = m[0, 0] * c00 + m[0, 1] * c01 + m[0, 2] * c02
    out[0, 0] = c00 / det
    out[1, 0] = c01 / det
    out[2, 0] = c02 / det
    out[0, 1] = (m[0, 2] * m[2, 1] - m[0, 1] * m[2, 2]) / det
    out[1, 1] = (m[0, 0] * m[2, 2] - m[0, 2] * m[2, 0]) / det
    out[2, 1] = (m[0, 1] * m[2, 0] - m[0, 0] * m[2, 1]) / det
    out[0, 2] = (m[0, 1] * m[1, 2] - m[0, 2] * m[1, 1]) / det
    out[1, 2] = (m[0, 2] * m[1, 0] - m[0, 0] * m[1, 2]) / det
    out[2, 2] = (m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]) / det
    return det


@njit(cache=True)
def _evaluate(A, r, b, Rr, Rb, Rrb, W, S, p, ws):
    """Weights, optimal translation and cost at attitude ``A``.

    Fills ``W`` (inverse weights), ``S`` and ``p`` in place; ``ws`` is a
    (3, 3, 3) scratch array.  Returns ``(cost, ok)``; ``ok`` is False when
    a weight matrix is not SPD.
    """
    n = r.shape[0]
    ar, q, wsum = ws[0], ws[1], ws[2]
    wsum[:, :] = 0.0
    t0 = t1 = t2 = 0.0
    for i in range(n):
        _q_into(A, Rr[i], Rb[i], Rrb[i], ar, q)
        if not _is_spd3(q):
            return np.inf, False
        wi = W[i]
        _inv3_into(q, wi)
        y0 = b[i, 0] - (A[0, 0] * r[i, 0] + A[0, 1] * r[i, 1] + A[0, 2] * r[i, 2])
        y1 = b[i, 1] - (A[1, 0] * r[i, 0] + A[1, 1] * r[i, 1] + A[1, 2] * r[i, 2])
        y2 = b[i, 2] - (A[2, 0] * r[i, 0] + A[2, 1] * r[i, 1] + A[2, 2] * r[i, 2])
        t0 += wi[0, 0] * y0 + wi[0, 1] * y1 + wi[0, 2] * y2
        t1 += wi[1, 0] * y0 + wi[1, 1] * y1 + wi[1, 2] * y2
        t2 += wi[2, 0] * y0 + wi[2, 1] * y1 + wi[2, 2] * y2
        for j in range(3):
            for k in range(3):
                wsum[j, k] += wi[j, k]
    _inv3_into(wsum, S)
    for j in range(3):
        p[j] = -(S[j, 0] * t0 + S[j, 1] * t1 + S[j, 2] * t2)
    cost = 0.0
    for i in range(n):
        wi = W[i]
        e0 = b[i, 0] - (A[0, 0] * r[i, 0] + A[0, 1] * r[i, 1] + A[0, 2] * r[i, 2]) + p[0]
        e1 = b[i, 1] - (A[1, 0] * r[i, 0] + A[1, 1] * r[i, 1] + A[1, 2] * r[i, 2]) + p[1]
        e2 = b[i, 2] - (A[2, 0] * r[i, 0] + A[2, 1] * r[i, 1] + A[2, 2] * r[i, 2]) + p[2]
        cost += (e0 * (wi[0, 0] * e0 + wi[0, 1] * e1 + wi[0, 2] * e2)
                 + e1 * (wi[1, 0] * e0 + wi[1, 1] * e1 + wi[1, 2] * e2)
                 + e2 * (wi[2, 0] * e0 + wi[2, 1] * e1 + wi[2, 2] * e2))
    return 0.5 * cost, True


@njit(cache=True)
def _grad_hess(A, r, b, p, Rr, Rrb, W, S, g, h, ws):
    """Reduced gradient ``g`` and Gauss-Newton information ``h``, in place.

    Returns the cost round-off floor: the float error of the cost from the
    cancellation in ``e = b - A r + p``; cost differences below it are not
    resolvable.  ``ws`` is a (3, 3, 3) scratch array.
    """
    n = r.shape[0]
    wc, m, ms = ws[0], ws[1], ws[2]
    floor = 0.0
    a = np.empty(3)
    w = np.empty(3)
    u = np.empty(3)
    v = np.empty(3)
    gp = np.zeros(3)
    g[:] = 0.0
    h[:, :] = 0.0
    m[:, :] = 0.0
    pn = np.sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2])
    for i in range(n):
        wi = W[i]
        for j in range(3):
            a[j] = A[j, 0] * r[i, 0] + A[j, 1] * r[i, 1] + A[j, 2] * r[i, 2]
        e0 = b[i, 0] - a[0] + p[0]
        e1 = b[i, 1] - a[1] + p[1]
        e2 = b[i, 2] - a[2] + p[2]
        for j in range(3):
            w[j] = wi[j, 0] * e0 + wi[j, 1] * e1 + wi[j, 2] * e2
        floor += (np.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
                  * (np.sqrt(b[i, 0] ** 2 + b[i, 1] ** 2 + b[i, 2] ** 2)
                     + np.sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]) + pn))
        # k^T w with k = A Rr A^T - Rrb^T A^T, as A (Rr A^T w - Rrb w)
        for j in range(3):
            u[j] = A[0, j] * w[0] + A[1, j] * w[1] + A[2, j] * w[2]
        for j in range(3):
            v[j] = (Rr[i, j, 0] * u[0] + Rr[i, j, 1] * u[1] + Rr[i, j, 2] * u[2]
                    - Rrb[i, j, 0] * w[0] - Rrb[i, j, 1] * w[1] - Rrb[i, j, 2] * w[2])
        k0 = A[0, 0] * v[0] + A[0, 1] * v[1] + A[0, 2] * v[2]
        k1 = A[1, 0] * v[0] + A[1, 1] * v[1] + A[1, 2] * v[2]
        k2 = A[2, 0] * v[0] + A[2, 1] * v[1] + A[2, 2] * v[2]
        g[0] += a[1] * w[2] - a[2] * w[1] - (w[1] * k2 - w[2] * k1)
        g[1] += a[2] * w[0] - a[0] * w[2] - (w[2] * k0 - w[0] * k2)
        g[2] += a[0] * w[1] - a[1] * w[0] - (w[0] * k1 - w[1] * k0)
        for j in range(3):
            gp[j] += w[j]
        # wc = W [a x]; h += [a x]^T wc; m += wc
        for j in range(3):
            wc[j, 0] = wi[j, 1] * a[2] - wi[j, 2] * a[1]
            wc[j, 1] = wi[j, 2] * a[0] - wi[j, 0] * a[2]
            wc[j, 2] = wi[j, 0] * a[1] - wi[j, 1] * a[0]
        for k in range(3):
            h[0, k] += a[2] * wc[1, k] - a[1] * wc[2, k]
            h[1, k] += a[0] * wc[2, k] - a[2] * wc[0, k]
            h[2, k] += a[1] * wc[0, k] - a[0] * wc[1, k]
            for j in range(3):
                m[j, k] += wc[j, k]
    # ms = m^T S; g += ms gp; h -= ms m
    for j in range(3):
        for k in range(3):
            ms[j, k] = m[0, j] * S[0, k] + m[1, j] * S[1, k] + m[2, j] * S[2, k]
    for j in range(3):
        g[j] += ms[j, 0] * gp[0] + ms[j, 1] * gp[1] + ms[j, 2] * gp[2]
        for k in range(3):
            h[j, k] -= ms[j, 0] * m[0, k] + ms[j, 1] * m[1, k] + ms[j, 2] * m[2, k]
    for j in range(3):
        for k in range(j + 1, 3):
            x = 0.5 * (h[j, k] + h[k, j])
            h[j, k] = x
            h[k, j] = x
    return ROUNDOFF * floor


@njit(cache=True)
def _rotate_into(phi, A, out):
    """``out = expm([phi x]) A`` by Rodrigues' formula, without temporaries."""
    theta2 = phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2]
    if theta2 < 1e-12:
        s = 1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0
        c = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0
    else:
        theta = np.sqrt(theta2)
        s = np.sin(theta) / theta
        c = (1.0 - np.cos(theta)) / theta2
    x, y, z = phi[0], phi[1], phi[2]
    # R = I + s K + c K^2 with K = [phi x]
    r00 = 1.0 - c * (y * y + z * z)
    r11 = 1.0 - c * (x * x + z * z)
    r22 = 1.0 - c * (x * x + y * y)
    r01 = -s * z + c * x * y
    r10 = s * z + c * x * y
    r02 = s * y + c * x * z
    r20 = -s * y + c * x * z
    r12 = -s * x + c * y * z
    r21 = s * x + c * y * z
    for j in range(3):
        a0, a1, a2 = A[0, j], A[1, j], A[2, j]
        out[0, j] = r00 * a0 + r01 * a1 + r02 * a2
        out[1, j] = r10 * a0 + r11 * a1 + r12 * a2
        out[2, j] = r20 * a0 + r21 * a1 + r22 * a2


@njit(cache=True)
def _orthonormal(A):
    res = 0.0
    for i in range(3):
        for j in range(3):
            d = A[0, i] * A[0, j] + A[1, i] * A[1, j] + A[2, i] * A[2, j] - (1.0 if i == j else 0.0)
            res += d * d
    return np.sqrt(res) <= ORTHO_TOL


@njit(cache=True)
def _solve_one(r, b, Rr, Rb, Rrb, A0, max_iter, step_tol, cost_tol, max_halvings, steps):
    n = r.shape[0]
    A = A0.copy()
    At = np.empty((3, 3))
    W = np.empty((n, 3, 3))
    S = np.empty((3, 3))
    p = np.empty(3)
    Wt = np.empty((n, 3, 3))
    St = np.empty((3, 3))
    pt = np.empty(3)
    g = np.empty(3)
    h = np.empty((3, 3))
    hinv = np.empty((3, 3))
    da = np.empty(3)
    phi = np.empty(3)
    ws = np.empty((3, 3, 3))
    cost, ok = _evaluate(A, r, b, Rr, Rb, Rrb, W, S, p, ws)
    if not ok:
        return A, p, cost, 0, NONSPD
    for it in range(max_iter):
        floor = _grad_hess(A, r, b, p, Rr, Rrb, W, S, g, h, ws)
        slack = max(cost_tol * abs(cost), floor)
        lam = np.linalg.eigvalsh(h)
        if not (lam[0] > 0.0) or lam[2] > COND_LIMIT * lam[0]:
            return A, p, cost, it, UNOBSERVABLE
        _inv3_into(h, hinv)
        for j in range(3):
            da[j] = -(hinv[j, 0] * g[0] + hinv[j, 1] * g[1] + hinv[j, 2] * g[2])
        t = 1.0
        accepted = False
        cost_t = cost
        for _ in range(max_halvings + 1):
            for j in range(3):
                phi[j] = -t * da[j]
            _rotate_into(phi, A, At)
            if not _orthonormal(At):
                At[:, :] = _project_so3(At)
            cost_t, ok = _evaluate(At, r, b, Rr, Rb, Rrb, Wt, St, pt, ws)
            if ok and cost_t <= cost + slack:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            return A, p, cost, it, STALLED
        step_a = t * np.sqrt(da[0] * da[0] + da[1] * da[1] + da[2] * da[2])
        step_p = np.sqrt((pt[0] - p[0]) ** 2 + (pt[1] - p[1]) ** 2 + (pt[2] - p[2]) ** 2)
        steps[it, 0] = step_a
        steps[it, 1] = step_p
        steps[it, 2] = cost_t
        A[:, :] = At
        cost = cost_t
        W[:, :, :] = Wt
        S[:, :] = St
        p[:] = pt
        if step_a < step_tol and step_p < step_tol:
            return A, p, cost, it + 1, CONVERGED
    return A, p, cost, max_iter, MAX_ITER


@njit(cache=True)
def solve_batch(r, b, Rr, Rb, Rrb, A0, max_iter, step_tol, cost_tol, max_halvings):
    N = r.shape[0]
    A_out = np.empty((N, 3, 3))
    p_out = np.empty((N, 3))
    cost_out = np.empty(N)
    it_out = np.empty(N, dtype=np.int64)
    status_out = np.empty(N, dtype=np.int64)
    steps = np.full((N, max_iter, 3), np.nan)
    for k in range(N):
        A, p, cost, it, status = _solve_one(
            r[k], b[k], Rr, Rb, Rrb, A0[k], max_iter, step_tol, cost_tol, max_halvings, steps[k]
        )
        A_out[k] = A
        p_out[k] = p
        cost_out[k] = cost
        it_out[k] = it
        status_out[k] = status
    return A_out, p_out, cost_out, it_out, status_out, steps


@njit(cache=True)
def _mm_into(a, b, out):
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            s = 0.0
            for k in range(a.shape[1]):
                s += a[i, k] * b[k, j]
            out[i, j] = s


@njit(cache=True)
def _mmt_into(a, b, out):
    """``out = a @ b.T``."""
    for i in range(a.shape[0]):
        for j in range(b.shape[0]):
            s = 0.0
            for k in range(a.shape[1]):
                s += a[i, k] * b[j, k]
            out[i, j] = s


@njit(cache=True)
def _sym_into(m, out):
    for i in range(m.shape[0]):
        for j in range(m.shape[1]):
            out[i, j] = 0.5 * (m[i, j] + m[j, i])


@njit(cache=True)
def _analyze_one(A, p, r, b, Rr, Rb, Rrb, P_f, b_hat, r_hat, cov_res_b, cov_res_r, P_b, P_r, W, G, F, g6, ws):
    n = r.shape[0]
    ar, q = ws[0], ws[1]
    F[:, :] = 0.0
    G[:, :, :] = 0.0
    for i in range(n):
        _q_into(A, Rr[i], Rb[i], Rrb[i], ar, q)
        _inv3_into(q, W[i])
        a0 = A[0, 0] * r[i, 0] + A[0, 1] * r[i, 1] + A[0, 2] * r[i, 2]
        a1 = A[1, 0] * r[i, 0] + A[1, 1] * r[i, 1] + A[1, 2] * r[i, 2]
        a2 = A[2, 0] * r[i, 0] + A[2, 1] * r[i, 1] + A[2, 2] * r[i, 2]
        Gi = G[i]
        Gi[0, 1] = -a2
        Gi[0, 2] = a1
        Gi[1, 0] = a2
        Gi[1, 2] = -a0
        Gi[2, 0] = -a1
        Gi[2, 1] = a0
        Gi[0, 3] = -1.0
        Gi[1, 4] = -1.0
        Gi[2, 5] = -1.0
        # F += G^T W G
        _mm_into(W[i], Gi, g6)
        for j in range(6):
            for k in range(6):
                F[j, k] += Gi[0, j] * g6[0, k] + Gi[1, j] * g6[1, k] + Gi[2, j] * g6[2, k]
    for j in range(6):
        for k in range(j + 1, 6):
            v = 0.5 * (F[j, k] + F[k, j])
            F[j, k] = v
            F[k, j] = v
    Pf = np.linalg.inv(F)
    _sym_into(Pf, P_f)
    C, D, gpg, M, tmp, t2, T, X = ws[2], ws[3], ws[4], ws[5], ws[6], ws[7], ws[8], ws[9]
    for i in range(n):
        Wi, Gi, Rri, Rbi, Rrbi = W[i], G[i], Rr[i], Rb[i], Rrb[i]
        _q_into(A, Rri, Rbi, Rrbi, ar, q)
        # C = (Rrb^T A^T - Rb) W,  D = (Rr A^T - Rrb) W
        for j in range(3):
            for k in range(3):
                t2[j, k] = (Rrbi[0, j] * A[k, 0] + Rrbi[1, j] * A[k, 1] + Rrbi[2, j] * A[k, 2]) - Rbi[j, k]
        _mm_into(t2, Wi, C)
        _mmt_into(Rri, A, t2)
        for j in range(3):
            for k in range(3):
                t2[j, k] -= Rrbi[j, k]
        _mm_into(t2, Wi, D)
        e0 = b[i, 0] - (A[0, 0] * r[i, 0] + A[0, 1] * r[i, 1] + A[0, 2] * r[i, 2]) + p[0]
        e1 = b[i, 1] - (A[1, 0] * r[i, 0] + A[1, 1] * r[i, 1] + A[1, 2] * r[i, 2]) + p[1]
        e2 = b[i, 2] - (A[2, 0] * r[i, 0] + A[2, 1] * r[i, 1] + A[2, 2] * r[i, 2]) + p[2]
        for j in range(3):
            b_hat[i, j] = b[i, j] + C[j, 0] * e0 + C[j, 1] * e1 + C[j, 2] * e2
            r_hat[i, j] = r[i, j] + D[j, 0] * e0 + D[j, 1] * e1 + D[j, 2] * e2
        # gpg = G P_f G^T, M = Q - gpg
        _mm_into(Gi, P_f, g6)
        _mmt_into(g6, Gi, gpg)
        for j in range(3):
            for k in range(3):
                M[j, k] = q[j, k] - gpg[j, k]
        _mm_into(C, M, tmp)
        _mmt_into(tmp, C, t2)
        _sym_into(t2, cov_res_b[i])
        _mm_into(D, M, tmp)
        _mmt_into(tmp, D, t2)
        _sym_into(t2, cov_res_r[i])
        # T = I - gpg W
        _mm_into(gpg, Wi, T)
        for j in range(3):
            for k in range(3):
                T[j, k] = (1.0 if j == k else 0.0) - T[j, k]
        # X = C T (Rb - A Rrb); P_b = Rb + cov_res_b + X + X^T
        _mm_into(A, Rrbi, t2)
        for j in range(3):
            for k in range(3):
                t2[j, k] = Rbi[j, k] - t2[j, k]
        _mm_into(C, T, tmp)
        _mm_into(tmp, t2, X)
        for j in range(3):
            for k in range(3):
                t2[j, k] = Rbi[j, k] + cov_res_b[i, j, k] + X[j, k] + X[k, j]
        _sym_into(t2, P_b[i])
        # Y = D T (Rrb^T - A Rr); P_r = Rr + cov_res_r + Y + Y^T
        _mm_into(A, Rri, t2)
        for j in range(3):
            for k in range(3):
                t2[j, k] = Rrbi[k, j] - t2[j, k]
        _mm_into(D, T, tmp)
        _mm_into(tmp, t2, X)
        for j in range(3):
            for k in range(3):
                t2[j, k] = Rri[j, k] + cov_res_r[i, j, k] + X[j, k] + X[k, j]
        _sym_into(t2, P_r[i])


@njit(cache=True)
def analyze_batch(A, p, r, b, Rr, Rb, Rrb):
    N, n = r.shape[0], r.shape[1]
    P_f = np.empty((N, 6, 6))
    b_hat = np.empty((N, n, 3))
    r_hat = np.empty((N, n, 3))
    cov_res_b = np.empty((N, n, 3, 3))
    cov_res_r = np.empty((N, n, 3, 3))
    P_b = np.empty((N, n, 3, 3))
    P_r = np.empty((N, n, 3, 3))
    W = np.empty((n, 3, 3))
    G = np.empty((n, 3, 6))
    F = np.empty((6, 6))
    g6 = np.empty((3, 6))
    ws = np.empty((10, 3, 3))
    for k in range(N):
        _analyze_one(A[k], p[k], r[k], b[k], Rr, Rb, Rrb, P_f[k], b_hat[k], r_hat[k],
                     cov_res_b[k], cov_res_r[k], P_b[k], P_r[k], W, G, F, g6, ws)
    return P_f, b_hat, r_hat, cov_res_b, cov_res_r, P_b, P_r
