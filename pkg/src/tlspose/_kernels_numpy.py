"""Batched NumPy versions of the numba kernels.

Arrays carry a leading sample axis ``N``; noise blocks have shape
``(n, 3, 3)`` and are shared by every sample.  Samples that finish early are
dropped from the working set, so per-sample results match the sequential
kernel up to floating-point summation order.
"""

import numpy as np

from ._kernels_numba import CONVERGED, COND_LIMIT, MAX_ITER, NONSPD, ORTHO_TOL, ROUNDOFF, STALLED, UNOBSERVABLE

__all__ = ["solve_batch", "analyze_batch"]


def _skew(a):
    out = np.zeros(a.shape[:-1] + (3, 3))
    out[..., 0, 1] = -a[..., 2]
    out[..., 0, 2] = a[..., 1]
    out[..., 1, 0] = a[..., 2]
    out[..., 1, 2] = -a[..., 0]
    out[..., 2, 0] = -a[..., 1]
    out[..., 2, 1] = a[..., 0]
    return out


def _inv3(m):
    c00 = m[..., 1, 1] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 1]
    c01 = m[..., 1, 2] * m[..., 2, 0] - m[..., 1, 0] * m[..., 2, 2]
    c02 = m[..., 1, 0] * m[..., 2, 1] - m[..., 1, 1] * m[..., 2, 0]
    det = m[..., 0, 0] * c00 + m[..., 0, 1] * c01 + m[..., 0, 2] * c02
    out = np.empty(m.shape)
    out[..., 0, 0] = c00
    out[..., 1, 0] = c01
    out[..., 2, 0] = c02
    out[..., 0, 1] = m[..., 0, 2] * m[..., 2, 1] - m[..., 0, 1] * m[..., 2, 2]
    out[..., 1, 1] = m[..., 0, 0] * m[..., 2, 2] - m[..., 0, 2] * m[..., 2, 0]
    out[..., 2, 1] = m[..., 0, 1] * m[..., 2, 0] - m[..., 0, 0] * m[..., 2, 1]
    out[..., 0, 2] = m[..., 0, 1] * m[..., 1, 2] - m[..., 0, 2] * m[..., 1, 1]
    out[..., 1, 2] = m[..., 0, 2] * m[..., 1, 0] - m[..., 0, 0] * m[..., 1, 2]
    out[..., 2, 2] = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    return out / det[..., None, None]


def _is_spd3(m):
    d1 = m[..., 0, 0]
    d2 = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    d3 = np.linalg.det(m)
    return (d1 > 0) & (d2 > 0) & (d3 > 0)


def _exp_so3(phi):
    theta2 = np.einsum("...i,...i->...", phi, phi)
    small = theta2 < 1e-12
    theta = np.sqrt(np.where(small, 1.0, theta2))
    s = np.where(small, 1.0 - theta2 / 6.0 + theta2**2 / 120.0, np.sin(theta) / theta)
    c = np.where(small, 0.5 - theta2 / 24.0 + theta2**2 / 720.0, (1.0 - np.cos(theta)) / np.where(small, 1.0, theta2))
    k = _skew(phi)
    return np.eye(3) + s[..., None, None] * k + c[..., None, None] * (k @ k)


def _reorthonormalize(A):
    res = np.linalg.norm(np.swapaxes(A, -1, -2) @ A - np.eye(3), axis=(-2, -1))
    bad = res > ORTHO_TOL
    if np.any(bad):
        u, _, vt = np.linalg.svd(A[bad])
        d = np.sign(np.linalg.det(u @ vt))
        u[..., :, 2] *= d[..., None]
        A = A.copy()
        A[bad] = u @ vt
    return A


def _q_lambda(A, Rr, Rb, Rrb):
    At = np.swapaxes(A, -1, -2)[:, None]
    Ab = A[:, None]
    arb = Ab @ Rrb
    q = Ab @ Rr @ At - arb - np.swapaxes(arb, -1, -2) + Rb
    return 0.5 * (q + np.swapaxes(q, -1, -2))


def _evaluate(A, r, b, Rr, Rb, Rrb):
    q = _q_lambda(A, Rr, Rb, Rrb)
    ok = np.all(_is_spd3(q), axis=1)
    W = _inv3(np.where(ok[:, None, None, None], q, np.eye(3)))
    S = _inv3(W.sum(axis=1))
    y = b - np.einsum("kij,knj->kni", A, r)
    p = -np.einsum("kij,kj->ki", S, np.einsum("knij,knj->ki", W, y))
    e = y + p[:, None, :]
    cost = 0.5 * np.einsum("kni,knij,knj->k", e, W, e)
    cost = np.where(ok, cost, np.inf)
    return cost, ok, W, S, p


def _grad_hess(A, r, b, p, Rr, Rrb, W, S):
    a = np.einsum("kij,knj->kni", A, r)
    e = b - a + p[:, None, :]
    w = np.einsum("knij,knj->kni", W, e)
    At = np.swapaxes(A, -1, -2)[:, None]
    k = A[:, None] @ Rr @ At - np.swapaxes(Rrb, -1, -2) @ At
    kw = np.einsum("knji,knj->kni", k, w)
    nrm = np.linalg.norm
    floor = ROUNDOFF * np.sum(nrm(w, axis=2) * (nrm(b, axis=2) + nrm(a, axis=2) + nrm(p, axis=1)[:, None]), axis=1)
    g = np.sum(np.cross(a, w) - np.cross(w, kw), axis=1)
    gp = w.sum(axis=1)
    cm = _skew(a)
    wc = W @ cm
    f11 = np.sum(np.swapaxes(cm, -1, -2) @ wc, axis=1)
    m = wc.sum(axis=1)
    ms = np.swapaxes(m, -1, -2) @ S
    g = g + np.einsum("kij,kj->ki", ms, gp)
    h = f11 - ms @ m
    return g, 0.5 * (h + np.swapaxes(h, -1, -2)), floor


def solve_batch(r, b, Rr, Rb, Rrb, A0, max_iter, step_tol, cost_tol, max_halvings):
    N = r.shape[0]
    A_out = np.array(A0, dtype=float, copy=True)
    p_out = np.zeros((N, 3))
    cost_out = np.zeros(N)
    it_out = np.zeros(N, dtype=np.int64)
    status_out = np.full(N, MAX_ITER, dtype=np.int64)
    steps = np.full((N, max_iter, 3), np.nan)

    cost, ok, W, S, p = _evaluate(A_out, r, b, Rr, Rb, Rrb)
    p_out[:] = p
    cost_out[:] = cost
    status_out[~ok] = NONSPD
    active = np.flatnonzero(ok)
    A, W, S, p, cost = A_out[active], W[active], S[active], p[active], cost[active]

    for it in range(max_iter):
        if active.size == 0:
            break
        ra, ba = r[active], b[active]
        g, h, floor = _grad_hess(A, ra, ba, p, Rr, Rrb, W, S)
        slack = np.maximum(cost_tol * np.abs(cost), floor)
        lam = np.linalg.eigvalsh(h)
        unobs = ~(lam[:, 0] > 0.0) | (lam[:, 2] > COND_LIMIT * lam[:, 0])
        da = -np.einsum("kij,kj->ki", _inv3(np.where(unobs[:, None, None], np.eye(3), h)), g)

        t = np.ones(active.size)
        accepted = np.zeros(active.size, dtype=bool)
        At, Wt, St, pt, ct = A.copy(), W.copy(), S.copy(), p.copy(), cost.copy()
        trying = np.flatnonzero(~unobs)
        for _ in range(max_halvings + 1):
            if trying.size == 0:
                break
            Ac = _reorthonormalize(_exp_so3(-t[trying, None] * da[trying]) @ A[trying])
            c, okc, Wc, Sc, pc = _evaluate(Ac, ra[trying], ba[trying], Rr, Rb, Rrb)
            acc = okc & (c <= cost[trying] + slack[trying])
            idx = trying[acc]
            At[idx], Wt[idx], St[idx], pt[idx], ct[idx] = Ac[acc], Wc[acc], Sc[acc], pc[acc], c[acc]
            accepted[idx] = True
            trying = trying[~acc]
            t[trying] *= 0.5

        step_a = t * np.linalg.norm(da, axis=1)
        step_p = np.linalg.norm(pt - p, axis=1)
        rec = accepted
        steps[active[rec], it, 0] = step_a[rec]
        steps[active[rec], it, 1] = step_p[rec]
        steps[active[rec], it, 2] = ct[rec]
        A, W, S, p, cost = At, Wt, St, pt, ct

        done = np.zeros(active.size, dtype=bool)
        conv = accepted & (step_a < step_tol) & (step_p < step_tol)
        stalled = ~accepted & ~unobs
        for mask, code, n_it in ((unobs, UNOBSERVABLE, it), (stalled, STALLED, it), (conv, CONVERGED, it + 1)):
            idx = active[mask]
            status_out[idx] = code
            it_out[idx] = n_it
            done |= mask
        finished = active[done]
        A_out[finished], p_out[finished], cost_out[finished] = A[done], p[done], cost[done]
        keep = ~done
        active = active[keep]
        A, W, S, p, cost = A[keep], W[keep], S[keep], p[keep], cost[keep]

    A_out[active], p_out[active], cost_out[active] = A, p, cost
    it_out[active] = max_iter
    status_out[active] = MAX_ITER
    return A_out, p_out, cost_out, it_out, status_out, steps


def analyze_batch(A, p, r, b, Rr, Rb, Rrb):
    N, n = r.shape[0], r.shape[1]
    eye = np.eye(3)
    q = _q_lambda(A, Rr, Rb, Rrb)
    W = _inv3(q)
    a = np.einsum("kij,knj->kni", A, r)
    G = np.zeros((N, n, 3, 6))
    G[..., :3] = _skew(a)
    G[..., 3:] = -eye
    Gt = np.swapaxes(G, -1, -2)
    F = np.sum(Gt @ W @ G, axis=1)
    F = 0.5 * (F + np.swapaxes(F, -1, -2))
    Pf = np.linalg.inv(F)
    Pf = 0.5 * (Pf + np.swapaxes(Pf, -1, -2))

    At = np.swapaxes(A, -1, -2)[:, None]
    Ab = A[:, None]
    e = b - a + p[:, None, :]
    C = (np.swapaxes(Rrb, -1, -2) @ At - Rb) @ W
    D = (Rr @ At - Rrb) @ W
    b_hat = b + np.einsum("knij,knj->kni", C, e)
    r_hat = r + np.einsum("knij,knj->kni", D, e)
    gpg = G @ Pf[:, None] @ Gt
    M = q - gpg
    Ct = np.swapaxes(C, -1, -2)
    Dt = np.swapaxes(D, -1, -2)
    crb = C @ M @ Ct
    crr = D @ M @ Dt
    T = eye - gpg @ W
    X = C @ T @ (Rb - Ab @ Rrb)
    Y = D @ T @ (np.swapaxes(Rrb, -1, -2) - Ab @ Rr)

    def sym(x):
        return 0.5 * (x + np.swapaxes(x, -1, -2))

    P_b = sym(Rb + crb + X + np.swapaxes(X, -1, -2))
    P_r = sym(Rr + crr + Y + np.swapaxes(Y, -1, -2))
    return Pf, b_hat, r_hat, sym(crb), sym(crr), P_b, P_r
