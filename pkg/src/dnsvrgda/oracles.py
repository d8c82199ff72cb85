"""Independent reference implementations used to cross-check the optimizer.

Nothing here imports the optimizer or the topology code: the replay is a
straight-line single-worker transcription of the iteration, and the eigenvalue
oracle bisects on Sturm counts instead of calling LAPACK.
"""
from __future__ import annotations

import math

import numpy as np

from .noise import STREAM_BATCH, stream


def single_machine_replay(problem, hp, T: int | None = None, seed: int = 0, worker: int = 0,
                          x0=None, y0=None):
    """Run the iteration for one worker alone (every gossip round is the identity).

    Draws batches from the same streams as worker ``worker`` of the decentralized
    run.  Returns a list with one dict of iterates, estimators and trackers per
    iteration; entry t holds the values computed in iteration t and the iterates
    x_{t+1}, y_{t+1}, z_{t+1} it produced.
    """
    T = hp.T if T is None else T
    k = worker
    px, py = problem.initial_point(seed)
    x = np.array(px if x0 is None else x0, dtype=float)
    y = np.array(py if y0 is None else y0, dtype=float)
    z = y.copy()
    r_xi, r_zeta, r_zeta2 = (stream(seed, STREAM_BATCH, k, fam) for fam in range(3))
    if hp.variance_reduced:
        gam_x, gam_y, gam_z = hp.gamma_x, hp.gamma_y, hp.gamma_z
    else:
        gam_x = gam_y = gam_z = 1.0

    traj = []
    xo = yo = zo = None
    u1 = u2 = u3 = v1 = v2 = w1 = None
    u = v = w = p = q = r = None
    for t in range(T):
        size = hp.B0 if t == 0 else hp.B
        xi = problem.draw_batch(k, "f", size, r_xi)
        zeta = problem.draw_batch(k, "g", size, r_zeta)
        zeta2 = zeta if hp.shared_zeta else problem.draw_batch(k, "g", size, r_zeta2)

        a1, a2 = problem.grad_f(k, x, y, xi)
        b1, b2 = problem.grad_g(k, x, y, zeta)
        c1, c2 = problem.grad_g(k, x, z, zeta2)
        if t == 0:
            n_u1, n_v1, n_u2, n_v2, n_u3, n_w1 = a1, a2, b1, b2, c1, c2
        else:
            oa1, oa2 = problem.grad_f(k, xo, yo, xi)
            ob1, ob2 = problem.grad_g(k, xo, yo, zeta)
            oc1, oc2 = problem.grad_g(k, xo, zo, zeta2)
            n_u1 = a1 if gam_x == 1.0 else (1 - gam_x) * (u1 - oa1) + a1
            n_v1 = a2 if gam_y == 1.0 else (1 - gam_y) * (v1 - oa2) + a2
            n_u2 = b1 if gam_x == 1.0 else (1 - gam_x) * (u2 - ob1) + b1
            n_v2 = b2 if gam_y == 1.0 else (1 - gam_y) * (v2 - ob2) + b2
            n_u3 = c1 if gam_x == 1.0 else (1 - gam_x) * (u3 - oc1) + c1
            n_w1 = c2 if gam_z == 1.0 else (1 - gam_z) * (w1 - oc2) + c2
        u1, v1, u2, v2, u3, w1 = n_u1, n_v1, n_u2, n_v2, n_u3, n_w1

        n_u = u1 + (u2 - u3) / hp.delta
        n_v = v1 + v2 / hp.delta
        n_w = w1 / hp.delta
        if t == 0:
            p, q, r = n_u, n_v, n_w
        else:
            p, q, r = p - u + n_u, q - v + n_v, r - w + n_w
        u, v, w = n_u, n_v, n_w

        xo, yo, zo = x, y, z
        x = x - hp.eta_x * _direction(p, hp.normalized)
        y = y - hp.eta_y * _direction(q, hp.normalized)
        z = z - hp.eta_z * _direction(r, hp.normalized)
        traj.append(dict(x=x, y=y, z=z, u1=u1, u2=u2, u3=u3, v1=v1, v2=v2, w1=w1,
                         u=u, v=v, w=w, p=p, q=q, r=r))
    return traj


def _direction(vec, normalized):
    if not normalized:
        return vec
    nrm = math.sqrt(float(np.dot(vec, vec)))
    return vec / nrm if nrm > 1e-12 else np.zeros_like(vec)


def finite_difference(fn, point, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    if not h > 0:
        raise ValueError("h must be > 0")
    p = np.array(point, dtype=float)
    g = np.empty_like(p)
    for i in range(p.size):
        e = p.copy()
        e[i] += h
        fp = fn(e)
        e[i] = p[i] - h
        fm = fn(e)
        g[i] = (fp - fm) / (2.0 * h)
    return g


def _tridiagonalize(A: list[list[float]]) -> tuple[list[float], list[float]]:
    """Householder reduction of symmetric A to tridiagonal form; returns (diagonal, off-diagonal)."""
    n = len(A)
    M = [row[:] for row in A]
    for k in range(n - 2):
        x = [M[i][k] for i in range(k + 1, n)]
        norm = math.sqrt(sum(v * v for v in x))
        if norm == 0.0:
            continue
        alpha = -norm if x[0] >= 0 else norm
        v = x[:]
        v[0] -= alpha
        vn = math.sqrt(sum(t * t for t in v))
        if vn == 0.0:
            continue
        v = [0.0] * (k + 1) + [t / vn for t in v]
        # M <- H M H with H = I - 2 v v^T
        Mv = [sum(M[i][j] * v[j] for j in range(n)) for i in range(n)]
        vMv = sum(v[i] * Mv[i] for i in range(n))
        for i in range(n):
            for j in range(n):
                M[i][j] += -2.0 * v[i] * Mv[j] - 2.0 * Mv[i] * v[j] + 4.0 * vMv * v[i] * v[j]
    return [M[i][i] for i in range(n)], [M[i + 1][i] for i in range(n - 1)]


def _count_below(diag: list[float], off: list[float], sigma: float) -> int:
    """Number of eigenvalues of the symmetric tridiagonal matrix strictly below sigma (Sturm count)."""
    pivmin = 1e-300 + 1e-30 * max([1.0] + [b * b for b in off])
    neg = 0
    q = diag[0] - sigma
    for i in range(len(diag)):
        if i > 0:
            q = diag[i] - sigma - off[i - 1] ** 2 / q
        if abs(q) < pivmin:
            q = -pivmin
        if q < 0:
            neg += 1
    return neg


def brute_eigen(matrix, tol: float = 1e-14) -> list[float]:
    """Eigenvalues of a symmetric matrix (K <= 8), sorted by decreasing magnitude.

    Householder tridiagonalization followed by bisection on Sturm counts.
    """
    A = [[float(v) for v in row] for row in np.asarray(matrix)]
    n = len(A)
    if n > 8:
        raise ValueError(f"brute_eigen handles K <= 8, got {n}")
    if any(abs(A[i][j] - A[j][i]) > 1e-12 for i in range(n) for j in range(n)):
        raise ValueError("brute_eigen needs a symmetric matrix")
    diag, off = _tridiagonalize(A)
    bound = max(sum(abs(v) for v in row) for row in A) + 1.0
    eig = []
    for k in range(n):
        # k-th smallest: smallest s with count_below(s) > k
        lo, hi = -bound, bound
        while hi - lo > tol * max(1.0, abs(lo), abs(hi)):
            mid = 0.5 * (lo + hi)
            if mid in (lo, hi):
                break
            if _count_below(diag, off, mid) > k:
                hi = mid
            else:
                lo = mid
        eig.append(0.5 * (lo + hi))
    return sorted(eig, key=abs, reverse=True)
