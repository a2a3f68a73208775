"""Symmetric eigendecomposition and SPD matrix functions.

Everything here is compiled with numba. The eigensolver is a cyclic Jacobi
iteration, which is exact enough and fast for the small matrices (n <= ~16)
the SPD space is meant for. Functions return NaN instead of raising so they
stay in nopython mode; callers in :mod:`hadamard_flows.spaces` turn NaN into
exceptions.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# Eigenvalues at or below this are treated as not positive-definite.
PD_FLOOR = 1e-14

_MAX_SWEEPS = 60


@njit(cache=True)
def jacobi_eigh(A):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(w, V)`` with ``A = V @ diag(w) @ V.T``. Sweeps stop once the
    off-diagonal Frobenius norm is at most ``1e-15 * ||A||_F`` (and never
    above 1e-12 for matrices of moderate norm).
    """
    n = A.shape[0]
    M = A.copy()
    V = np.eye(n)
    fro = 0.0
    for i in range(n):
        for j in range(n):
            fro += M[i, j] * M[i, j]
    fro = np.sqrt(fro)
    thresh = 1e-15 * fro
    if thresh > 1e-12:
        thresh = 1e-12
    for _ in range(_MAX_SWEEPS):
        off = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                off += 2.0 * M[i, j] * M[i, j]
        if np.sqrt(off) <= thresh:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = M[p, q]
                if apq == 0.0:
                    continue
                theta = (M[q, q] - M[p, p]) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + np.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    mkp = M[k, p]
                    mkq = M[k, q]
                    M[k, p] = c * mkp - s * mkq
                    M[k, q] = s * mkp + c * mkq
                for k in range(n):
                    mpk = M[p, k]
                    mqk = M[q, k]
                    M[p, k] = c * mpk - s * mqk
                    M[q, k] = s * mpk + c * mqk
                M[p, q] = 0.0
                M[q, p] = 0.0
                for k in range(n):
                    vkp = V[k, p]
                    vkq = V[k, q]
                    V[k, p] = c * vkp - s * vkq
                    V[k, q] = s * vkp + c * vkq
    w = np.empty(n)
    for i in range(n):
        w[i] = M[i, i]
    return w, V


@njit(cache=True)
def _compose(V, vals):
    # V @ diag(vals) @ V.T, symmetric by construction
    n = V.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            acc = 0.0
            for k in range(n):
                acc += V[i, k] * vals[k] * V[j, k]
            out[i, j] = acc
            out[j, i] = acc
    return out


@njit(cache=True)
def _sym(A):
    return 0.5 * (A + A.T)


@njit(cache=True)
def _congruence(S, Y):
    # S @ Y @ S for symmetric S, symmetrized; loops beat BLAS calls at this size
    n = S.shape[0]
    T = np.zeros((n, n))
    for i in range(n):
        for k in range(n):
            sik = S[i, k]
            for j in range(n):
                T[i, j] += sik * Y[k, j]
    out = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            acc = 0.0
            for k in range(n):
                acc += T[i, k] * S[k, j]
            out[i, j] = acc
    for i in range(n):
        for j in range(i + 1, n):
            out[j, i] = out[i, j]
    return out


@njit(cache=True)
def _roots(X):
    """Return (X^{1/2}, X^{-1/2}, min eigenvalue)."""
    w, V = jacobi_eigh(X)
    wmin = w.min()
    if wmin <= PD_FLOOR:
        nan = np.full(X.shape, np.nan)
        return nan, nan, wmin
    r = np.sqrt(w)
    return _compose(V, r), _compose(V, 1.0 / r), wmin


@njit(cache=True)
def min_eigenvalue(X):
    w, _ = jacobi_eigh(X)
    return w.min()


@njit(cache=True)
def spd_distance(X, Y):
    """Affine-invariant distance ``||log(X^{-1/2} Y X^{-1/2})||_F``."""
    _, iS, wmin = _roots(X)
    if wmin <= PD_FLOOR:
        return np.nan
    M = _congruence(iS, Y)
    w, _ = jacobi_eigh(M)
    if w.min() <= PD_FLOOR:
        return np.nan
    acc = 0.0
    for v in w:
        lv = np.log(v)
        acc += lv * lv
    return np.sqrt(acc)


@njit(cache=True)
def spd_geodesic(X, Y, t):
    """``X^{1/2} (X^{-1/2} Y X^{-1/2})^t X^{1/2}``."""
    S, iS, wmin = _roots(X)
    if wmin <= PD_FLOOR:
        return np.full(X.shape, np.nan)
    M = _congruence(iS, Y)
    w, V = jacobi_eigh(M)
    if w.min() <= PD_FLOOR:
        return np.full(X.shape, np.nan)
    return _congruence(S, _compose(V, w ** t))


@njit(cache=True)
def spd_log(X, Y):
    """Riemannian logarithm of ``Y`` at ``X`` (a symmetric matrix)."""
    S, iS, wmin = _roots(X)
    if wmin <= PD_FLOOR:
        return np.full(X.shape, np.nan)
    M = _congruence(iS, Y)
    w, V = jacobi_eigh(M)
    if w.min() <= PD_FLOOR:
        return np.full(X.shape, np.nan)
    return _congruence(S, _compose(V, np.log(w)))


@njit(cache=True)
def spd_exp(X, U):
    """Riemannian exponential of the tangent vector ``U`` at ``X``."""
    S, iS, wmin = _roots(X)
    if wmin <= PD_FLOOR:
        return np.full(X.shape, np.nan)
    w, V = jacobi_eigh(_congruence(iS, U))
    return _congruence(S, _compose(V, np.exp(w)))


@njit(cache=True)
def spd_inner(X, U, W):
    """``tr(X^{-1} U X^{-1} W)``."""
    _, iS, wmin = _roots(X)
    if wmin <= PD_FLOOR:
        return np.nan
    A = _congruence(iS, U)
    B = _congruence(iS, W)
    return np.sum(A * B)


@njit(cache=True)
def spd_segment_slope(P, Q, X, t):
    """Derivative in ``t`` of ``d(X, gamma(t))^2 / 2`` on the geodesic [P, Q].

    Evaluated as ``-<log_G X, log_G Q - log_G P>_G`` at ``G = gamma(t)``, in
    whitened coordinates so only logarithms of congruences are needed.
    """
    G = spd_geodesic(P, Q, t)
    _, iG, wmin = _roots(G)
    if wmin <= PD_FLOOR:
        return np.nan
    wx, Vx = jacobi_eigh(_congruence(iG, X))
    wq, Vq = jacobi_eigh(_congruence(iG, Q))
    wp, Vp = jacobi_eigh(_congruence(iG, P))
    Lx = _compose(Vx, np.log(wx))
    D = _compose(Vq, np.log(wq)) - _compose(Vp, np.log(wp))
    return -np.sum(Lx * D)


@njit(cache=True)
def euclid_sweeps(x, anchors, weights, powers, h, nsweeps):
    """Cyclic resolvent sweeps for a sum of ``w_j d(., a_j)^p_j`` in R^n."""
    y = x.copy()
    k, n = anchors.shape
    for _ in range(nsweeps):
        for j in range(k):
            if powers[j] == 2:
                s = 2.0 * h * weights[j]
                t = s / (1.0 + s)
            else:
                d = 0.0
                for i in range(n):
                    diff = anchors[j, i] - y[i]
                    d += diff * diff
                d = np.sqrt(d)
                if d == 0.0:
                    continue
                step = h * weights[j]
                t = 1.0 if step >= d else step / d
            for i in range(n):
                y[i] = y[i] + t * (anchors[j, i] - y[i])
    return y


@njit(cache=True)
def spd_sweeps(X, anchors, weights, powers, h, nsweeps):
    """Cyclic resolvent sweeps for a sum of ``w_j d(., A_j)^p_j`` on SPD(n).

    Uses ``Y #_t A = A^{1/2} (A^{-1/2} Y A^{-1/2})^{1-t} A^{1/2}`` with the
    anchor roots computed once, so each step needs one eigendecomposition.
    Returns NaN if an iterate leaves the positive-definite cone.
    """
    k, n, _ = anchors.shape
    roots = np.empty((k, n, n))
    iroots = np.empty((k, n, n))
    for j in range(k):
        S, iS, wmin = _roots(anchors[j])
        if wmin <= PD_FLOOR:
            return np.full(X.shape, np.nan)
        roots[j] = S
        iroots[j] = iS
    Y = X.copy()
    for _ in range(nsweeps):
        for j in range(k):
            w, V = jacobi_eigh(_congruence(iroots[j], Y))
            if w.min() <= PD_FLOOR:
                return np.full(X.shape, np.nan)
            lw = np.log(w)
            if powers[j] == 2:
                s = 2.0 * h * weights[j]
                t = s / (1.0 + s)
            else:
                d = np.sqrt(np.sum(lw * lw))
                if d == 0.0:
                    continue
                step = h * weights[j]
                t = 1.0 if step >= d else step / d
            Y = _congruence(roots[j], _compose(V, np.exp((1.0 - t) * lw)))
    return Y
