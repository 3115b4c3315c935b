"""Batched DTW / Soft-DTW dynamic programs compiled with numba.

All kernels take a stack of cost matrices ``D`` of shape (S, n, m).
``P[s, i, j, k]`` holds the soft-min weight that cell (i, j) puts on its
predecessor k: 0 = diagonal (i-1, j-1), 1 = vertical (i-1, j),
2 = horizontal (i, j-1). With gamma = 0 the weights are one-hot and ties go
to the diagonal, then vertical, then horizontal move.
"""
import math

import numba
import numpy as np

_INF = np.inf
# exp(-37.5) < 2**-53: such soft-min terms vanish when added to 1.0
_NEGLIGIBLE = -37.5


@numba.njit(cache=True)
def forward(D, gamma, R, P):
    S, n, m = D.shape
    for s in range(S):
        for i in range(n + 1):
            for j in range(m + 1):
                R[s, i, j] = _INF
        R[s, 0, 0] = 0.0
        for i in range(1, n + 1):
            for j in range(1, m + 1):
                r0 = R[s, i - 1, j - 1]
                r1 = R[s, i - 1, j]
                r2 = R[s, i, j - 1]
                mn = r0
                if r1 < mn:
                    mn = r1
                if r2 < mn:
                    mn = r2
                if gamma == 0.0:
                    P[s, i - 1, j - 1, 0] = 0.0
                    P[s, i - 1, j - 1, 1] = 0.0
                    P[s, i - 1, j - 1, 2] = 0.0
                    if r0 == mn:
                        P[s, i - 1, j - 1, 0] = 1.0
                    elif r1 == mn:
                        P[s, i - 1, j - 1, 1] = 1.0
                    else:
                        P[s, i - 1, j - 1, 2] = 1.0
                    R[s, i, j] = D[s, i - 1, j - 1] + mn
                else:
                    e0 = np.exp((mn - r0) / gamma)
                    e1 = np.exp((mn - r1) / gamma)
                    e2 = np.exp((mn - r2) / gamma)
                    tot = e0 + e1 + e2
                    P[s, i - 1, j - 1, 0] = e0 / tot
                    P[s, i - 1, j - 1, 1] = e1 / tot
                    P[s, i - 1, j - 1, 2] = e2 / tot
                    R[s, i, j] = D[s, i - 1, j - 1] + (mn - gamma * np.log(tot))
    return R


@numba.njit(cache=True)
def backward(P, E):
    """E = d R[n, m] / d D, propagated through the stored soft-min weights."""
    S, n, m = E.shape
    for s in range(S):
        for i in range(n - 1, -1, -1):
            for j in range(m - 1, -1, -1):
                if i == n - 1 and j == m - 1:
                    E[s, i, j] = 1.0
                    continue
                acc = 0.0
                if i + 1 < n and j + 1 < m:
                    acc += E[s, i + 1, j + 1] * P[s, i + 1, j + 1, 0]
                if i + 1 < n:
                    acc += E[s, i + 1, j] * P[s, i + 1, j, 1]
                if j + 1 < m:
                    acc += E[s, i, j + 1] * P[s, i, j + 1, 2]
                E[s, i, j] = acc
    return E


@numba.njit(cache=True)
def hessian_vector(P, E, Z, gamma, Rd, Ed):
    """Directional derivative of E along Z (forward-mode over the backward sweep).

    Because E is the gradient of the Soft-DTW value, the result equals the
    Hessian of the value applied to Z, i.e. the gradient of <E, Z> w.r.t. D.
    """
    S, n, m = E.shape
    for s in range(S):
        for i in range(n + 1):
            for j in range(m + 1):
                Rd[s, i, j] = 0.0
        for i in range(n):
            for j in range(m):
                Rd[s, i + 1, j + 1] = (
                    Z[s, i, j]
                    + P[s, i, j, 0] * Rd[s, i, j]
                    + P[s, i, j, 1] * Rd[s, i, j + 1]
                    + P[s, i, j, 2] * Rd[s, i + 1, j]
                )
        for i in range(n - 1, -1, -1):
            for j in range(m - 1, -1, -1):
                if i == n - 1 and j == m - 1:
                    Ed[s, i, j] = 0.0
                    continue
                own = Rd[s, i + 1, j + 1]
                acc = 0.0
                if i + 1 < n and j + 1 < m:
                    p = P[s, i + 1, j + 1, 0]
                    q = Rd[s, i + 2, j + 2] - Z[s, i + 1, j + 1]
                    acc += Ed[s, i + 1, j + 1] * p - E[s, i + 1, j + 1] * p * (own - q) / gamma
                if i + 1 < n:
                    p = P[s, i + 1, j, 1]
                    q = Rd[s, i + 2, j + 1] - Z[s, i + 1, j]
                    acc += Ed[s, i + 1, j] * p - E[s, i + 1, j] * p * (own - q) / gamma
                if j + 1 < m:
                    p = P[s, i, j + 1, 2]
                    q = Rd[s, i + 1, j + 2] - Z[s, i, j + 1]
                    acc += Ed[s, i, j + 1] * p - E[s, i, j + 1] * p * (own - q) / gamma
                Ed[s, i, j] = acc
    return Ed


def run_forward(D, gamma):
    D = np.ascontiguousarray(D, dtype=np.float64)
    S, n, m = D.shape
    R = np.empty((S, n + 1, m + 1))
    P = np.empty((S, n, m, 3))
    forward(D, float(gamma), R, P)
    return R, P


def run_backward(P):
    S, n, m, _ = P.shape
    E = np.empty((S, n, m))
    backward(P, E)
    return E


def run_hessian_vector(P, E, Z, gamma):
    S, n, m = E.shape
    Z = np.ascontiguousarray(np.broadcast_to(Z, (S, n, m)), dtype=np.float64)
    Rd = np.empty((S, n + 1, m + 1))
    Ed = np.empty((S, n, m))
    hessian_vector(P, E, Z, float(gamma), Rd, Ed)
    return Ed


@numba.njit(cache=True, error_model="numpy")
def composite_series(X, Y, gamma, w_shape, w_time, values, tdis, grad):
    """Fused Soft-DTW + soft-TDI pass over scalar series X, Y of shape (S, k), gamma > 0.

    Writes per-series Soft-DTW ``values`` and soft ``tdis``, and
    ``grad[s] = d (w_shape * value + w_time * tdi) / d X[s]``.
    Two sweeps per series. The forward one builds R, the soft-min weights P
    and the tangent Rd of R along the TDI penalty. The backward one builds E
    (alignment) and Ed (its tangent, i.e. the Hessian-vector product) and
    accumulates the gradient. Indices are 1-based and row/column k + 1 of E
    and Ed are zero padding. The argmin term of each soft-min is exactly
    exp(0) = 1, and terms below exp(-37.5) cannot change the normalizer in
    double precision, so neither is evaluated.
    """
    S, k = X.shape
    R = np.empty((k + 1, k + 1))
    Rd = np.empty((k + 1, k + 1))
    P = np.empty((k + 1, k + 1, 3))
    E = np.empty((k + 2, k + 2))
    Ed = np.empty((k + 2, k + 2))
    ig = 1.0 / gamma
    ikk = 1.0 / float(k * k)
    want = w_time > 0.0
    for s in range(S):
        for i in range(k + 1):
            R[i, 0] = _INF
            R[0, i] = _INF
            Rd[i, 0] = 0.0
            Rd[0, i] = 0.0
        R[0, 0] = 0.0
        for i in range(1, k + 1):
            xi = X[s, i - 1]
            for j in range(1, k + 1):
                d = xi - Y[s, j - 1]
                r0 = R[i - 1, j - 1]
                r1 = R[i - 1, j]
                r2 = R[i, j - 1]
                if r0 <= r1 and r0 <= r2:
                    mn = r0
                    e0 = 1.0
                    a = (mn - r1) * ig
                    e1 = np.exp(a) if a > _NEGLIGIBLE else 0.0
                    a = (mn - r2) * ig
                    e2 = np.exp(a) if a > _NEGLIGIBLE else 0.0
                elif r1 <= r2:
                    mn = r1
                    e1 = 1.0
                    a = (mn - r0) * ig
                    e0 = np.exp(a) if a > _NEGLIGIBLE else 0.0
                    a = (mn - r2) * ig
                    e2 = np.exp(a) if a > _NEGLIGIBLE else 0.0
                else:
                    mn = r2
                    e2 = 1.0
                    a = (mn - r0) * ig
                    e0 = np.exp(a) if a > _NEGLIGIBLE else 0.0
                    a = (mn - r1) * ig
                    e1 = np.exp(a) if a > _NEGLIGIBLE else 0.0
                tot = e0 + e1 + e2
                inv = 1.0 / tot
                p0 = e0 * inv
                p1 = e1 * inv
                p2 = e2 * inv
                P[i, j, 0] = p0
                P[i, j, 1] = p1
                P[i, j, 2] = p2
                if tot == 1.0:
                    R[i, j] = d * d + mn
                else:
                    R[i, j] = d * d + (mn - gamma * np.log(tot))
                z = (i - j) * (i - j) * ikk
                Rd[i, j] = z + p0 * Rd[i - 1, j - 1] + p1 * Rd[i - 1, j] + p2 * Rd[i, j - 1]
        values[s] = R[k, k]
        # backward sweep on 1-based indices; row/col k+1 act as zero padding
        for i in range(k + 2):
            E[i, k + 1] = 0.0
            E[k + 1, i] = 0.0
            Ed[i, k + 1] = 0.0
            Ed[k + 1, i] = 0.0
        t = 0.0
        for i in range(k, 0, -1):
            xi = X[s, i - 1]
            g = 0.0
            for j in range(k, 0, -1):
                z = (i - j) * (i - j) * ikk
                if i == k and j == k:
                    e = 1.0
                    ed = 0.0
                else:
                    e = 0.0
                    ed = 0.0
                    own = Rd[i, j]
                    if i < k and j < k:
                        p = P[i + 1, j + 1, 0]
                        ee = E[i + 1, j + 1]
                        e += ee * p
                        if want:
                            q = Rd[i + 1, j + 1] - (i - j) * (i - j) * ikk
                            ed += Ed[i + 1, j + 1] * p - ee * p * (own - q) * ig
                    if i < k:
                        p = P[i + 1, j, 1]
                        ee = E[i + 1, j]
                        e += ee * p
                        if want:
                            q = Rd[i + 1, j] - (i + 1 - j) * (i + 1 - j) * ikk
                            ed += Ed[i + 1, j] * p - ee * p * (own - q) * ig
                    if j < k:
                        p = P[i, j + 1, 2]
                        ee = E[i, j + 1]
                        e += ee * p
                        if want:
                            q = Rd[i, j + 1] - (i - j - 1) * (i - j - 1) * ikk
                            ed += Ed[i, j + 1] * p - ee * p * (own - q) * ig
                E[i, j] = e
                Ed[i, j] = ed
                t += e * z
                g += (w_shape * e + w_time * ed) * 2.0 * (xi - Y[s, j - 1])
            grad[s, i - 1] = g
        tdis[s] = t



def run_composite(X, Y, gamma, w_shape, w_time):
    """Returns (soft-DTW values, soft TDIs, gradient of the weighted sum w.r.t. X)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    S = X.shape[0]
    values = np.empty(S)
    tdis = np.empty(S)
    grad = np.empty_like(X)
    composite_series(X, Y, float(gamma), float(w_shape), float(w_time), values, tdis, grad)
    return values, tdis, grad


@numba.njit(cache=True)
def hard_series(X, Y, values, tdis):
    """Hard DTW value and hard TDI for each pair of scalar series in X, Y (S, k)."""
    S, k = X.shape
    R = np.empty((k + 1, k + 1))
    move = np.empty((k, k), dtype=np.int8)
    kk = float(k * k)
    for s in range(S):
        for i in range(k + 1):
            R[i, 0] = _INF
            R[0, i] = _INF
        R[0, 0] = 0.0
        for i in range(1, k + 1):
            xi = X[s, i - 1]
            for j in range(1, k + 1):
                d = xi - Y[s, j - 1]
                r0 = R[i - 1, j - 1]
                r1 = R[i - 1, j]
                r2 = R[i, j - 1]
                mn = r0
                mv = 0
                if r1 < mn:
                    mn = r1
                    mv = 1
                if r2 < mn:
                    mn = r2
                    mv = 2
                move[i - 1, j - 1] = mv
                R[i, j] = d * d + mn
        values[s] = R[k, k]
        i = k - 1
        j = k - 1
        t = 0.0
        while True:
            t += (i - j) * (i - j) / kk
            if i == 0 and j == 0:
                break
            mv = move[i, j]
            if mv == 0:
                i -= 1
                j -= 1
            elif mv == 1:
                i -= 1
            else:
                j -= 1
        tdis[s] = t


def run_hard(X, Y):
    X = np.ascontiguousarray(X, dtype=np.float64)
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    values = np.empty(X.shape[0])
    tdis = np.empty(X.shape[0])
    hard_series(X, Y, values, tdis)
    return values, tdis
