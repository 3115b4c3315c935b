"""Independent reference implementations used only by the tests."""
import numpy as np


def monotone_paths(n, m):
    """Every warping path from (0, 0) to (n-1, m-1) with unit steps."""
    out = []

    def walk(i, j, acc):
        acc = acc + [(i, j)]
        if (i, j) == (n - 1, m - 1):
            out.append(acc)
            return
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, acc)
        if i + 1 < n:
            walk(i + 1, j, acc)
        if j + 1 < m:
            walk(i, j + 1, acc)

    walk(0, 0, [])
    return out


def path_cost(delta, path):
    total = 0.0
    for i, j in path:
        total = delta[i, j] + total
    return total


def brute_dtw(delta):
    return min(path_cost(delta, p) for p in monotone_paths(*delta.shape))


def brute_soft_dtw(delta, gamma):
    costs = np.array([path_cost(delta, p) for p in monotone_paths(*delta.shape)])
    mn = costs.min()
    return mn - gamma * np.log(np.exp(-(costs - mn) / gamma).sum())


def brute_tdi(delta, omega):
    """Hard TDI from the optimal path; asserts the optimum is unique."""
    paths = monotone_paths(*delta.shape)
    costs = np.array([path_cost(delta, p) for p in paths])
    best = np.flatnonzero(costs == costs.min())
    assert best.size == 1, "tie in optimal path"
    return sum(omega[i, j] for i, j in paths[best[0]])


def central_diff(f, x, eps=1e-6):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + eps
        a = f(x)
        x[idx] = old - eps
        b = f(x)
        x[idx] = old
        g[idx] = (a - b) / (2 * eps)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.abs(a - b).max() / max(np.abs(b).max(), 1e-12))
