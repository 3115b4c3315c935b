"""Sequence similarity: DTW, Soft-DTW, TDI, point metrics and the composite loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _dp
from .errors import ConfigurationError, ShapeError

DEFAULT_GAMMA = 0.1


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def pairwise_cost(x, y) -> np.ndarray:
    """Squared Euclidean cost between every point of ``x`` (n x p) and ``y`` (m x p)."""
    x, y = _as_points(x), _as_points(y)
    if x.shape[1] != y.shape[1]:
        raise ShapeError(f"feature dims differ: {x.shape[1]} vs {y.shape[1]}")
    diff = x[:, None, :] - y[None, :, :]
    return (diff * diff).sum(axis=-1)


def _batch_cost(x, y) -> np.ndarray:
    # x, y: (S, k) scalar series -> (S, k, k)
    d = x[:, :, None] - y[:, None, :]
    return d * d


def soft_min(values, gamma: float) -> float:
    a = np.asarray(values, dtype=float)
    if a.size == 0:
        raise ValueError("soft_min of an empty list")
    if gamma < 0:
        raise ConfigurationError("gamma must be >= 0")
    mn = a.min()
    if gamma == 0:
        return float(mn)
    return float(mn - gamma * np.log(np.exp(-(a - mn) / gamma).sum()))


def _path_from_weights(P) -> list[tuple[int, int]]:
    n, m = P.shape[:2]
    i, j = n - 1, m - 1
    path = [(i, j)]
    while (i, j) != (0, 0):
        k = int(np.argmax(P[i, j]))
        if k == 0:
            i, j = i - 1, j - 1
        elif k == 1:
            i -= 1
        else:
            j -= 1
        path.append((i, j))
    return path[::-1]


def dtw_hard(delta):
    """Unweighted DTW value and optimal warping path for a cost matrix.

    Backtracking prefers the diagonal move, then vertical, then horizontal.
    """
    delta = np.asarray(delta, dtype=float)
    if delta.ndim != 2 or delta.size == 0:
        raise ShapeError("dtw_hard needs a non-empty 2-D cost matrix")
    R, P = _dp.run_forward(delta[None], 0.0)
    return float(R[0, -1, -1]), _path_from_weights(P[0])


def dtw_hard_batch(deltas) -> np.ndarray:
    R, _ = _dp.run_forward(np.asarray(deltas, dtype=float), 0.0)
    return R[:, -1, -1].copy()


@dataclass
class SoftDtwResult:
    value: float
    gamma: float
    soft_alignment: np.ndarray
    R: np.ndarray
    weights: np.ndarray = None


def soft_dtw(delta, gamma: float = DEFAULT_GAMMA) -> SoftDtwResult:
    """Soft-DTW value and its gradient E = d value / d delta.

    For gamma = 0 the value is the hard DTW and E is the indicator matrix of
    the tie-broken optimal path.
    """
    if gamma < 0:
        raise ConfigurationError("gamma must be >= 0")
    delta = np.asarray(delta, dtype=float)
    R, P = _dp.run_forward(delta[None], gamma)
    E = _dp.run_backward(P)
    return SoftDtwResult(float(R[0, -1, -1]), float(gamma), E[0], R[0, 1:, 1:].copy(), P[0])


def tdi_penalty(k: int) -> np.ndarray:
    idx = np.arange(k, dtype=float)
    return (idx[:, None] - idx[None, :]) ** 2 / float(k * k)


def tdi(x_hat, y, gamma: float = DEFAULT_GAMMA, mode: str = "hard") -> float:
    """Temporal distortion: alignment mass weighted by squared off-diagonal distance."""
    x_hat, y = _as_points(x_hat), _as_points(y)
    if x_hat.shape[0] != y.shape[0]:
        raise ShapeError("tdi needs equal-length series")
    delta = pairwise_cost(x_hat, y)
    omega = tdi_penalty(x_hat.shape[0])
    if mode == "hard":
        _, P = _dp.run_forward(delta[None], 0.0)
        A = _dp.run_backward(P)[0]
    elif mode == "soft":
        A = soft_dtw(delta, gamma).soft_alignment
    else:
        raise ConfigurationError(f"unknown tdi mode {mode!r}")
    return float((A * omega).sum())


def hard_dtw_tdi_batch(x_hat, y):
    """Hard DTW values and hard TDI for stacks of scalar series, shape (S, k)."""
    x_hat = np.asarray(x_hat, dtype=float)
    y = np.asarray(y, dtype=float)
    if x_hat.shape != y.shape or x_hat.ndim != 2:
        raise ShapeError("hard_dtw_tdi_batch needs two (S, k) arrays of equal shape")
    return _dp.run_hard(x_hat, y)


def point_metrics(y_hat, y) -> dict[str, float]:
    y_hat = np.asarray(y_hat, dtype=float)
    y = np.asarray(y, dtype=float)
    if y_hat.shape != y.shape:
        raise ShapeError(f"shape mismatch {y_hat.shape} vs {y.shape}")
    err = y_hat - y
    mse = float(np.mean(err**2))
    return {
        "mse": mse,
        "rmse": float(np.sqrt(mse)),
        "mae": float(np.mean(np.abs(err))),
        "mape_percent": float(100.0 * np.mean(np.abs(err) / np.maximum(np.abs(y), 1e-8))),
    }


def check_weights(weights) -> tuple[float, float, float]:
    w = tuple(float(v) for v in weights)
    if len(w) != 3 or any(v < 0 for v in w):
        raise ConfigurationError("loss weights must be three non-negative numbers")
    if abs(sum(w) - 1.0) > 1e-9:
        raise ConfigurationError(f"loss weights must sum to 1, got {sum(w)!r}")
    return w


def composite_loss(y_hat, y, weights, gamma: float = DEFAULT_GAMMA):
    """Weighted Soft-DTW + soft TDI + MSE over forecasts shaped (B, H, K).

    Each (sample, target channel) pair is one scalar series of length H; the
    shape and time terms are averaged over those series and the MSE over all
    elements. Returns ``(loss, d loss / d y_hat)``.
    """
    w_shape, w_time, w_space = check_weights(weights)
    y_hat = np.asarray(y_hat, dtype=float)
    y = np.asarray(y, dtype=float)
    if y_hat.shape != y.shape:
        raise ShapeError(f"shape mismatch {y_hat.shape} vs {y.shape}")
    squeeze = y_hat.ndim == 2
    if squeeze:
        y_hat, y = y_hat[None], y[None]
    B, H, K = y_hat.shape
    n_series = B * K
    err = y_hat - y
    loss = w_space * float(np.mean(err**2))
    grad = w_space * 2.0 * err / err.size

    if w_shape > 0 or w_time > 0:
        xs = y_hat.transpose(0, 2, 1).reshape(n_series, H)
        ys = y.transpose(0, 2, 1).reshape(n_series, H)
        if gamma > 0:
            values, tdis, g_series = _dp.run_composite(xs, ys, gamma, w_shape, w_time)
        else:
            # hard alignment: TDI is piecewise constant, only the DTW term has a gradient
            diff = xs[:, :, None] - ys[:, None, :]
            R, P = _dp.run_forward(diff * diff, 0.0)
            A = _dp.run_backward(P)
            values = R[:, -1, -1]
            tdis = (A * tdi_penalty(H)).sum(axis=(1, 2))
            g_series = 2.0 * w_shape * (A * diff).sum(axis=2)
        loss += w_shape * float(values.mean()) + w_time * float(tdis.mean())
        grad += (g_series / n_series).reshape(B, K, H).transpose(0, 2, 1)
    if squeeze:
        grad = grad[0]
    return loss, grad
