"""Recurrent MIMO forecaster written directly in numpy.

Supported variants: tanh RNN or LSTM cells, uni- or bidirectional, stacked,
with either a plain affine output or a residual head that also sees a linear
projection of the raw input window. Gradients come from a hand-written
reverse pass (backpropagation through time).

Gate order inside stacked LSTM matrices is input, forget, cell, output.
"""
from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass

import numba
import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, NumericError, ShapeError, UsageError

GATES = ("input", "forget", "cell", "output")
MODES = ("train", "eval", "mc")


@dataclass
class NetworkConfig:
    input_dim: int
    n_targets: int
    hidden_dim: int = 256
    n_layers: int = 2
    cell: str = "lstm"
    bidirectional: bool = True
    residual_head: bool = True
    skip: bool = True
    linear_dim: int = 520
    n_linear: int = 2
    window_len: int = 40
    horizon: int = 128
    dropout_rate: float = 0.2
    seed: int = 0

    def __post_init__(self):
        dims = (self.input_dim, self.n_targets, self.hidden_dim, self.n_layers,
                self.linear_dim, self.n_linear, self.window_len, self.horizon)
        if min(dims) < 1:
            raise ConfigurationError("all network dimensions must be >= 1")
        if self.cell not in ("rnn", "lstm"):
            raise ConfigurationError(f"unknown cell type {self.cell!r}")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigurationError("dropout_rate must be in [0, 1)")

    @property
    def gate_count(self) -> int:
        return 4 if self.cell == "lstm" else 1

    @property
    def rnn_width(self) -> int:
        return self.hidden_dim * (2 if self.bidirectional else 1)

    def to_dict(self) -> dict:
        return asdict(self)


class Param:
    __slots__ = ("value", "grad", "m", "v")

    def __init__(self, value):
        self.value = np.asarray(value, dtype=float)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)


class NetworkParameters:
    """Ordered named parameters with gradient and Adam moment slots."""

    def __init__(self):
        self._params: dict[str, Param] = {}
        self.t = 0

    def add(self, name, value) -> Param:
        self._params[name] = Param(value)
        return self._params[name]

    def __getitem__(self, name) -> Param:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self):
        for p in self._params.values():
            p.grad.fill(0.0)

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float((p.grad**2).sum()) for p in self._params.values())))

    def n_values(self) -> int:
        return sum(p.value.size for p in self._params.values())


@dataclass
class LSTMCellParams:
    """Stacked gate parameters: W (4h x in), U (4h x h), b (4h)."""

    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    @property
    def hidden_dim(self) -> int:
        return self.U.shape[1]

    def gate(self, name):
        h = self.hidden_dim
        k = GATES.index(name)
        return self.W[k * h:(k + 1) * h], self.U[k * h:(k + 1) * h], self.b[k * h:(k + 1) * h]


@dataclass
class CellState:
    h: np.ndarray
    c: np.ndarray


def lstm_cell_forward(params: LSTMCellParams, x_t, prev: CellState) -> CellState:
    x_t = np.asarray(x_t, dtype=float)
    h = params.hidden_dim
    if params.W.shape[1] != x_t.shape[-1] or prev.h.shape[-1] != h or prev.c.shape[-1] != h:
        raise ShapeError("LSTM cell input or state has the wrong size")
    a = params.W @ x_t + params.U @ prev.h + params.b
    acts = {
        "input": expit(a[:h]),
        "forget": expit(a[h:2 * h]),
        "cell": np.tanh(a[2 * h:3 * h]),
        "output": expit(a[3 * h:]),
    }
    for name, val in acts.items():
        if not np.all(np.isfinite(val)):
            raise NumericError(f"non-finite activation in {name} gate")
    c = acts["forget"] * prev.c + acts["input"] * acts["cell"]
    return CellState(h=acts["output"] * np.tanh(c), c=c)


# ---------------------------------------------------------------- recurrences
# Internally sequences are time-major (T, B, .) so each step reads a
# contiguous block; callers pass and receive batch-major (B, T, .).
def _project(X, W, b):
    B, T, D = X.shape
    return (X.transpose(1, 0, 2).reshape(T * B, D) @ W.T + b).reshape(T, B, -1)


def _input_grads(dpre, X, W, h_prev):
    T, B, G = dpre.shape
    flat = dpre.reshape(T * B, G)
    dW = flat.T @ X.transpose(1, 0, 2).reshape(T * B, -1)
    dU = flat.T @ h_prev.reshape(T * B, -1)
    dX = (flat @ W).reshape(T, B, -1).transpose(1, 0, 2)
    return dX, dW, dU, flat.sum(axis=0)


def _shifted(Hs):
    # hidden state entering each step: zeros, then Hs[:-1]
    out = np.empty_like(Hs)
    out[0] = 0.0
    out[1:] = Hs[:-1]
    return out


def _rnn_forward(W, U, b, X):
    pre = _project(X, W, b)
    T, B, hdim = pre.shape
    Hs = np.empty((T, B, hdim))
    h = np.zeros((B, hdim))
    UT = U.T
    for t in range(T):
        h = np.tanh(pre[t] + h @ UT)
        Hs[t] = h
    if not np.all(np.isfinite(Hs)):
        raise NumericError("non-finite activation in rnn cell")
    return Hs.transpose(1, 0, 2), (X, Hs)


def _rnn_backward(W, U, cache, dHs):
    X, Hs = cache
    dHs = dHs.transpose(1, 0, 2)
    T, B, hdim = Hs.shape
    dpre = np.empty_like(Hs)
    dh_next = np.zeros((B, hdim))
    for t in range(T - 1, -1, -1):
        da = (dHs[t] + dh_next) * (1.0 - Hs[t] ** 2)
        dpre[t] = da
        dh_next = da @ U
    return _input_grads(dpre, X, W, _shifted(Hs))


def _lstm_forward(W, U, b, X):
    pre = _project(X, W, b)
    T, B, G = pre.shape
    hd = G // 4
    gates = np.empty((T, B, G))
    cs = np.empty((T, B, hd))
    tcs = np.empty((T, B, hd))
    Hs = np.empty((T, B, hd))
    h = np.zeros((B, hd))
    c = np.zeros((B, hd))
    UT = U.T
    for t in range(T):
        g = gates[t]
        np.add(pre[t], h @ UT, out=g)
        cand = np.tanh(g[:, 2 * hd:3 * hd])
        expit(g, out=g)
        g[:, 2 * hd:3 * hd] = cand
        c = g[:, hd:2 * hd] * c + g[:, :hd] * g[:, 2 * hd:3 * hd]
        tc = np.tanh(c)
        h = g[:, 3 * hd:] * tc
        cs[t] = c
        tcs[t] = tc
        Hs[t] = h
    if not np.all(np.isfinite(gates)):
        bad = [GATES[k] for k in range(4) if not np.all(np.isfinite(gates[..., k * hd:(k + 1) * hd]))]
        raise NumericError(f"non-finite activation in {bad[0]} gate")
    if not np.all(np.isfinite(Hs)):
        raise NumericError("non-finite LSTM hidden state")
    return Hs.transpose(1, 0, 2), (X, gates, cs, tcs, Hs)


def _lstm_backward(W, U, cache, dHs):
    X, gates, cs, tcs, Hs = cache
    dHs = dHs.transpose(1, 0, 2)
    T, B, G = gates.shape
    hd = G // 4
    dpre = np.empty_like(gates)
    dh_next = np.zeros((B, hd))
    dc_next = np.zeros((B, hd))
    zeros = np.zeros((B, hd))
    for t in range(T - 1, -1, -1):
        g = gates[t]
        i, f, gg, o = g[:, :hd], g[:, hd:2 * hd], g[:, 2 * hd:3 * hd], g[:, 3 * hd:]
        c_prev = cs[t - 1] if t > 0 else zeros
        dh = dHs[t] + dh_next
        tc = tcs[t]
        dc = dh * o * (1.0 - tc * tc) + dc_next
        da = dpre[t]
        da[:, :hd] = dc * gg * i * (1.0 - i)
        da[:, hd:2 * hd] = dc * c_prev * f * (1.0 - f)
        da[:, 2 * hd:3 * hd] = dc * i * (1.0 - gg * gg)
        da[:, 3 * hd:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = da @ U
    return _input_grads(dpre, X, W, _shifted(Hs))


_CELLS = {"rnn": (_rnn_forward, _rnn_backward), "lstm": (_lstm_forward, _lstm_backward)}


def dropout_apply(tensor, rate: float, mode: str, rng=None):
    """Inverted dropout. Returns ``(output, mask)``; mask is None when inactive."""
    if not 0 <= rate < 1:
        raise ConfigurationError("dropout rate must be in [0, 1)")
    if mode not in MODES:
        raise ConfigurationError(f"unknown mode {mode!r}")
    tensor = np.asarray(tensor, dtype=float)
    if mode == "eval" or rate == 0:
        return tensor, None
    if rng is None:
        raise UsageError("dropout in train/mc mode needs an rng")
    mask = (rng.random(tensor.shape) >= rate) / (1.0 - rate)
    return tensor * mask, mask


# ------------------------------------------------------------------- network
class RecurrentForecaster:
    """Stacked (Bi)RNN/LSTM encoder with a MIMO output head.

    ``forward`` maps inputs of shape (B, L, D) to forecasts (B, H, K) and
    records what ``backward`` needs.
    """

    def __init__(self, config: NetworkConfig):
        self.config = config
        self.params = NetworkParameters()
        self._record = None
        self._init_params()

    # -- construction
    def _init(self, name, shape, fan_in, bias_fill=None):
        rng = np.random.default_rng([self.config.seed, zlib.crc32(name.encode())])
        bound = 1.0 / np.sqrt(fan_in)
        value = rng.uniform(-bound, bound, size=shape)
        if bias_fill is not None:
            value[bias_fill[0]] = bias_fill[1]
        self.params.add(name, value)

    def _init_params(self):
        cfg = self.config
        hd, G = cfg.hidden_dim, cfg.gate_count
        for layer in range(cfg.n_layers):
            in_dim = cfg.input_dim if layer == 0 else cfg.rnn_width
            # the backward direction is allocated even when unused so that
            # uni- and bidirectional models share forward weights for a seed
            for direction in ("fwd", "bwd"):
                base = f"rnn.{layer}.{direction}"
                self._init(f"{base}.W", (G * hd, in_dim), in_dim)
                self._init(f"{base}.U", (G * hd, hd), hd)
                fill = (slice(hd, 2 * hd), 1.0) if cfg.cell == "lstm" else None
                self._init(f"{base}.b", (G * hd,), in_dim, fill)
        summary = 2 * cfg.rnn_width
        out = cfg.horizon * cfg.n_targets
        if cfg.residual_head:
            flat_x = cfg.window_len * cfg.input_dim
            ld = cfg.linear_dim
            self._init("head.proj.W", (ld, flat_x), flat_x)
            self._init("head.proj.b", (ld,), flat_x)
            in_dim = summary + ld
            for k in range(cfg.n_linear):
                self._init(f"head.block{k}.W", (ld, in_dim), in_dim)
                self._init(f"head.block{k}.b", (ld,), in_dim)
                in_dim = ld
            self._init("head.out.W", (out, ld), ld)
            self._init("head.out.b", (out,), ld)
        else:
            self._init("head.out.W", (out, summary), summary)
            self._init("head.out.b", (out,), summary)

    def value(self, name):
        return self.params[name].value

    def cell_params(self, layer: int, direction: str = "fwd") -> LSTMCellParams:
        base = f"rnn.{layer}.{direction}"
        return LSTMCellParams(self.value(f"{base}.W"), self.value(f"{base}.U"), self.value(f"{base}.b"))

    # -- forward pieces
    def encode(self, X, mode="eval", rng=None, record=None):
        """Run the recurrent stack; returns the top hidden sequence (B, L, width)."""
        cfg = self.config
        cell_fwd = _CELLS[cfg.cell][0]
        layer_in = X
        for layer in range(cfg.n_layers):
            f = f"rnn.{layer}.fwd"
            Hf, cf = cell_fwd(self.value(f + ".W"), self.value(f + ".U"), self.value(f + ".b"), layer_in)
            cb = None
            if cfg.bidirectional:
                b = f"rnn.{layer}.bwd"
                Hb, cb = cell_fwd(self.value(b + ".W"), self.value(b + ".U"), self.value(b + ".b"),
                                  layer_in[:, ::-1])
                Hs = np.concatenate([Hf, Hb[:, ::-1]], axis=-1)
            else:
                Hs = Hf
            Hs, mask = dropout_apply(Hs, cfg.dropout_rate, mode, rng)
            if record is not None:
                record["layers"].append((cf, cb, mask))
            layer_in = Hs
        return layer_in

    def head(self, Hs, X, mode="eval", rng=None, record=None):
        cfg = self.config
        B = X.shape[0]
        summary = np.concatenate([Hs[:, -1], Hs.mean(axis=1)], axis=-1)
        if not cfg.residual_head:
            out_in = summary
            if record is not None:
                record["head"] = {"summary": summary}
        else:
            xflat = X.reshape(B, -1)
            proj = xflat @ self.value("head.proj.W").T + self.value("head.proj.b")
            v = np.concatenate([summary, proj], axis=-1)
            blocks = []
            for k in range(cfg.n_linear):
                inp = v
                act = np.tanh(inp @ self.value(f"head.block{k}.W").T + self.value(f"head.block{k}.b"))
                v, mask = dropout_apply(act, cfg.dropout_rate, mode, rng)
                blocks.append((inp, act, mask))
            out_in = v + proj if cfg.skip else v
            if record is not None:
                record["head"] = {"summary": summary, "xflat": xflat, "blocks": blocks}
        if record is not None:
            record["out_in"] = out_in
        y = out_in @ self.value("head.out.W").T + self.value("head.out.b")
        return y.reshape(B, cfg.horizon, cfg.n_targets)

    def forward(self, X, mode="eval", rng=None):
        X = np.asarray(X, dtype=float)
        cfg = self.config
        if X.ndim != 3 or X.shape[1:] != (cfg.window_len, cfg.input_dim):
            raise ShapeError(
                f"expected input (B, {cfg.window_len}, {cfg.input_dim}), got {X.shape}"
            )
        if mode not in MODES:
            raise ConfigurationError(f"unknown mode {mode!r}")
        record = {"layers": [], "X": X}
        Hs = self.encode(X, mode, rng, record)
        record["Hs"] = Hs
        y = self.head(Hs, X, mode, rng, record)
        if not np.all(np.isfinite(y)):
            raise NumericError("non-finite forecast")
        self._record = record
        return y

    __call__ = forward

    # -- reverse pass
    def backward(self, dY):
        """Populate every gradient slot from d loss / d forecast (B, H, K)."""
        rec = self._record
        if rec is None:
            raise UsageError("backward called without a recorded forward pass")
        cfg = self.config
        P = self.params
        P.zero_grad()
        X = rec["X"]
        B, T, _ = X.shape
        dy = np.asarray(dY, dtype=float).reshape(B, -1)
        P["head.out.W"].grad[...] = dy.T @ rec["out_in"]
        P["head.out.b"].grad[...] = dy.sum(axis=0)
        d_out_in = dy @ self.value("head.out.W")

        W2 = cfg.rnn_width
        if cfg.residual_head:
            head = rec["head"]
            d_proj = d_out_in.copy() if cfg.skip else np.zeros_like(d_out_in)
            dv = d_out_in
            for k in range(cfg.n_linear - 1, -1, -1):
                inp, act, mask = head["blocks"][k]
                if mask is not None:
                    dv = dv * mask
                da = dv * (1.0 - act * act)
                P[f"head.block{k}.W"].grad[...] = da.T @ inp
                P[f"head.block{k}.b"].grad[...] = da.sum(axis=0)
                dv = da @ self.value(f"head.block{k}.W")
            d_summary = dv[:, :2 * W2]
            d_proj += dv[:, 2 * W2:]
            P["head.proj.W"].grad[...] = d_proj.T @ head["xflat"]
            P["head.proj.b"].grad[...] = d_proj.sum(axis=0)
        else:
            d_summary = d_out_in

        dHs = np.repeat((d_summary[:, W2:] / T)[:, None, :], T, axis=1)
        dHs[:, -1] += d_summary[:, :W2]
        cell_bwd = _CELLS[cfg.cell][1]
        hd = cfg.hidden_dim
        for layer in range(cfg.n_layers - 1, -1, -1):
            cf, cb, mask = rec["layers"][layer]
            if mask is not None:
                dHs = dHs * mask
            f = f"rnn.{layer}.fwd"
            dX_f, dW, dU, db = cell_bwd(self.value(f + ".W"), self.value(f + ".U"), cf, dHs[..., :hd])
            P[f + ".W"].grad[...] = dW
            P[f + ".U"].grad[...] = dU
            P[f + ".b"].grad[...] = db
            d_in = dX_f
            if cfg.bidirectional:
                b = f"rnn.{layer}.bwd"
                dX_b, dW, dU, db = cell_bwd(self.value(b + ".W"), self.value(b + ".U"), cb,
                                            dHs[:, ::-1, hd:])
                P[b + ".W"].grad[...] = dW
                P[b + ".U"].grad[...] = dU
                P[b + ".b"].grad[...] = db
                d_in = d_in + dX_b[:, ::-1]
            dHs = d_in
        return dHs


def bilstm_forward(layers, sequence, mode="eval", dropout_rate=0.0, rng=None):
    """Stacked bidirectional LSTM over one sequence (L x D).

    ``layers`` is a list of ``(forward LSTMCellParams, backward LSTMCellParams
    or None)``; a None backward cell makes that layer unidirectional.
    """
    seq = np.asarray(sequence, dtype=float)
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise ShapeError("sequence must be a non-empty L x D matrix")
    x = seq[None]
    for fwd, bwd in layers:
        if fwd.W.shape[1] != x.shape[-1]:
            raise ShapeError(f"layer expects width {fwd.W.shape[1]}, got {x.shape[-1]}")
        Hf, _ = _lstm_forward(fwd.W, fwd.U, fwd.b, x)
        if bwd is not None:
            Hb, _ = _lstm_forward(bwd.W, bwd.U, bwd.b, x[:, ::-1])
            Hf = np.concatenate([Hf, Hb[:, ::-1]], axis=-1)
        x, _ = dropout_apply(Hf, dropout_rate, mode, rng)
    return x[0]


def residual_head_forward(model: RecurrentForecaster, hidden_sequence, window):
    """Head of ``model`` applied to one hidden sequence and its raw input window."""
    Hs = np.asarray(hidden_sequence, dtype=float)[None]
    X = np.asarray(window, dtype=float)[None]
    return model.head(Hs, X)[0]


def clip_grad_norm(params: NetworkParameters, max_norm: float) -> float:
    norm = params.grad_norm()
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        for _, p in params.items():
            p.grad *= scale
    return norm


@numba.njit(cache=True)
def _adam_kernel(value, grad, m, v, lr, beta1, beta2, eps, wd, bc1, bc2):
    for n in range(value.size):
        g = grad[n] + wd * value[n]
        mn = beta1 * m[n] + (1.0 - beta1) * g
        vn = beta2 * v[n] + (1.0 - beta2) * (g * g)
        m[n] = mn
        v[n] = vn
        value[n] -= lr * (mn / bc1) / (np.sqrt(vn / bc2) + eps)


def adam_step(params: NetworkParameters, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8,
              weight_decay=1e-4):
    """One Adam update with L2 decay folded into the gradient."""
    for name, p in params.items():
        if not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient for parameter {name}")
    params.t += 1
    t = params.t
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for _, p in params.items():
        # reshape(-1) of these contiguous arrays is a view, so updates land in place
        _adam_kernel(p.value.reshape(-1), p.grad.reshape(-1), p.m.reshape(-1), p.v.reshape(-1),
                     float(lr), float(beta1), float(beta2), float(eps), float(weight_decay), bc1, bc2)
