import numpy as np
import pytest

from efem.checkpoint import load_checkpoint, save_checkpoint
from efem.errors import ConfigurationError, NumericError, ShapeError, UsageError
from efem.network import (
    CellState,
    LSTMCellParams,
    NetworkConfig,
    NetworkParameters,
    RecurrentForecaster,
    adam_step,
    bilstm_forward,
    clip_grad_norm,
    dropout_apply,
    lstm_cell_forward,
    residual_head_forward,
)
from oracles import central_diff, rel_err

ARCHS = [
    ("rnn", False, False),
    ("lstm", False, False),
    ("lstm", True, False),
    ("rnn", False, True),
    ("lstm", False, True),
    ("lstm", True, True),
]


def small_config(cell="lstm", bidirectional=True, residual=True, **kw):
    base = dict(input_dim=3, n_targets=1, hidden_dim=4, n_layers=2, cell=cell,
                bidirectional=bidirectional, residual_head=residual, linear_dim=6, n_linear=2,
                window_len=5, horizon=2, dropout_rate=0.0, seed=3)
    base.update(kw)
    return NetworkConfig(**base)


def zero_cell(hidden=3, inp=2):
    return LSTMCellParams(np.zeros((4 * hidden, inp)), np.zeros((4 * hidden, hidden)), np.zeros(4 * hidden))


def test_cell_zero_fixed_point():
    out = lstm_cell_forward(zero_cell(), np.ones(2), CellState(np.zeros(3), np.zeros(3)))
    assert np.all(out.h == 0) and np.all(out.c == 0)


def test_cell_hand_evaluation():
    out = lstm_cell_forward(zero_cell(), np.ones(2), CellState(np.zeros(3), np.full(3, 2.0)))
    assert np.allclose(out.c, 1.0)
    assert np.allclose(out.h, 0.5 * np.tanh(1.0))
    assert out.h[0] == pytest.approx(0.38079, abs=1e-5)


def test_cell_ignores_input_when_input_weights_zero(rng):
    p = LSTMCellParams(np.zeros((12, 2)), rng.normal(size=(12, 3)), rng.normal(size=12))
    prev = CellState(rng.normal(size=3), rng.normal(size=3))
    a = lstm_cell_forward(p, np.array([1.0, -4.0]), prev)
    b = lstm_cell_forward(p, np.array([9.0, 2.0]), prev)
    assert np.array_equal(a.h, b.h) and np.array_equal(a.c, b.c)


def test_cell_gate_slices_and_errors(rng):
    p = LSTMCellParams(rng.normal(size=(8, 2)), rng.normal(size=(8, 2)), np.arange(8.0))
    W, U, b = p.gate("forget")
    assert np.array_equal(b, [2.0, 3.0])
    with pytest.raises(ShapeError):
        lstm_cell_forward(p, np.ones(3), CellState(np.zeros(2), np.zeros(2)))
    p.b[0] = np.nan
    with pytest.raises(NumericError, match="input gate"):
        lstm_cell_forward(p, np.ones(2), CellState(np.zeros(2), np.zeros(2)))


def test_cell_matches_batched_layer(rng):
    net = RecurrentForecaster(small_config(bidirectional=False, n_layers=1))
    seq = rng.normal(size=(5, 3))
    cell = net.cell_params(0)
    state = CellState(np.zeros(4), np.zeros(4))
    hs = []
    for x in seq:
        state = lstm_cell_forward(cell, x, state)
        hs.append(state.h)
    assert np.allclose(bilstm_forward([(cell, None)], seq), np.array(hs), atol=1e-14)


def test_bilstm_width_and_reversal(rng):
    net = RecurrentForecaster(small_config(hidden_dim=128, n_layers=1, input_dim=2, window_len=6))
    layers = [(net.cell_params(0, "fwd"), net.cell_params(0, "bwd"))]
    seq = rng.normal(size=(6, 2))
    out = bilstm_forward(layers, seq)
    assert out.shape == (6, 256)
    # swapping direction weights and reversing time mirrors the output halves
    swapped = [(layers[0][1], layers[0][0])]
    rev = bilstm_forward(swapped, seq[::-1])
    assert np.allclose(rev[::-1, :128], out[:, 128:], atol=1e-14)
    assert np.allclose(rev[::-1, 128:], out[:, :128], atol=1e-14)


def test_unidirectional_equals_forward_half(rng):
    X = rng.normal(size=(2, 5, 3))
    bi = RecurrentForecaster(small_config(n_layers=1))
    uni = RecurrentForecaster(small_config(n_layers=1, bidirectional=False))
    assert np.array_equal(bi.value("rnn.0.fwd.W"), uni.value("rnn.0.fwd.W"))
    hb = bi.encode(X)
    hu = uni.encode(X)
    assert hu.shape[-1] == 4 and hb.shape[-1] == 8
    assert np.array_equal(hu, hb[..., :4])


def test_bilstm_shape_error(rng):
    net = RecurrentForecaster(small_config(n_layers=1))
    with pytest.raises(ShapeError):
        bilstm_forward([(net.cell_params(0), None)], rng.normal(size=(5, 7)))
    with pytest.raises(ShapeError):
        bilstm_forward([(net.cell_params(0), None)], np.zeros((0, 3)))


def test_default_head_output_shape(rng):
    cfg = NetworkConfig(input_dim=5, n_targets=3, hidden_dim=8, linear_dim=16)
    net = RecurrentForecaster(cfg)
    y = net.forward(rng.normal(size=(2, 40, 5)))
    assert y.shape == (2, 128, 3)
    with pytest.raises(ShapeError):
        net.forward(rng.normal(size=(2, 39, 5)))


def test_head_zero_weights_gives_bias(rng):
    net = RecurrentForecaster(small_config(n_targets=2, horizon=3))
    for name, p in net.params.items():
        if name.startswith("head."):
            p.value[...] = 0.0
    bias = rng.normal(size=6)
    net.params["head.out.b"].value[...] = bias
    out = residual_head_forward(net, np.zeros((5, 8)), rng.normal(size=(5, 3)))
    assert np.array_equal(out, bias.reshape(3, 2))


def test_skip_difference_is_projection_term(rng):
    X = rng.normal(size=(3, 5, 3))
    on = RecurrentForecaster(small_config(skip=True))
    off = RecurrentForecaster(small_config(skip=False))
    proj = X.reshape(3, -1) @ on.value("head.proj.W").T + on.value("head.proj.b")
    term = (proj @ on.value("head.out.W").T).reshape(3, 2, 1)
    assert np.allclose(on.forward(X) - off.forward(X), term, atol=1e-12)


@pytest.mark.parametrize("cell,bi,res", ARCHS)
def test_gradients_match_finite_differences(cell, bi, res, rng):
    net = RecurrentForecaster(small_config(cell, bi, res))
    X = rng.normal(size=(2, 5, 3))
    T = rng.normal(size=(2, 2, 1))

    def loss():
        return 0.5 * float(((net.forward(X) - T) ** 2).sum())

    y = net.forward(X)
    net.backward(y - T)
    for name, p in net.params.items():
        analytic = p.grad.copy()

        def f(v, p=p):
            saved = p.value.copy()
            p.value[...] = v
            out = loss()
            p.value[...] = saved
            return out

        num = central_diff(f, p.value)
        if not bi and ".bwd." in name:
            assert np.all(analytic == 0) and np.all(num == 0)
        else:
            assert rel_err(analytic, num) < 1e-4, name


def test_gradient_with_dropout_masks_frozen(rng):
    net = RecurrentForecaster(small_config(dropout_rate=0.5))
    X = rng.normal(size=(1, 5, 3))
    T = rng.normal(size=(1, 2, 1))

    def loss(v, p):
        saved = p.value.copy()
        p.value[...] = v
        y = net.forward(X, "train", np.random.default_rng(5))
        p.value[...] = saved
        return 0.5 * float(((y - T) ** 2).sum())

    y = net.forward(X, "train", np.random.default_rng(5))
    net.backward(y - T)
    p = net.params["head.block0.W"]
    g = p.grad.copy()
    assert rel_err(g, central_diff(lambda v: loss(v, p), p.value)) < 1e-4
    # units dropped after block 0 receive no gradient through their row of block0.W
    mask = net._record["head"]["blocks"][0][2]
    dead = np.all(mask == 0, axis=0)
    assert dead.any()
    assert np.all(g[dead] == 0)


def test_backward_requires_forward():
    net = RecurrentForecaster(small_config())
    with pytest.raises(UsageError):
        net.backward(np.zeros((1, 2, 1)))


def test_gradients_reset_between_steps(rng):
    net = RecurrentForecaster(small_config())
    X = rng.normal(size=(2, 5, 3))
    g = np.ones((2, 2, 1))
    net.forward(X)
    net.backward(g)
    first = {n: p.grad.copy() for n, p in net.params.items()}
    net.forward(X)
    net.backward(g)
    assert all(np.array_equal(first[n], p.grad) for n, p in net.params.items())


def test_eval_forward_is_pure(rng):
    net = RecurrentForecaster(small_config(dropout_rate=0.5))
    X = rng.normal(size=(2, 5, 3))
    assert np.array_equal(net.forward(X, "eval"), net.forward(X, "eval"))


def test_dropout_modes(rng):
    x = np.ones((4, 5))
    for mode in ("train", "eval", "mc"):
        assert np.array_equal(dropout_apply(x, 0.0, mode, rng)[0], x)
    assert np.array_equal(dropout_apply(x, 0.2, "eval")[0], x)
    out, mask = dropout_apply(np.ones(10_000), 0.2, "train", rng)
    assert abs(out.mean() - 1.0) < 0.02
    assert set(np.unique(out)) <= {0.0, 1.25}
    with pytest.raises(ConfigurationError):
        dropout_apply(x, 1.0, "train", rng)
    with pytest.raises(ConfigurationError):
        dropout_apply(x, 0.1, "sometimes", rng)
    with pytest.raises(UsageError):
        dropout_apply(x, 0.1, "mc")


def test_config_validation():
    with pytest.raises(ConfigurationError):
        small_config(hidden_dim=0)
    with pytest.raises(ConfigurationError):
        small_config(dropout_rate=1.0)
    with pytest.raises(ConfigurationError):
        small_config(cell="gru")


def test_lstm_forget_bias_and_init_bounds():
    net = RecurrentForecaster(small_config())
    b = net.value("rnn.0.fwd.b")
    assert np.all(b[4:8] == 1.0)
    W = net.value("rnn.0.fwd.W")
    assert np.all(np.abs(W) <= 1 / np.sqrt(3))


def test_adam_first_step_closed_form():
    params = NetworkParameters()
    p = params.add("w", np.zeros(3))
    p.grad[...] = 1.0
    adam_step(params, weight_decay=0.0)
    assert np.allclose(p.value, -0.001 * 1 / (1 + 1e-8))
    assert params.t == 1


def test_adam_zero_gradient_no_change():
    params = NetworkParameters()
    p = params.add("w", np.zeros(4))
    adam_step(params)
    assert np.all(p.value == 0)


def test_adam_weight_decay_folded_in():
    params = NetworkParameters()
    p = params.add("w", np.full(2, 3.0))
    adam_step(params, lr=0.1, weight_decay=0.5)
    # g = 0 + 0.5 * 3 > 0, so the first step moves by -lr
    assert np.allclose(p.value, 3.0 - 0.1, atol=1e-7)


def test_adam_non_finite_gradient_named():
    params = NetworkParameters()
    params.add("head.out.W", np.zeros(2)).grad[0] = np.inf
    with pytest.raises(NumericError, match="head.out.W"):
        adam_step(params)


def test_training_steps_deterministic(rng):
    X = rng.normal(size=(3, 5, 3))
    T = rng.normal(size=(3, 2, 1))
    nets = [RecurrentForecaster(small_config(dropout_rate=0.2)) for _ in range(2)]
    for net in nets:
        r = np.random.default_rng(9)
        for _ in range(5):
            y = net.forward(X, "train", r)
            net.backward(y - T)
            clip_grad_norm(net.params, 5.0)
            adam_step(net.params)
    for name in nets[0].params:
        assert np.array_equal(nets[0].value(name), nets[1].value(name))


def test_clip_grad_norm():
    params = NetworkParameters()
    params.add("a", np.zeros(2)).grad[...] = [3.0, 4.0]
    assert clip_grad_norm(params, 1.0) == 5.0
    assert np.allclose(params["a"].grad, [0.6, 0.8])


def test_checkpoint_round_trip(tmp_path, rng):
    net = RecurrentForecaster(small_config(dropout_rate=0.1))
    X = rng.normal(size=(2, 5, 3))
    y = net.forward(X)
    net.backward(np.ones_like(y))
    adam_step(net.params)
    train_rng = np.random.default_rng(4)
    train_rng.random(3)
    path = save_checkpoint(tmp_path / "m.npz", net, train_rng, {"note": "x"})
    back, back_rng, extra = load_checkpoint(path)
    assert extra == {"note": "x"} and back.params.t == 1
    assert back.config == net.config
    for name, p in net.params.items():
        assert np.array_equal(back.params[name].value, p.value)
        assert np.array_equal(back.params[name].m, p.m)
        assert np.array_equal(back.params[name].v, p.v)
    assert back_rng.random() == train_rng.random()
    assert np.array_equal(back.forward(X), net.forward(X))


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "other.npz"
    np.savez(path, meta=np.array('{"format": "other"}'))
    with pytest.raises(ConfigurationError):
        load_checkpoint(path)
