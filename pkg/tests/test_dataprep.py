import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from efem.dataprep import (
    NormStats,
    WindowConfig,
    inverse_standardize,
    make_windows,
    select_features,
    spearman,
    split_campaign,
    write_selection_report,
    zscore_fit_apply,
)
from efem.errors import (
    DataError,
    SelectionError,
    ShapeError,
    SplitError,
    UndefinedCorrelationError,
    WindowError,
)
from efem.scenario import ScenarioConfig, ScenarioSeries, generate_campaign


def test_zscore_reference_values():
    z, stats = zscore_fit_apply(np.array([2.0, 4.0, 6.0]))
    assert stats.mu[0] == 4.0
    assert stats.sigma[0] == pytest.approx(np.sqrt(8 / 3), abs=1e-12)
    assert np.allclose(z[:, 0], [-1.224744871391589, 0.0, 1.224744871391589], atol=1e-12)


def test_zscore_constant_channel_flagged():
    z, stats = zscore_fit_apply(np.array([[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]]))
    assert stats.flagged.tolist() == [True, False]
    assert stats.sigma[0] == 1.0
    assert np.all(z[:, 0] == 0.0)


def test_zscore_reuses_train_stats_verbatim():
    train = np.array([[1.0], [2.0], [3.0], [6.0]])
    _, stats = zscore_fit_apply(train)
    test = np.array([[10.0], [0.0]])
    z, same = zscore_fit_apply(test, stats)
    assert same is stats
    assert np.array_equal(z, (test - stats.mu) / stats.sigma)


def test_zscore_non_finite_located():
    x = np.ones((4, 3))
    x[2, 1] = np.nan
    with pytest.raises(DataError, match="row 2, channel 1"):
        zscore_fit_apply(x)


def test_zscore_channel_mismatch():
    _, stats = zscore_fit_apply(np.ones((3, 2)) * [[1, 2]] + np.arange(3)[:, None])
    with pytest.raises(ShapeError):
        zscore_fit_apply(np.ones((3, 3)), stats)


@given(arrays(np.float64, st.tuples(st.integers(3, 30), st.integers(1, 4)),
              elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_zscore_moments_and_round_trip(x):
    z, stats = zscore_fit_apply(x)
    ok = ~stats.flagged
    # channels with almost no spread lose relative precision; skip those
    ok &= stats.sigma > 1e-6 * (np.abs(stats.mu) + 1)
    assert np.all(np.abs(z[:, ok].mean(axis=0)) < 1e-9)
    assert np.all(np.abs(z[:, ok].std(axis=0) - 1) < 1e-9)
    back = inverse_standardize(z, stats)
    assert np.allclose(back, x, rtol=1e-9, atol=1e-9 * np.abs(x).max())


def test_inverse_standardize_examples():
    stats = NormStats([155.3], [2.1])
    assert inverse_standardize(np.array([[0.0]]), stats)[0, 0] == 155.3
    assert inverse_standardize(np.array([[1.0]]), stats)[0, 0] == pytest.approx(157.4, abs=1e-12)
    with pytest.raises(ShapeError):
        inverse_standardize(np.zeros((2, 3)), stats)


def test_spearman_examples():
    assert spearman([1, 2, 3], [10, 20, 30]) == pytest.approx(1.0)
    assert spearman([1, 2, 3], [9, 4, 1]) == pytest.approx(-1.0)
    assert spearman([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-12)
    with pytest.raises(UndefinedCorrelationError):
        spearman([1, 1, 1], [1, 2, 3])
    with pytest.raises(ShapeError):
        spearman([1, 2], [1, 2])


def _rank_oracle(x, y):
    # textbook formula, valid without ties
    n = len(x)
    rx = np.argsort(np.argsort(x))
    ry = np.argsort(np.argsort(y))
    d = rx - ry
    return 1 - 6 * np.sum(d * d) / (n * (n * n - 1))


@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=3, max_size=25, unique=True),
       st.randoms(use_true_random=False))
def test_spearman_matches_rank_formula_and_symmetry(xs, rnd):
    ys = list(xs)
    rnd.shuffle(ys)
    x, y = np.array(xs), np.array(ys)
    assert spearman(x, y) == pytest.approx(_rank_oracle(x, y), abs=1e-12)
    assert spearman(x, y) == pytest.approx(spearman(y, x), abs=1e-15)
    assert spearman(x, x**3 + 2 * x) == pytest.approx(1.0)


def test_spearman_ties_average_rank():
    # ranks x: 1, 2.5, 2.5, 4; y: 1, 2, 3, 4
    rx = np.array([1, 2.5, 2.5, 4]) - 2.5
    ry = np.array([1, 2, 3, 4]) - 2.5
    expected = rx @ ry / np.sqrt((rx @ rx) * (ry @ ry))
    assert spearman([1, 2, 2, 3], [1, 2, 3, 4]) == pytest.approx(expected, abs=1e-15)


def _toy_campaign(n=3, steps=300, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        t = np.arange(steps, dtype=float)
        target = np.tanh((t - 50) / 30.0) * (k + 1)
        copy = 3.0 * target + 7.0
        noise = rng.normal(size=steps)
        vals = np.column_stack([target, copy, noise])
        out.append(ScenarioSeries(t * 10, vals, ["target", "copy", "noise"], [0], 0.01 * (k + 1), k))
    return out


def test_select_features_copy_in_noise_out():
    camp = _toy_campaign()
    assert select_features(camp, [0]) == [0, 1]


def test_select_features_generator_rejects_noise_channels():
    camp = generate_campaign(ScenarioConfig(seed=5))
    chosen = select_features(camp, list(range(24)))
    names = camp[0].channel_names
    noise = [i for i, n in enumerate(names) if n.endswith("Noise")]
    assert noise and not set(noise) & set(chosen)
    assert set(range(24)) <= set(chosen)
    assert chosen == sorted(chosen)


def test_select_features_monotone_rescaling_invariant():
    camp = _toy_campaign(seed=3)
    base = select_features(camp, [0], 0.05)
    warped = [
        ScenarioSeries(s.time_s, np.column_stack([s.values[:, 0], np.exp(s.values[:, 1] / 10),
                                                  -5 * s.values[:, 2]]),
                       s.channel_names, s.target_indices, s.break_size, s.seed)
        for s in camp
    ]
    assert select_features(warped, [0], 0.05) == base


def test_select_features_none_pass():
    camp = _toy_campaign()
    with pytest.raises(SelectionError, match="threshold"):
        select_features(camp, [0], threshold=1.01)
    with pytest.raises(SelectionError):
        select_features([], [0])


def test_selection_report(tmp_path):
    p = write_selection_report(tmp_path / "sel.csv", ["a", "b"], [0.9, 0.1], [0])
    assert p.read_text().splitlines() == ["channel,max_abs_rho,selected", "a,0.900000,1", "b,0.100000,0"]


def test_norm_stats_csv_round_trip(tmp_path):
    stats = NormStats([1.5, -2.0], [0.25, 3.0], channel_names=["x", "y"])
    back = NormStats.from_csv(stats.to_csv(tmp_path / "stats.csv"))
    assert np.array_equal(back.mu, stats.mu) and np.array_equal(back.sigma, stats.sigma)
    assert (tmp_path / "stats.csv").read_text().splitlines()[0] == "channel,mu,sigma"


@pytest.mark.parametrize("steps,expected", [(200, 33), (1000, 833)])
def test_window_counts(steps, expected):
    mat = np.arange(steps * 2, dtype=float).reshape(steps, 2)
    stats = NormStats([0, 0], [1, 1])
    ds = make_windows([mat], WindowConfig(40, 128), [0, 1], [1], stats)
    assert len(ds) == expected
    assert ds.inputs.shape == (expected, 40, 2) and ds.targets.shape == (expected, 128, 1)


def test_window_defaults():
    assert WindowConfig() == WindowConfig(40, 128, 1)


@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 4), st.integers(0, 10))
def test_windows_reconstruct_contiguous_rows(L, H, stride, extra):
    steps = L + H + extra
    mats = [np.arange(steps * 3, dtype=float).reshape(steps, 3) + 1000 * s for s in range(2)]
    ds = make_windows(mats, WindowConfig(L, H, stride), [0, 1, 2], [0, 1, 2], NormStats([0] * 3, [1] * 3))
    assert len(ds) == 2 * len(range(0, extra + 1, stride))
    for n, (s, start) in enumerate(ds.origins):
        rows = np.concatenate([ds.inputs[n], ds.targets[n]])
        assert np.array_equal(rows, mats[s][start:start + L + H])


def test_window_too_short_names_scenario():
    stats = NormStats([0], [1])
    with pytest.raises(WindowError, match="scenario 1"):
        make_windows([np.zeros((200, 1)), np.zeros((100, 1))], WindowConfig(), [0], [0], stats)
    with pytest.raises(WindowError):
        WindowConfig(0, 5)


def test_split_sizes_and_determinism():
    items = list(range(20))
    tr, va, te = split_campaign(items, seed=4)
    assert (len(tr), len(va), len(te)) == (16, 2, 2)
    assert sorted(tr + va + te) == items
    assert split_campaign(items, seed=4) == (tr, va, te)
    assert tuple(map(len, split_campaign(list(range(10))))) == (8, 1, 1)
    with pytest.raises(SplitError):
        split_campaign(list(range(9)))
