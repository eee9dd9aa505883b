import numpy as np
import pytest
from hypothesis import given, strategies as st

from vmdnet import synthetic
from vmdnet.errors import (ConfigError, DegenerateSplit, NonFiniteNormalization,
                           SeriesTooShort, SignalTooShort, WindowDecompositionError)
from vmdnet.signal import Signal
from vmdnet.vmd import VmdConfig, decompose
from vmdnet.windowing import (CacheError, WindowSpec, calendar_features, decompose_windows,
                              decompose_windows_cached, make_windows, read_cache,
                              split_and_normalize, window_count, write_cache)


def naive_windows(x, P, F, s):
    """Oracle: enumerate endpoints directly from the 1-based definition."""
    out = []
    t = P
    while t + F <= len(x):
        out.append((t, x[t - P:t], x[t:t + F]))
        t += s
    return out


def test_small_example():
    ds = make_windows(np.arange(10.0), WindowSpec(4, 2, 1))
    assert len(ds) == 5
    assert ds.endpoints.tolist() == [4, 5, 6, 7, 8]
    np.testing.assert_array_equal(ds.X[0], [0, 1, 2, 3])
    np.testing.assert_array_equal(ds.Y[0], [4, 5])


def test_exact_fit_gives_one_window():
    x = np.arange(12.0)
    ds = make_windows(x, WindowSpec(8, 4, 3))
    assert len(ds) == 1
    np.testing.assert_array_equal(np.concatenate([ds.X[0], ds.Y[0]]), x)


def test_full_scale_count():
    assert window_count(30216, WindowSpec(336, 96, 1)) == 29785


def test_too_short():
    with pytest.raises(SeriesTooShort):
        make_windows(np.arange(9.0), WindowSpec(8, 2))


def test_short_windows_cannot_be_decomposed():
    ds = make_windows(np.arange(10.0), WindowSpec(4, 2, 1))
    with pytest.raises(WindowDecompositionError) as info:
        decompose_windows(ds, VmdConfig(num_modes=1))
    assert isinstance(info.value.cause, SignalTooShort)


@pytest.mark.parametrize("kwargs", [{"lookback": 0, "horizon": 1}, {"lookback": 8, "horizon": 0},
                                    {"lookback": 8, "horizon": 1, "stride": 0}])
def test_spec_validation(kwargs):
    with pytest.raises(ConfigError):
        WindowSpec(**kwargs)


@given(T=st.integers(8, 80), P=st.integers(8, 20), F=st.integers(1, 10), s=st.integers(1, 7))
def test_windows_match_naive_enumeration(T, P, F, s):
    x = np.arange(T, dtype=float) * 1.5
    spec = WindowSpec(P, F, s)
    expected = naive_windows(x, P, F, s)
    assert window_count(T, spec) == len(expected)
    if not expected:
        return
    ds = make_windows(x, spec)
    assert len(ds) == len(expected) == (T - P - F) // s + 1
    for b, (t, xin, yout) in enumerate(expected):
        assert ds.endpoints[b] == t == P + b * s
        np.testing.assert_array_equal(ds.X[b], xin)
        np.testing.assert_array_equal(ds.Y[b], yout)


def test_calendar_features():
    ts = np.datetime64("2024-01-01T00") + np.arange(48) * np.timedelta64(1, "h")  # a Monday
    f = calendar_features(ts)
    assert f.shape == (48, 4)
    np.testing.assert_allclose(f[0], [0, 1, 0, 1], atol=1e-12)
    np.testing.assert_allclose(f[6, :2], [1, 0], atol=1e-12)  # 06:00
    np.testing.assert_allclose(f[24, 2:], [np.sin(2 * np.pi / 7), np.cos(2 * np.pi / 7)])


def test_single_window_equals_direct_decomposition(rng):
    x = rng.standard_normal(40).cumsum()
    ds = make_windows(x, WindowSpec(32, 8))
    cfg = VmdConfig(num_modes=3)
    dd = decompose_windows(ds, cfg)
    res = decompose(ds.X[0], cfg)
    assert dd.U.shape == (1, 3, 32)
    np.testing.assert_array_equal(dd.U[0], res.modes)
    np.testing.assert_array_equal(dd.Omega[0], res.center_frequencies)


def test_workers_do_not_change_results(rng):
    x = rng.standard_normal(700).cumsum()
    ds = make_windows(x, WindowSpec(32, 4, 1))
    assert len(ds) > 256  # more than one chunk
    cfg = VmdConfig(num_modes=2, max_iterations=50)
    one = decompose_windows(ds, cfg, workers=1)
    two = decompose_windows(ds, cfg, workers=2)
    np.testing.assert_array_equal(one.U, two.U)
    np.testing.assert_array_equal(one.Omega, two.Omega)


def test_future_perturbation_leaves_window_unchanged(rng):
    x = rng.standard_normal(200).cumsum()
    spec = WindowSpec(32, 8, 3)
    cfg = VmdConfig(num_modes=2, max_iterations=80)
    base = decompose_windows(make_windows(x, spec), cfg)
    for _ in range(10):
        b = int(rng.integers(len(base)))
        t_b = int(base.endpoints[b])
        y = x.copy()
        idx = rng.integers(t_b, len(x), size=5)  # 0-based index >= t_b is after the window
        y[idx] += rng.normal(scale=10.0, size=5)
        pert = decompose_windows(make_windows(y, spec), cfg)
        np.testing.assert_array_equal(pert.U[b], base.U[b])
        np.testing.assert_array_equal(pert.Omega[b], base.Omega[b])


def test_two_tone_windows_track_generators():
    x, _ = synthetic.tones((0.01, 0.12), (1.0, 0.5), 3000)
    dd = decompose_windows(make_windows(x, WindowSpec(512, 16, 64)), VmdConfig(num_modes=2, alpha=2000))
    ok = np.all(np.abs(dd.Omega - [0.01, 0.12]) <= 0.1 * np.array([0.01, 0.12]), axis=1)
    assert ok.mean() >= 0.9
    assert np.all(np.diff(dd.Omega, axis=1) >= 0)


def test_stacked_reconstruction():
    x, _ = synthetic.three_tone(3000)
    dd = decompose_windows(make_windows(x, WindowSpec(1024, 8, 256)),
                           VmdConfig(num_modes=3, alpha=2000, tau=0.1))
    ds = make_windows(x, WindowSpec(1024, 8, 256))
    err = np.linalg.norm(dd.X - ds.X, axis=1) / np.linalg.norm(ds.X, axis=1)
    assert err.mean() <= 0.02


def test_window_error_names_index():
    x = np.ones(20)
    ds = make_windows(x, WindowSpec(8, 2, 1))
    ds.X[3, 2] = np.nan
    with pytest.raises(WindowDecompositionError) as info:
        decompose_windows(ds, VmdConfig(num_modes=1))
    assert info.value.index == 3


def test_split_lengths_and_stats(rng):
    s = Signal(rng.normal(5.0, 2.0, size=1000))
    train, val, test, stats = split_and_normalize(s, (0.7, 0.1, 0.2))
    assert (train.length, val.length, test.length) == (700, 100, 200)
    assert stats.mean == pytest.approx(s.samples[:700].mean())
    assert stats.std == pytest.approx(s.samples[:700].std())
    np.testing.assert_allclose(train.samples.mean(), 0.0, atol=1e-12)
    np.testing.assert_allclose(val.samples, (s.samples[700:800] - stats.mean) / stats.std)
    assert val.samples.mean() != 0.0


def test_split_errors():
    with pytest.raises(NonFiniteNormalization):
        split_and_normalize(Signal(np.full(100, 2.0)))
    with pytest.raises(DegenerateSplit):
        split_and_normalize(Signal(np.arange(100.0)), min_length=30)
    with pytest.raises(ConfigError):
        split_and_normalize(Signal(np.arange(100.0)), (0.5, 0.5, 0.5))


def test_split_keeps_timestamps():
    s = synthetic.periodic_series(100)
    train, val, test, _ = split_and_normalize(s)
    assert val.start == s.start + 70 * s.step


def test_cache_roundtrip_and_corruption(tmp_path, rng):
    x = rng.standard_normal(100).cumsum()
    ds = make_windows(x, WindowSpec(16, 4, 2))
    dd = decompose_windows(ds, VmdConfig(num_modes=2))
    path = write_cache(tmp_path / "c.vmdc", dd)
    U, Omega, Y, alpha = read_cache(path)
    np.testing.assert_array_equal(U, dd.U)
    np.testing.assert_array_equal(Omega, dd.Omega)
    np.testing.assert_array_equal(Y, dd.Y)
    assert alpha == 2000.0
    raw = bytearray(path.read_bytes())
    raw[-3] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(CacheError):
        read_cache(path)
    path.write_bytes(b"nope")
    with pytest.raises(CacheError):
        read_cache(path)


def test_warm_cache_equals_cold(tmp_path, rng):
    x = rng.standard_normal(120).cumsum()
    ds = make_windows(x, WindowSpec(16, 4, 2))
    cfg = VmdConfig(num_modes=2)
    cold = decompose_windows_cached(ds, cfg, tmp_path)
    assert len(list(tmp_path.glob("*.vmdc"))) == 1
    warm = decompose_windows_cached(ds, cfg, tmp_path)
    np.testing.assert_array_equal(cold.U, warm.U)
    np.testing.assert_array_equal(cold.Omega, warm.Omega)
    other = decompose_windows_cached(ds, cfg.with_(alpha=500.0), tmp_path)
    assert len(list(tmp_path.glob("*.vmdc"))) == 2
    assert not np.array_equal(other.U, cold.U)
