import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specpipe.errors import EmptyResponseList, FrequencyOutOfRange, InputTooShort
from specpipe.superlet import (
    GEOMEAN_FLOOR,
    SuperletConfig,
    SuperletPlan,
    fractional_geomean,
    morlet_response,
    pool_power,
    scalogram,
    superlet_transform,
)


def direct_response(x, f, c, fs, k_sd=5.0):
    """Time-domain convolution with an analytically sampled Morlet wavelet."""
    sd = c / (k_sd * f)
    half = math.ceil(4 * sd * fs)
    t = np.arange(-half, half + 1) / fs
    psi = np.exp(-(t**2) / (2 * sd**2) + 2j * np.pi * f * t)
    psi /= np.linalg.norm(psi)
    return np.abs(np.convolve(x, psi, mode="same"))


def tone(f, fs, n, phase=0.0):
    return np.sin(2 * np.pi * f * np.arange(n) / fs + phase)


def test_zero_signal():
    assert np.all(morlet_response(np.zeros(1000), 50.0, 3, 1000) == 0)


def test_matches_direct_convolution(rng):
    x = rng.normal(size=1500)
    for f, c in [(20.0, 3), (120.0, 7.5), (400.0, 12)]:
        ref = direct_response(x, f, c, 1000)
        got = morlet_response(x, f, c, 1000)
        assert np.max(np.abs(got - ref)) <= 1e-9 * np.max(ref)


def test_steady_state_plateau():
    fs, f = 1000, 50.0
    x = tone(f, fs, 2000)
    r = morlet_response(x, f, 5, fs)
    inner = r[200:-200]
    assert (inner.max() - inner.min()) / inner.mean() < 0.01
    np.testing.assert_allclose(inner, direct_response(x, f, 5, fs)[200:-200], rtol=1e-9)


def test_octave_selectivity():
    fs, f = 4000, 100.0
    x = tone(f, fs, 8000)
    at_f = direct_response(x, f, 10, fs)[2000:-2000].mean()
    at_2f = morlet_response(x, 2 * f, 10, fs)[2000:-2000].mean()
    assert at_2f < 0.05 * at_f


def test_frequency_out_of_range():
    with pytest.raises(FrequencyOutOfRange):
        morlet_response(np.ones(100), 600.0, 3, 1000)
    with pytest.raises(FrequencyOutOfRange):
        SuperletPlan(SuperletConfig((100.0, 600.0)), 1000, 5000)


def test_cycle_sets():
    cfg = SuperletConfig((100.0,), base_cycles=3)
    assert cfg.cycles(3) == [3, 6, 9]
    assert cfg.cycles(2.4) == [3, 6, 9]
    add = SuperletConfig((100.0,), base_cycles=3, mode="additive")
    assert add.cycles(3) == [3, 4, 5]


def test_adaptive_orders():
    cfg = SuperletConfig((10.0, 20.0, 40.0, 110.0), order_min=2, order_max=12)
    np.testing.assert_allclose(cfg.orders(), [2, 3, 5, 12])


def test_order_one_equals_scalogram(rng):
    fs = 1000
    grid = (15.0, 40.0, 90.0, 210.0, 400.0)
    cfg = SuperletConfig(grid, base_cycles=4, order_min=1, order_max=1, pool_win=1, pool_hop=1, pool_frame=1)
    for _ in range(20):
        x = rng.normal(size=1200)
        ref = np.stack([direct_response(x, f, 4, fs) for f in grid])
        mag = SuperletPlan(cfg, fs, len(x)).magnitude(x)
        assert np.max(np.abs(mag - ref) / np.maximum(ref, 1e-300)) < 1e-6
        db = superlet_transform(x, cfg, fs).data[0]
        np.testing.assert_allclose(db, np.maximum(10 * np.log10(ref**2 + 1e-10), -100), rtol=1e-9)


def _peaks(spectrum, n=2):
    interior = np.flatnonzero((spectrum[1:-1] > spectrum[:-2]) & (spectrum[1:-1] > spectrum[2:])) + 1
    return sorted(interior[np.argsort(spectrum[interior])[-n:]])


def test_two_tone_peaks():
    fs = 16000
    x = tone(300, fs, 16000) + tone(3000, fs, 16000)
    cfg = SuperletConfig.default(fs)
    grid = np.array(cfg.freq_grid)
    sl = superlet_transform(x, cfg, fs).data[0].mean(axis=1)
    oracle = scalogram(x, grid, 3, fs).mean(axis=1)
    nearest = sorted(int(np.argmin(np.abs(grid - f))) for f in (300, 3000))
    assert _peaks(sl) == nearest
    # unit-energy wavelets tilt the broad order-1 peaks toward low frequencies
    assert all(abs(a - b) <= 1 for a, b in zip(_peaks(oracle), nearest))


def test_monotone_sharpening():
    fs, f = 8000, 250.0
    x = tone(f, fs, 16000)
    ratios = []
    for o in (1, 1.5, 2, 3, 4, 6):
        cfg = SuperletConfig((f, 2 * f), order_min=o, order_max=o, pool_win=1, pool_hop=1, pool_frame=1)
        mag = SuperletPlan(cfg, fs, len(x)).magnitude(x)[:, 5000:-5000].mean(axis=1)
        ratios.append(mag[0] / mag[1])
    assert all(b >= a for a, b in zip(ratios, ratios[1:]))


def test_zero_input_is_floor():
    cfg = SuperletConfig.default(16000, n_freqs=8)
    t = superlet_transform(np.zeros(16000), cfg, 16000)
    assert t.data.shape == (1, 8, 28)
    assert np.all(t.data == cfg.db_floor)


def test_input_too_short():
    with pytest.raises(InputTooShort):
        superlet_transform(np.zeros(500), SuperletConfig.default(16000), 16000)


def test_geomean_examples():
    np.testing.assert_allclose(fractional_geomean([np.full(3, 4.0), np.full(3, 9.0)], 2), 6.0, rtol=1e-15)
    s = np.array([0.5, 2.0, 7.0])
    np.testing.assert_allclose(fractional_geomean([s], 1), s, rtol=1e-15)
    # (4 * 9 * 16**0.5) ** (1/2.5), evaluated independently with mpmath
    out = fractional_geomean([np.array([4.0]), np.array([9.0]), np.array([16.0])], 2.5)
    assert out[0] == pytest.approx(7.300372102718469, rel=1e-14)


def test_geomean_floor_and_errors():
    assert np.all(fractional_geomean([np.zeros(2), np.zeros(2)], 2) == 0)
    mixed = fractional_geomean([np.zeros(1), np.ones(1)], 2)
    assert mixed[0] == pytest.approx(GEOMEAN_FLOOR**0.5)
    with pytest.raises(EmptyResponseList):
        fractional_geomean([], 1)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.lists(st.floats(1e-6, 1e6), min_size=4, max_size=4), min_size=1, max_size=6),
    st.floats(0, 0.999),
)
def test_geomean_bounds(rows, frac):
    r = np.array(rows)
    order = max(1.0, min(len(r) - 1 + frac, len(r)))
    k = math.floor(order)
    used = r[: k + (1 if order > k else 0)]
    out = fractional_geomean(list(r), order)
    assert np.all(out >= used.min(axis=0) * (1 - 1e-12))
    assert np.all(out <= used.max(axis=0) * (1 + 1e-12))


def test_pool_power_centred_frames(rng):
    mag = rng.random((3, 5000))
    out = pool_power(mag, 512, 512, 2048)
    assert out.shape == (3, 1 + (5000 - 2048) // 512)
    for t in range(out.shape[1]):
        c = t * 512 + 1024
        np.testing.assert_allclose(out[:, t], (mag[:, c - 256 : c + 256] ** 2).mean(axis=1), rtol=1e-10)
    np.testing.assert_array_equal(pool_power(mag, 1, 1, 1), mag**2)
