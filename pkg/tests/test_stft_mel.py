import numpy as np
import pytest

from specpipe.errors import ConfigError, DegenerateBand, InputTooShort
from specpipe.stft_mel import (
    DEFAULT_DB_FLOOR,
    Mode,
    dump_tensor,
    frame_count,
    hz_to_mel,
    load_tensor,
    log_mel,
    mel_filterbank,
    mel_mono3,
    mel_single,
    stft,
)
from scipy.signal import get_window


def naive_dft(frame):
    n = len(frame)
    k = np.arange(n // 2 + 1)[:, None]
    t = np.arange(n)[None, :]
    return (frame[None, :] * np.exp(-2j * np.pi * k * t / n)).sum(axis=1)


def test_zero_input():
    spec = stft(np.zeros(4096), 1024, 256)
    assert spec.n_frames == 13
    assert np.all(spec.bins == 0)


def test_tone_peak_bin():
    fs = 16000
    x = np.sin(2 * np.pi * 440 * np.arange(fs) / fs)
    spec = stft(x, 1024, 512)
    assert np.all(np.argmax(np.abs(spec.bins), axis=0) == 28)


def test_parseval_single_frame(rng):
    n = 1024
    x = rng.normal(size=n)
    X = stft(x, n, n).bins[:, 0]
    # one-sided: double every bin except DC and Nyquist
    total = abs(X[0]) ** 2 + abs(X[-1]) ** 2 + 2 * np.sum(np.abs(X[1:-1]) ** 2)
    wx = get_window("hann", n, fftbins=True) * x
    assert total == pytest.approx(n * np.sum(wx**2), rel=1e-6)


@pytest.mark.parametrize("n_fft", [8, 64, 256, 1024])
@pytest.mark.parametrize("kind", ["hann", "hamming"])
def test_matches_naive_dft(rng, n_fft, kind):
    x = rng.normal(size=3 * n_fft)
    hop = n_fft // 2
    spec = stft(x, n_fft, hop, kind)
    w = get_window(kind, n_fft, fftbins=True)
    assert spec.n_frames == frame_count(len(x), n_fft, hop) == 1 + (len(x) - n_fft) // hop
    for t in range(spec.n_frames):
        ref = naive_dft(w * x[t * hop : t * hop + n_fft])
        assert np.max(np.abs(spec.bins[:, t] - ref)) <= 1e-9 * np.max(np.abs(ref))


def test_power_scales_quadratically(rng):
    x = rng.normal(size=2048)
    p1 = stft(x, 512, 128).power()
    p3 = stft(3.0 * x, 512, 128).power()
    np.testing.assert_allclose(p3, 9.0 * p1, rtol=1e-12)


def test_stft_errors():
    with pytest.raises(InputTooShort):
        stft(np.zeros(100), 128, 32)
    with pytest.raises(ConfigError):
        stft(np.zeros(1000), 300, 32)


def test_mel_scale_values():
    assert hz_to_mel(0.0) == 0.0
    assert hz_to_mel(700.0) == pytest.approx(781.1728387480312, rel=1e-12)


def test_two_band_break_points():
    fb = mel_filterbank(2, 512, 16000, 0.0, 8000.0)
    m = 2595 * np.log10(1 + 8000 / 700)
    np.testing.assert_allclose(hz_to_mel(fb.breaks_hz), [0, m / 3, 2 * m / 3, m], atol=1e-9)
    # triangle i peaks at break i + 1
    freqs = np.arange(257) * 16000 / 512
    for i in range(2):
        assert abs(freqs[np.argmax(fb.weights[i])] - fb.breaks_hz[i + 1]) <= 16000 / 512


@pytest.mark.parametrize("n_mels, n_fft, fmin, fmax", [(128, 1024, 0, 8000), (40, 512, 100, 4000), (64, 4096, 50, 7600)])
def test_filterbank_shape(n_mels, n_fft, fmin, fmax):
    fb = mel_filterbank(n_mels, n_fft, 16000, fmin, fmax)
    freqs = np.arange(n_fft // 2 + 1) * 16000 / n_fft
    w = fb.weights
    assert w.shape == (n_mels, n_fft // 2 + 1)
    assert np.all(w >= 0) and np.all(w.max(axis=1) > 0) and np.all(w <= 1)
    assert np.all(w[:, (freqs < fmin) | (freqs > fmax)] == 0)
    for row in w:
        nz = np.flatnonzero(row)
        assert np.all(np.diff(nz) == 1)  # contiguous support
        seg = row[nz[0] : nz[-1] + 1]
        peak = int(np.argmax(seg))
        assert np.all(np.diff(seg[: peak + 1]) >= 0) and np.all(np.diff(seg[peak:]) <= 0)


def test_degenerate_band():
    with pytest.raises(DegenerateBand):
        mel_filterbank(128, 64, 16000)


def test_log_mel_zero_and_gain(rng):
    fb = mel_filterbank(32, 512, 16000)
    zero = log_mel(stft(np.zeros(2048), 512, 256), fb, -80.0)
    assert np.all(zero.data == -80.0)

    x = rng.normal(size=2048) * 0.01
    a = log_mel(stft(x, 512, 256), fb, -200.0).data
    b = log_mel(stft(10 * x, 512, 256), fb, -200.0).data
    mask = a > -90  # eps negligible here
    np.testing.assert_allclose((b - a)[mask], 20.0, atol=1e-6)


def test_log_mel_tone_row(rng):
    fs, n_fft = 16000, 1024
    f = 1234.0
    x = np.sin(2 * np.pi * f * np.arange(n_fft) / fs)
    fb = mel_filterbank(40, n_fft, fs)
    out = log_mel(stft(x, n_fft, n_fft), fb).data[0, :, 0]
    w = get_window("hann", n_fft, fftbins=True)
    oracle = fb.weights @ np.abs(naive_dft(w * x)) ** 2
    assert int(np.argmax(out)) == int(np.argmax(oracle))
    lo, hi = fb.breaks_hz[np.argmax(out)], fb.breaks_hz[np.argmax(out) + 2]
    assert lo < f < hi


def test_mono3_identical_settings(rng):
    x = rng.normal(size=8000)
    t = mel_mono3(x, 16000, [(1024, 256)] * 3, n_mels=32)
    np.testing.assert_array_equal(t.data[0], t.data[1])
    np.testing.assert_array_equal(t.data[1], t.data[2])


def test_mono3_alignment_frame_counts(rng):
    x = rng.normal(size=48000) * 0.1
    settings = [(1024, 256), (2048, 512), (4096, 1024)]
    counts = [frame_count(48000, n, h) for n, h in settings]
    assert counts == [184, 90, 43]
    t = mel_mono3(x, 16000, settings)
    assert t.mode is Mode.MEL_MONO3
    assert t.data.shape == (3, 128, 90)
    # middle channel is untouched
    np.testing.assert_array_equal(t.data[1], mel_single(x, 16000, 2048, 512).data[0])


def test_mono3_zero_and_short():
    t = mel_mono3(np.zeros(48000), 16000)
    assert np.all(t.data == DEFAULT_DB_FLOOR)
    with pytest.raises(InputTooShort):
        mel_mono3(np.zeros(3000), 16000)


def test_tensor_dump_round_trip(tmp_path, rng):
    t = mel_single(rng.normal(size=8192), 16000, 1024, 256, 32)
    dump_tensor(t, tmp_path / "t.f32", {"config_hash": "abc"})
    back = load_tensor(tmp_path / "t.f32")
    assert back.mode is Mode.MEL_SINGLE and back.data.shape == t.data.shape
    np.testing.assert_allclose(back.data, t.data, rtol=1e-6)
