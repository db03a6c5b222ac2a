"""Short-time Fourier transform, mel filterbank and log-mel spectrogram modes.

Two mel preprocessing modes are built here:

* ``MEL_SINGLE``: one log-mel plane, later colour-mapped to an RGB image.
* ``MEL_MONO3``: three log-mel planes computed with different FFT lengths and
  hops, aligned in time to the middle setting and stacked as channels.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import get_window

from .errors import ConfigError, DegenerateBand, InputTooShort

EPS_POWER = 1e-10
DEFAULT_N_MELS = 128
DEFAULT_DB_FLOOR = -100.0
DEFAULT_MONO3_SETTINGS = ((1024, 256), (2048, 512), (4096, 1024))
DEFAULT_SINGLE_SETTING = (2048, 512)


class WindowKind(str, enum.Enum):
    HANN = "hann"
    HAMMING = "hamming"


class Mode(str, enum.Enum):
    MEL_SINGLE = "mel_single"
    MEL_MONO3 = "mel_mono3"
    SUPERLET = "superlet"


@dataclass(frozen=True, eq=False)
class ComplexSpectrogram:
    bins: np.ndarray  # (n_fft // 2 + 1, n_frames), complex
    n_fft: int
    hop: int
    window_kind: WindowKind
    n_samples: int

    @property
    def n_frames(self) -> int:
        return self.bins.shape[1]

    def power(self) -> np.ndarray:
        return self.bins.real**2 + self.bins.imag**2


@dataclass(frozen=True, eq=False)
class FilterbankMatrix:
    weights: np.ndarray  # (n_mels, n_fft // 2 + 1)
    fmin: float
    fmax: float
    n_fft: int
    sample_rate: int
    breaks_hz: np.ndarray = field(repr=False, default=None)

    @property
    def n_mels(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True, eq=False)
class SpectrogramTensor:
    data: np.ndarray  # (channels, n_freq_rows, n_frames), dB
    mode: Mode
    db_floor: float
    db_ceil: float
    settings: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def frame_count(n_samples: int, n_fft: int, hop: int) -> int:
    return 1 + (n_samples - n_fft) // hop


def stft(samples, n_fft: int, hop: int, window_kind: WindowKind | str = WindowKind.HANN) -> ComplexSpectrogram:
    """Frame-wise one-sided DFT of ``window * samples[t*hop : t*hop + n_fft]``.

    No centring or padding: the frame count is ``1 + (n - n_fft) // hop``.
    """
    x = np.asarray(samples, dtype=np.float64)
    if not _is_pow2(n_fft):
        raise ConfigError(f"n_fft must be a power of two, got {n_fft}")
    if hop <= 0:
        raise ConfigError("hop must be positive")
    if len(x) < n_fft:
        raise InputTooShort(f"{len(x)} samples < n_fft {n_fft}")
    kind = WindowKind(window_kind)
    w = get_window(kind.value, n_fft, fftbins=True)
    frames = np.lib.stride_tricks.sliding_window_view(x, n_fft)[::hop]
    bins = np.fft.rfft(frames * w, axis=1).T
    return ComplexSpectrogram(bins, n_fft, hop, kind, len(x))


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int, fmin: float = 0.0, fmax: float | None = None) -> FilterbankMatrix:
    """Triangular, peak-normalised filters on the HTK mel scale.

    Raises DegenerateBand when some filter's support contains no FFT bin.
    """
    if fmax is None:
        fmax = sample_rate / 2
    if n_mels < 2:
        raise ConfigError("n_mels must be at least 2")
    if not 0 <= fmin < fmax <= sample_rate / 2:
        raise ConfigError(f"need 0 <= fmin < fmax <= fs/2, got fmin={fmin}, fmax={fmax}")
    breaks = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = breaks[:-2, None], breaks[1:-1, None], breaks[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    weights = np.maximum(0.0, np.minimum(up, down))
    empty = np.flatnonzero(~(weights > 0).any(axis=1))
    if empty.size:
        i = int(empty[0])
        raise DegenerateBand(
            f"mel band {i} ({breaks[i]:.1f}-{breaks[i + 2]:.1f} Hz) falls between FFT bins "
            f"(resolution {sample_rate / n_fft:.1f} Hz); use fewer mels or a longer FFT"
        )
    return FilterbankMatrix(weights, float(fmin), float(fmax), n_fft, sample_rate, breaks)


def log_mel(spec: ComplexSpectrogram, fb: FilterbankMatrix, db_floor: float = DEFAULT_DB_FLOOR) -> SpectrogramTensor:
    """``10 log10(fb @ |X|^2 + eps)``, clamped below at ``db_floor``."""
    if fb.weights.shape[1] != spec.bins.shape[0]:
        raise ConfigError(f"filterbank built for n_fft={fb.n_fft}, spectrogram has n_fft={spec.n_fft}")
    db = 10.0 * np.log10(fb.weights @ spec.power() + EPS_POWER)
    np.maximum(db, db_floor, out=db)
    return SpectrogramTensor(
        db[None],
        Mode.MEL_SINGLE,
        float(db_floor),
        float(db.max()),
        {"n_fft": spec.n_fft, "hop": spec.hop, "n_mels": fb.n_mels},
    )


def frame_centers(n_frames: int, n_fft: int, hop: int) -> np.ndarray:
    return np.arange(n_frames) * hop + n_fft / 2


def mel_single(samples, sample_rate: int, n_fft: int = DEFAULT_SINGLE_SETTING[0], hop: int = DEFAULT_SINGLE_SETTING[1],
               n_mels: int = DEFAULT_N_MELS, db_floor: float = DEFAULT_DB_FLOOR, fmin: float = 0.0, fmax=None) -> SpectrogramTensor:
    fb = mel_filterbank(n_mels, n_fft, sample_rate, fmin, fmax)
    return log_mel(stft(samples, n_fft, hop), fb, db_floor)


def mel_mono3(samples, sample_rate: int, settings=DEFAULT_MONO3_SETTINGS, n_mels: int = DEFAULT_N_MELS,
              db_floor: float = DEFAULT_DB_FLOOR, fmin: float = 0.0, fmax=None) -> SpectrogramTensor:
    """Three log-mel planes with different (n_fft, hop), aligned to the middle one.

    Each plane is linearly interpolated along time, using frame-centre
    positions, onto the frame grid of ``settings[1]``.
    """
    settings = tuple((int(n), int(h)) for n, h in settings)
    if len(settings) != 3:
        raise ConfigError("mel_mono3 needs exactly three (n_fft, hop) settings")
    x = np.asarray(samples, dtype=np.float64)
    longest = max(n for n, _ in settings)
    if len(x) < longest:
        raise InputTooShort(f"{len(x)} samples < largest n_fft {longest}")
    planes = [mel_single(x, sample_rate, n, h, n_mels, db_floor, fmin, fmax).data[0] for n, h in settings]
    ref_n, ref_h = settings[1]
    target = frame_centers(planes[1].shape[1], ref_n, ref_h)
    aligned = []
    for (n, h), plane in zip(settings, planes):
        src = frame_centers(plane.shape[1], n, h)
        if plane.shape[1] == len(target) and np.array_equal(src, target):
            aligned.append(plane)
            continue
        aligned.append(np.stack([np.interp(target, src, row) for row in plane]))
    data = np.stack(aligned)
    return SpectrogramTensor(
        data,
        Mode.MEL_MONO3,
        float(db_floor),
        float(data.max()),
        {"settings": [list(s) for s in settings], "n_mels": n_mels},
    )


def dump_tensor(t: SpectrogramTensor, path, extra: dict | None = None) -> None:
    """Little-endian float32 payload plus a ``.json`` sidecar."""
    path = Path(path)
    path.write_bytes(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    meta = {
        "mode": t.mode.value,
        "shape": list(t.data.shape),
        "settings": t.settings,
        "db_floor": t.db_floor,
        "db_ceil": t.db_ceil,
        **(extra or {}),
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, sort_keys=True))


def load_tensor(path) -> SpectrogramTensor:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    data = np.frombuffer(path.read_bytes(), dtype="<f4").reshape(meta["shape"]).astype(np.float64)
    return SpectrogramTensor(data, Mode(meta["mode"]), meta["db_floor"], meta["db_ceil"], meta["settings"])
