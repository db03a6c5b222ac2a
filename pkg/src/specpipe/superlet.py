"""Morlet wavelet responses and the fractional adaptive superlet transform.

A superlet at centre frequency ``f`` is a set of Morlet wavelets sharing
``f`` but with increasing cycle counts.  The transform takes the geometric
mean of the member magnitudes, which keeps the good time localisation of
short wavelets and the frequency selectivity of long ones.  Here the order
(number of members) grows linearly over the frequency grid and may be
fractional, in which case the last member enters the mean with a fractional
exponent.

Conventions:

* the Gaussian envelope of a wavelet with ``c`` cycles at ``f`` has standard
  deviation ``c / (k_sd * f)`` seconds and is truncated at ``SUPPORT_SD``
  standard deviations;
* every sampled wavelet is scaled to unit L2 norm;
* convolution is done with FFTs and zero padding, so the first and last
  half-support of each row are biased towards zero.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

from .errors import ConfigError, EmptyResponseList, FrequencyOutOfRange, InputTooShort
from .stft_mel import DEFAULT_DB_FLOOR, EPS_POWER, Mode, SpectrogramTensor

GEOMEAN_FLOOR = 1e-12
SUPPORT_SD = 4.0


class CycleMode(str, enum.Enum):
    MULTIPLICATIVE = "multiplicative"
    ADDITIVE = "additive"


def default_grid(sample_rate: int, n_freqs: int = 64, fmin: float = 50.0) -> tuple[float, ...]:
    return tuple(float(f) for f in np.geomspace(fmin, 0.9 * sample_rate / 2, n_freqs))


@dataclass(frozen=True)
class SuperletConfig:
    """Superlet parameters.

    The squared response is pooled onto the frame grid of an STFT with
    length ``pool_frame`` and hop ``pool_hop``: frame ``t`` averages the
    ``pool_win`` samples centred on that STFT frame's centre.  A short
    ``pool_win`` keeps the superlet's time resolution (a 2048-sample box
    would flatten 4-8 Hz envelope changes).  All three set to 1 keeps every
    sample.
    """

    freq_grid: tuple[float, ...]
    base_cycles: float = 3.0
    order_min: float = 1.0
    order_max: float = 16.0
    mode: CycleMode = CycleMode.MULTIPLICATIVE
    k_sd: float = 5.0
    pool_win: int = 512
    pool_hop: int = 512
    pool_frame: int = 2048
    db_floor: float = DEFAULT_DB_FLOOR

    def __post_init__(self):
        object.__setattr__(self, "freq_grid", tuple(float(f) for f in self.freq_grid))
        object.__setattr__(self, "mode", CycleMode(self.mode))
        g = np.asarray(self.freq_grid)
        if g.size == 0 or np.any(np.diff(g) <= 0) or g[0] <= 0:
            raise ConfigError("freq_grid must be positive and strictly ascending")
        if not 1 <= self.order_min <= self.order_max:
            raise ConfigError("need 1 <= order_min <= order_max")
        if self.base_cycles <= 0 or self.k_sd <= 0:
            raise ConfigError("base_cycles and k_sd must be positive")
        if min(self.pool_win, self.pool_hop, self.pool_frame) < 1:
            raise ConfigError("pooling window, hop and frame must be >= 1")
        if self.pool_win > self.pool_frame:
            raise ConfigError("pool_win must not exceed pool_frame")

    @classmethod
    def default(cls, sample_rate: int, **kw) -> "SuperletConfig":
        n_freqs = kw.pop("n_freqs", 64)
        fmin = kw.pop("fmin", 50.0)
        return cls(default_grid(sample_rate, n_freqs, fmin), **kw)

    def orders(self) -> np.ndarray:
        g = np.asarray(self.freq_grid)
        if len(g) == 1 or self.order_max == self.order_min:
            return np.full(len(g), float(self.order_min))
        return self.order_min + (self.order_max - self.order_min) * (g - g[0]) / (g[-1] - g[0])

    def cycles(self, order: float) -> list[float]:
        """Cycle counts of the ``ceil(order)`` members of one superlet."""
        n = math.ceil(order - 1e-12)
        if self.mode is CycleMode.MULTIPLICATIVE:
            return [i * self.base_cycles for i in range(1, n + 1)]
        return [self.base_cycles + (i - 1) for i in range(1, n + 1)]


def morlet_wavelet(f: float, cycles: float, fs: float, k_sd: float = 5.0) -> np.ndarray:
    """Sampled complex Morlet wavelet, unit L2 norm, odd length centred on t=0."""
    sd = cycles / (k_sd * f)
    half = int(math.ceil(SUPPORT_SD * sd * fs))
    t = np.arange(-half, half + 1) / fs
    psi = np.exp(-0.5 * (t / sd) ** 2) * np.exp(2j * np.pi * f * t)
    return psi / np.sqrt(np.sum(np.abs(psi) ** 2))


def _check_freq(f: float, fs: float) -> None:
    if not 0 < f < fs / 2:
        raise FrequencyOutOfRange(f"centre frequency {f} Hz outside (0, {fs / 2}) Hz")


def morlet_response(samples, f: float, cycles: float, fs: float, k_sd: float = 5.0) -> np.ndarray:
    """Magnitude of the signal convolved with a Morlet wavelet ('same' alignment)."""
    _check_freq(f, fs)
    if cycles < 1:
        raise ConfigError("cycles must be >= 1")
    x = np.asarray(samples, dtype=np.float64)
    psi = morlet_wavelet(f, cycles, fs, k_sd)
    n, m = len(x), len(psi)
    size = sfft.next_fast_len(n + m - 1)
    full = sfft.ifft(sfft.fft(x, size) * sfft.fft(psi, size))
    start = (m - 1) // 2
    return np.abs(full[start : start + n])


def fractional_geomean(responses, order: float) -> np.ndarray:
    """Geometric mean of ``order = k + alpha`` members.

    The first ``k`` series enter with weight 1, series ``k + 1`` with weight
    ``alpha``; the product is raised to ``1 / order``.  Values are floored at
    ``GEOMEAN_FLOOR`` first; points where every member is zero stay zero.
    """
    responses = list(responses)
    if not responses:
        raise EmptyResponseList("no responses to combine")
    if order < 1:
        raise ConfigError("order must be >= 1")
    k = int(math.floor(order + 1e-12))
    alpha = max(order - k, 0.0)
    need = k + (1 if alpha > 0 else 0)
    if len(responses) < need:
        raise ConfigError(f"order {order} needs {need} responses, got {len(responses)}")
    inv = 1.0 / order
    used = [np.asarray(r, dtype=np.float64) for r in responses[:need]]
    out = np.maximum(used[0], GEOMEAN_FLOOR) ** inv
    for r in used[1:k]:
        out = out * np.maximum(r, GEOMEAN_FLOOR) ** inv
    if alpha > 0:
        out = out * np.maximum(used[k], GEOMEAN_FLOOR) ** (alpha * inv)
    silent = np.all(np.stack(used) == 0, axis=0)
    return np.where(silent, 0.0, out)


class SuperletPlan:
    """Precomputed wavelet spectra for one (config, sample rate, length).

    Reusing a plan across equal-length segments saves one FFT per member.
    Spectra are kept only while they fit in ``cache_bytes``.
    """

    def __init__(self, cfg: SuperletConfig, fs: int, n_samples: int, cache_bytes: int = 256 * 2**20):
        self.cfg, self.fs, self.n = cfg, fs, n_samples
        for f in cfg.freq_grid:
            _check_freq(f, fs)
        self.orders = cfg.orders()
        self.members = [cfg.cycles(o) for o in self.orders]
        longest = max(
            len(morlet_wavelet(f, max(cs), fs, cfg.k_sd)) for f, cs in zip(cfg.freq_grid, self.members)
        )
        if n_samples < longest:
            raise InputTooShort(f"{n_samples} samples shorter than the longest wavelet ({longest})")
        self.size = sfft.next_fast_len(n_samples + longest - 1)
        total = sum(len(cs) for cs in self.members) * self.size * 16
        self._cache: dict | None = {} if total <= cache_bytes else None

    def _spectrum(self, f: float, c: float):
        key = (f, c)
        if self._cache is not None and key in self._cache:
            return self._cache[key]
        psi = morlet_wavelet(f, c, self.fs, self.cfg.k_sd)
        spec = (sfft.fft(psi, self.size), (len(psi) - 1) // 2)
        if self._cache is not None:
            self._cache[key] = spec
        return spec

    def magnitude(self, samples) -> np.ndarray:
        """Combined superlet magnitude, shape ``(n_freqs, n_samples)``."""
        x = np.asarray(samples, dtype=np.float64)
        if len(x) != self.n:
            raise ConfigError(f"plan built for {self.n} samples, got {len(x)}")
        X = sfft.fft(x, self.size)
        out = np.empty((len(self.cfg.freq_grid), self.n))
        for row, (f, order, cs) in enumerate(zip(self.cfg.freq_grid, self.orders, self.members)):
            rs = []
            for c in cs:
                W, start = self._spectrum(f, c)
                rs.append(np.abs(sfft.ifft(X * W)[start : start + self.n]))
            out[row] = fractional_geomean(rs, order)
        return out


def pool_power(magnitude: np.ndarray, win: int, hop: int, frame: int | None = None) -> np.ndarray:
    """Mean squared magnitude per frame.

    Frames follow an STFT grid of length ``frame`` (default ``win``) and hop
    ``hop``; frame ``t`` averages ``[t*hop + (frame - win)//2, ... + win)``.
    """
    frame = win if frame is None else frame
    n = magnitude.shape[-1]
    if n < frame:
        raise InputTooShort(f"{n} samples < pooling frame {frame}")
    power = magnitude**2
    if win == 1 and hop == 1 and frame == 1:
        return power
    csum = np.concatenate([np.zeros(power.shape[:-1] + (1,)), np.cumsum(power, axis=-1)], axis=-1)
    starts = np.arange(0, n - frame + 1, hop) + (frame - win) // 2
    return (csum[..., starts + win] - csum[..., starts]) / win


def superlet_transform(samples, cfg: SuperletConfig, fs: int, plan: SuperletPlan | None = None) -> SpectrogramTensor:
    """Log-power superlet spectrogram ``10 log10(R^2 + eps)`` pooled to frames."""
    x = np.asarray(samples, dtype=np.float64)
    if plan is None or plan.cfg != cfg or plan.fs != fs or plan.n != len(x):
        plan = SuperletPlan(cfg, fs, len(x))
    power = pool_power(plan.magnitude(x), cfg.pool_win, cfg.pool_hop, cfg.pool_frame)
    db = np.maximum(10.0 * np.log10(power + EPS_POWER), cfg.db_floor)
    return SpectrogramTensor(
        db[None],
        Mode.SUPERLET,
        float(cfg.db_floor),
        float(db.max()),
        {
            "n_freqs": len(cfg.freq_grid),
            "fmin": cfg.freq_grid[0],
            "fmax": cfg.freq_grid[-1],
            "base_cycles": cfg.base_cycles,
            "order_min": cfg.order_min,
            "order_max": cfg.order_max,
            "cycle_mode": cfg.mode.value,
            "k_sd": cfg.k_sd,
            "pool_win": cfg.pool_win,
            "pool_hop": cfg.pool_hop,
            "pool_frame": cfg.pool_frame,
        },
    )


def scalogram(samples, freqs, cycles: float, fs: float, k_sd: float = 5.0) -> np.ndarray:
    """Single-wavelet Morlet scalogram (magnitude), one row per frequency."""
    return np.stack([morlet_response(samples, f, cycles, fs, k_sd) for f in freqs])
