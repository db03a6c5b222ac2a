"""Synthetic labelled audio corpora.

``generate`` writes a binary pass/fail corpus shaped like the clinical
study: participants enrolled over two epochs, five sustained vowels each.
Fail participants get a rough voice, i.e. slow amplitude modulation and
stronger pitch jitter on top of the same harmonic vowel model used for Pass
participants.  ``generate_pretraining`` writes a multi-class corpus of
generic sounds (tone bursts, chirps, noise bands, clean and noisy vowels)
used as the first stage of staged training.

Every clip is drawn from its own RNG stream seeded by
``(seed, participant index, clip index)``, so output is byte-identical for a
given spec and clips can be generated in any order.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import signal

from .audio_io import encode_wav
from .errors import ConfigError, IoFailure
from .manifest import ClipRecord, Label, Manifest, ParticipantRecord, Task, write_manifest

VOWEL_FORMANTS = {
    "a": (730.0, 1090.0, 2440.0),
    "e": (530.0, 1840.0, 2480.0),
    "i": (270.0, 2290.0, 3010.0),
    "o": (570.0, 840.0, 2410.0),
    "u": (300.0, 870.0, 2240.0),
}
VOWELS = tuple(VOWEL_FORMANTS)
PRETRAIN_CLASSES = ("tone_burst", "chirp", "noise_band", "harmonic_vowel", "noisy_vowel")


@dataclass(frozen=True)
class CorpusSpec:
    """Binary corpus parameters.

    Effect sizes: Fail clips carry amplitude modulation of depth
    ``am_depth_fail`` (each participant drawn within +-20 %) at 4-8 Hz and
    pitch jitter ``jitter_fail``; Pass clips use ``am_depth_pass`` and
    ``jitter_pass``.  Lowering the Fail values towards the Pass values makes
    the task harder.
    """

    n_train: int = 40
    n_test: int = 28
    n_fail_train: int = 18
    n_fail_test: int = 9
    clips_per_participant: int = 5
    sample_rate: int = 16000
    duration_s: float = 3.0
    seed: int = 42
    f0_range: tuple[float, float] = (95.0, 230.0)
    am_depth_fail: float = 0.6
    am_depth_pass: float = 0.0
    am_rate_range: tuple[float, float] = (4.0, 8.0)
    jitter_fail: float = 0.03
    jitter_pass: float = 0.005
    snr_db: float = 30.0
    epoch1: tuple[str, str] = ("2022-06-13", "2023-01-19")
    epoch2: tuple[str, str] = ("2023-01-24", "2023-03-04")

    def __post_init__(self):
        for name in ("f0_range", "am_rate_range", "epoch1", "epoch2"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigError("need at least one train and one test participant")
        if not (0 <= self.n_fail_train <= self.n_train and 0 <= self.n_fail_test <= self.n_test):
            raise ConfigError("fail counts exceed participant counts")
        if self.clips_per_participant < 1 or self.duration_s <= 0:
            raise ConfigError("clips_per_participant and duration_s must be positive")
        if not 0 <= self.am_depth_pass <= 1 or not 0 <= self.am_depth_fail * 1.2 <= 1:
            raise ConfigError("modulation depths must keep the envelope non-negative (fail depth <= 1/1.2)")

    @property
    def split_cutoff(self) -> dt.date:
        return dt.date.fromisoformat(self.epoch2[0])

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CorpusSpec":
        return cls(**json.loads(text))


@dataclass(frozen=True)
class PretrainSpec:
    n_per_class: int = 40
    classes: tuple[str, ...] = PRETRAIN_CLASSES
    sample_rate: int = 16000
    duration_s: float = 3.0
    seed: int = 7

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        bad = [c for c in self.classes if c not in PRETRAIN_CLASSES]
        if bad or len(self.classes) < 2:
            raise ConfigError(f"pretraining classes must be >= 2 of {PRETRAIN_CLASSES}, got {self.classes}")


def _fade(x: np.ndarray, fs: int, ms: float = 20.0) -> np.ndarray:
    n = min(int(fs * ms / 1000), len(x) // 2)
    ramp = 0.5 - 0.5 * np.cos(np.linspace(0, np.pi, n))
    x[:n] *= ramp
    x[len(x) - n :] *= ramp[::-1]
    return x


def _smooth_noise(rng, n: int, fs: int, cutoff: float) -> np.ndarray:
    """Unit-variance Gaussian noise low-passed at ``cutoff`` Hz."""
    b, a = signal.butter(2, cutoff / (fs / 2))
    z = signal.lfilter(b, a, rng.standard_normal(n + fs // 10))[fs // 10 :]
    return z / (z.std() + 1e-12)


def harmonic_vowel(rng, fs: int, duration_s: float, f0: float, vowel: str, jitter: float,
                   am_depth: float = 0.0, am_rate: float = 5.0, snr_db: float = 40.0) -> np.ndarray:
    """Harmonic source shaped by three formant resonances, optional AM, additive noise."""
    n = int(round(duration_s * fs))
    t = np.arange(n) / fs
    f0_track = f0 * (1.0 + jitter * _smooth_noise(rng, n, fs, 40.0) + 0.01 * np.sin(2 * np.pi * 0.7 * t))
    phase = 2 * np.pi * np.cumsum(f0_track) / fs
    formants = VOWEL_FORMANTS[vowel]
    x = np.zeros(n)
    for k in range(1, int(0.45 * fs / f0) + 1):
        fk = k * f0
        if fk > 5000:
            break
        gain = sum(np.exp(-0.5 * ((fk - F) / (60.0 + 0.08 * F)) ** 2) / (i + 1) for i, F in enumerate(formants))
        gain += 0.02 / k
        x += gain * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    if am_depth > 0:
        x *= (1.0 + am_depth * np.sin(2 * np.pi * am_rate * t + rng.uniform(0, 2 * np.pi))) / (1.0 + am_depth)
    x /= np.sqrt(np.mean(x**2)) + 1e-12
    x += rng.standard_normal(n) * 10 ** (-snr_db / 20)
    return _fade(x, fs)


def _peak_normalize(x: np.ndarray, peak: float) -> np.ndarray:
    return x * (peak / (np.max(np.abs(x)) + 1e-12))


@dataclass
class _Participant:
    pid: str
    label: Label
    date: dt.date
    index: int
    f0: float
    am_depth: float
    jitter: float


def _participants(spec: CorpusSpec) -> list[_Participant]:
    rng = np.random.default_rng([spec.seed, 0])
    out = []
    epochs = (
        (spec.epoch1, spec.n_train, spec.n_fail_train),
        (spec.epoch2, spec.n_test, spec.n_fail_test),
    )
    idx = 0
    for (start, end), n, n_fail in epochs:
        d0, d1 = dt.date.fromisoformat(start), dt.date.fromisoformat(end)
        span = (d1 - d0).days
        days = np.sort(rng.integers(0, span + 1, size=n))
        fails = set(rng.permutation(n)[:n_fail].tolist())
        for j in range(n):
            is_fail = j in fails
            out.append(
                _Participant(
                    pid=f"P{idx + 1:03d}",
                    label=Label.FAIL if is_fail else Label.PASS,
                    date=d0 + dt.timedelta(days=int(days[j])),
                    index=idx,
                    f0=float(rng.uniform(*spec.f0_range)),
                    am_depth=float(spec.am_depth_fail * rng.uniform(0.8, 1.2)) if is_fail
                    else float(spec.am_depth_pass * rng.uniform(0.0, 1.0)),
                    jitter=spec.jitter_fail if is_fail else spec.jitter_pass,
                )
            )
            idx += 1
    return out


def _clip_tasks(k: int) -> list[tuple[Task, int]]:
    return [(Task(f"vowel_{VOWELS[i % 5]}"), i // 5) for i in range(k)]


def synthesize_clip(spec: CorpusSpec, part: _Participant, clip_index: int, task: Task) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, part.index + 1, clip_index])
    x = harmonic_vowel(
        rng,
        spec.sample_rate,
        spec.duration_s,
        f0=part.f0 * rng.uniform(0.95, 1.05),
        vowel=task.value[-1],
        jitter=part.jitter,
        am_depth=part.am_depth,
        am_rate=float(rng.uniform(*spec.am_rate_range)),
        snr_db=spec.snr_db,
    )
    return _peak_normalize(x, float(rng.uniform(0.3, 0.8)))


def iter_clips(spec: CorpusSpec):
    """Yield ``(participant, ClipRecord, samples)`` without touching disk."""
    for part in _participants(spec):
        for ci, (task, rep) in enumerate(_clip_tasks(spec.clips_per_participant)):
            cid = f"{part.pid}_{task.value}_{rep}"
            rec = ClipRecord(cid, f"audio/{cid}.wav", task, rep)
            yield part, rec, synthesize_clip(spec, part, ci, task)


def build_manifest(spec: CorpusSpec) -> Manifest:
    parts = _participants(spec)
    recs = []
    for p in parts:
        clips = tuple(
            ClipRecord(f"{p.pid}_{t.value}_{r}", f"audio/{p.pid}_{t.value}_{r}.wav", t, r)
            for t, r in _clip_tasks(spec.clips_per_participant)
        )
        recs.append(ParticipantRecord(p.pid, p.label, p.date, clips))
    return Manifest(tuple(recs))


def generate(spec: CorpusSpec, out_dir) -> Manifest:
    """Write WAV files, ``manifest.csv`` and ``corpus_spec.json`` under ``out_dir``."""
    out = Path(out_dir)
    try:
        (out / "audio").mkdir(parents=True, exist_ok=True)
        for _, rec, x in iter_clips(spec):
            (out / rec.file_path).write_bytes(encode_wav(x, spec.sample_rate))
        m = build_manifest(spec)
        write_manifest(m, out / "manifest.csv")
        (out / "corpus_spec.json").write_text(spec.to_json())
    except OSError as exc:
        raise IoFailure(f"cannot write corpus to {out}: {exc}") from exc
    return m


def synthesize_pretraining_clip(kind: str, rng, fs: int, duration_s: float) -> np.ndarray:
    n = int(round(duration_s * fs))
    t = np.arange(n) / fs
    if kind == "tone_burst":
        f = rng.uniform(200, 4000)
        gate = np.zeros(n)
        for _ in range(int(rng.integers(2, 6))):
            s = int(rng.integers(0, n - fs // 5))
            gate[s : s + int(rng.integers(fs // 20, fs // 5))] = 1.0
        x = np.sin(2 * np.pi * f * t) * signal.lfilter([0.01], [1, -0.99], gate)
    elif kind == "chirp":
        f0, f1 = sorted(rng.uniform(100, 6000, size=2))
        if rng.random() < 0.5:
            f0, f1 = f1, f0
        x = signal.chirp(t, f0, duration_s, f1, method="logarithmic")
    elif kind == "noise_band":
        lo = rng.uniform(100, 3000)
        b, a = signal.butter(4, [lo / (fs / 2), min(lo * rng.uniform(1.3, 2.5), 0.45 * fs) / (fs / 2)], "band")
        x = signal.lfilter(b, a, rng.standard_normal(n))
    elif kind == "harmonic_vowel":
        x = harmonic_vowel(rng, fs, duration_s, rng.uniform(90, 250), VOWELS[int(rng.integers(5))], 0.005)
    elif kind == "noisy_vowel":
        x = harmonic_vowel(rng, fs, duration_s, rng.uniform(90, 250), VOWELS[int(rng.integers(5))], 0.01, snr_db=rng.uniform(0, 8))
    else:
        raise ConfigError(f"unknown generator kind {kind!r}")
    x = x + 1e-3 * rng.standard_normal(n)
    return _peak_normalize(_fade(x, fs), float(rng.uniform(0.3, 0.8)))


def iter_pretraining(spec: PretrainSpec):
    """Yield ``(clip_id, class_index, samples)``."""
    for ci, kind in enumerate(spec.classes):
        for j in range(spec.n_per_class):
            rng = np.random.default_rng([spec.seed, ci, j])
            yield f"{kind}_{j:04d}", ci, synthesize_pretraining_clip(kind, rng, spec.sample_rate, spec.duration_s)


def generate_pretraining(spec: PretrainSpec, out_dir) -> Path:
    """Write the multi-class corpus and ``pretrain.csv`` (``clip_id,file_path,class``)."""
    out = Path(out_dir)
    try:
        (out / "audio").mkdir(parents=True, exist_ok=True)
        rows = []
        for cid, ci, x in iter_pretraining(spec):
            rel = f"audio/{cid}.wav"
            (out / rel).write_bytes(encode_wav(x, spec.sample_rate))
            rows.append((cid, rel, spec.classes[ci]))
        path = out / "pretrain.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["clip_id", "file_path", "class"])
            w.writerows(rows)
    except OSError as exc:
        raise IoFailure(f"cannot write pretraining corpus to {out}: {exc}") from exc
    return path
