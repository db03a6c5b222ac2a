"""WAV decoding, resampling and fixed-length segmentation."""

from __future__ import annotations

import enum
import json
import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal

from .errors import TruncatedFile, UnsupportedEncoding, ZeroSamples

DEFAULT_SAMPLE_RATE = 16000
DEFAULT_WINDOW_S = 3.0
DEFAULT_HOP_S = 1.5

_PCM = 0x0001
_FLOAT = 0x0003
_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True, eq=False)
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    source: object = None  # ClipRecord, when decoded from a manifest

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True, eq=False)
class AudioSegment:
    samples: np.ndarray
    start_time: float
    parent: str
    sample_rate: int

    @property
    def start_ms(self) -> int:
        return int(round(self.start_time * 1000))


class PadPolicy(str, enum.Enum):
    DROP_TAIL = "drop_tail"
    PAD_TAIL = "pad_tail"


def decode_wav(data: bytes, source=None) -> AudioClip:
    """Decode a RIFF/WAVE byte string (16-bit PCM or 32-bit float) to mono."""
    if len(data) < 12:
        raise TruncatedFile("shorter than a RIFF header")
    riff, _, wave = struct.unpack("<4sI4s", data[:12])
    if riff != b"RIFF" or wave != b"WAVE":
        raise UnsupportedEncoding("not a RIFF/WAVE file")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack("<4sI", data[pos : pos + 8])
        body = data[pos + 8 : pos + 8 + size]
        if cid == b"fmt ":
            if len(body) < 16:
                raise TruncatedFile("fmt chunk too short")
            fmt = struct.unpack("<HHIIHH", body[:16])
            if fmt[0] == _EXTENSIBLE:
                if len(body) < 26:
                    raise TruncatedFile("extensible fmt chunk too short")
                fmt = (struct.unpack("<H", body[24:26])[0],) + fmt[1:]
        elif cid == b"data":
            if len(body) < size:
                raise TruncatedFile(f"data chunk declares {size} bytes, {len(body)} present")
            payload = body
            break
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise TruncatedFile("no fmt chunk")
    if payload is None:
        raise TruncatedFile("no data chunk")

    tag, channels, rate, _, block_align, bits = fmt
    if channels not in (1, 2):
        raise UnsupportedEncoding(f"{channels} channels")
    if tag == _PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), 1 / 32768.0
    elif tag == _FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise UnsupportedEncoding(f"format tag {tag:#06x} with {bits} bits per sample")
    if rate <= 0:
        raise UnsupportedEncoding("sample rate must be positive")

    frame = channels * dtype.itemsize
    n = len(payload) // frame
    if len(payload) % frame:
        raise TruncatedFile("data chunk ends mid-frame")
    if n == 0:
        raise ZeroSamples("data chunk holds no samples")
    x = np.frombuffer(payload, dtype=dtype, count=n * channels).astype(np.float64) * scale
    x = x.reshape(n, channels).mean(axis=1)
    np.clip(x, -1.0, 1.0, out=x)
    return AudioClip(x, int(rate), source)


def encode_wav(samples, sample_rate: int, float32: bool = False) -> bytes:
    """Encode a mono waveform as a 16-bit PCM (default) or float WAV."""
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    if float32:
        body = x.astype("<f4").tobytes()
        tag, bits = _FLOAT, 32
    else:
        body = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2").tobytes()
        tag, bits = _PCM, 16
    block = bits // 8
    fmt = struct.pack("<HHIIHH", tag, 1, sample_rate, sample_rate * block, block, bits)
    chunks = b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(body)) + body
    return b"RIFF" + struct.pack("<I", 4 + len(chunks)) + b"WAVE" + chunks


def read_wav(path, source=None) -> AudioClip:
    return decode_wav(Path(path).read_bytes(), source)


def write_wav(path, clip: AudioClip) -> None:
    Path(path).write_bytes(encode_wav(clip.samples, clip.sample_rate))


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Polyphase windowed-sinc resampling to ``target_rate``.

    Output length is ``round(n * target_rate / sample_rate)``.
    """
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if target_rate == clip.sample_rate:
        return clip
    ratio = Fraction(int(target_rate), int(clip.sample_rate))
    y = signal.resample_poly(clip.samples, ratio.numerator, ratio.denominator, window=("kaiser", 8.0))
    n_out = int(round(len(clip.samples) * target_rate / clip.sample_rate))
    if len(y) >= n_out:
        y = y[:n_out]
    else:
        y = np.pad(y, (0, n_out - len(y)))
    return AudioClip(np.clip(y, -1.0, 1.0), int(target_rate), clip.source)


def segment(
    clip: AudioClip,
    window_s: float = DEFAULT_WINDOW_S,
    hop_s: float = DEFAULT_HOP_S,
    pad_policy: PadPolicy | str = PadPolicy.DROP_TAIL,
    clip_id: str | None = None,
) -> list[AudioSegment]:
    """Cut ``clip`` into equal-length windows starting every ``hop_s`` seconds.

    Clips shorter than one window give a single zero-padded segment.  With
    ``PAD_TAIL`` a final zero-padded window is added when the regular grid
    leaves trailing samples uncovered.
    """
    if window_s <= 0 or not 0 < hop_s <= window_s:
        raise ValueError("need window_s > 0 and 0 < hop_s <= window_s")
    pad_policy = PadPolicy(pad_policy)
    if clip_id is None:
        clip_id = getattr(clip.source, "clip_id", "clip")
    fs = clip.sample_rate
    win = int(round(window_s * fs))
    x = clip.samples
    n = len(x)

    def cut(start: int) -> AudioSegment:
        piece = x[start : start + win]
        if len(piece) < win:
            piece = np.pad(piece, (0, win - len(piece)))
        return AudioSegment(np.array(piece, dtype=np.float64), start / fs, clip_id, fs)

    if n < win:
        return [cut(0)]
    # small tolerance so that e.g. (10 - 3) / 1.5 is not floored to 4.999...
    count = math.floor((n / fs - window_s) / hop_s + 1e-9) + 1
    starts = [int(round(i * hop_s * fs)) for i in range(count)]
    starts = [s for s in starts if s + win <= n]
    if pad_policy is PadPolicy.PAD_TAIL and starts[-1] + win < n:
        starts.append(int(round(len(starts) * hop_s * fs)))
    return [cut(s) for s in starts]


def dump_segment(seg: AudioSegment, path) -> None:
    """Write raw float32 little-endian samples plus a JSON sidecar."""
    path = Path(path)
    path.write_bytes(np.asarray(seg.samples, dtype="<f4").tobytes())
    sidecar = {"clip_id": seg.parent, "start_time": seg.start_time, "sample_rate": seg.sample_rate}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, sort_keys=True))


def load_segment(path) -> AudioSegment:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    x = np.frombuffer(path.read_bytes(), dtype="<f4").astype(np.float64)
    return AudioSegment(x, meta["start_time"], meta["clip_id"], meta["sample_rate"])
