"""
Three views of one clip
=======================

Segments a synthetic vowel and renders it three ways: a colour-mapped
log-mel image, three log-mel planes at different FFT sizes stacked as RGB,
and an adaptive superlet spectrogram.  PNGs land in the output directory.
"""
import sys
from pathlib import Path

import numpy as np

from specpipe import render
from specpipe.audio_io import AudioClip, segment
from specpipe.stft_mel import mel_mono3, mel_single
from specpipe.superlet import SuperletConfig, superlet_transform
from specpipe.synth_corpus import CorpusSpec, iter_clips

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/images")
out.mkdir(parents=True, exist_ok=True)

spec = CorpusSpec(n_train=1, n_test=1, n_fail_train=1, n_fail_test=0, clips_per_participant=1)
part, rec, samples = next(iter_clips(spec))
print(f"{rec.clip_id}: {part.label.value}, {len(samples) / spec.sample_rate:.1f} s")

# 3 s windows with 1.5 s hop; a 3 s clip gives exactly one segment
seg = segment(AudioClip(samples, spec.sample_rate), 3.0, 1.5, clip_id=rec.clip_id)[0]

single = mel_single(seg.samples, spec.sample_rate)
mono3 = mel_mono3(seg.samples, spec.sample_rate)
sl = superlet_transform(seg.samples, SuperletConfig.default(spec.sample_rate), spec.sample_rate)

for t, cmap in ((single, render.VIRIDIS), (mono3, None), (sl, render.VIRIDIS)):
    x = render.normalize(render.clamp_top_db(t, 80))
    img = render.to_image(t, x, cmap)
    path = out / render.image_filename(seg.parent, seg.start_ms, t.mode)
    render.export_png(img, path)
    print(f"{t.mode.value:10s} tensor {t.data.shape}  image {img.pixels.shape}  -> {path.name}")

# the mono3 channels differ only in time/frequency trade-off
print("channel means (dB):", np.round(mono3.data.mean(axis=(1, 2)), 1))
