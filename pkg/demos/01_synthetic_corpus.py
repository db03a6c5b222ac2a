"""
A synthetic pass/fail voice corpus
==================================

Writes a small corpus of sustained vowels, checks the manifest and splits it
by enrollment date.  Fail voices carry a slow amplitude wobble plus pitch
jitter; pass voices are steady.
"""
import sys
from pathlib import Path

import numpy as np
from scipy.signal import hilbert

from specpipe.audio_io import read_wav
from specpipe.manifest import Label, split_by_epoch, validate_manifest
from specpipe.synth_corpus import CorpusSpec, generate

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/corpus")

# 10 participants enrolled before the cutoff, 6 after; 2 clips each
spec = CorpusSpec(n_train=10, n_test=6, n_fail_train=4, n_fail_test=3, clips_per_participant=2)
m = generate(spec, out)
print(f"{len(m)} participants, {sum(1 for _ in m.clips())} clips under {out}")

report = validate_manifest(m, out)
print("validation issues:", len(report.issues))

train, test = split_by_epoch(m, spec.split_cutoff)
print("train", train.label_counts(), " test", test.label_counts())

# the envelope tells the classes apart: peak-to-trough swing of a smoothed
# Hilbert envelope, one number per clip
for p in m.participants[:6]:
    clip = read_wav(out / p.clips[0].file_path)
    env = np.abs(hilbert(clip.samples))
    env = np.convolve(env, np.ones(400) / 400, mode="same")[4000:-4000]
    swing = (env.max() - env.min()) / env.mean()
    print(f"  {p.participant_id} {p.label.value:4s} envelope swing {swing:.2f}")

print("fail participants:", [p.participant_id for p in m.participants if p.label is Label.FAIL])
