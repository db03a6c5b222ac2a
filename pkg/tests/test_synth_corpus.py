import numpy as np
import pytest
from scipy.signal import butter, hilbert, sosfiltfilt

from specpipe.audio_io import read_wav
from specpipe.manifest import Label, load_manifest, split_by_epoch, validate_manifest
from specpipe.synth_corpus import CorpusSpec, PretrainSpec, generate, generate_pretraining, iter_clips


def modulation_depth(x, fs):
    """Depth of the strongest 3-9 Hz component of the demodulated envelope."""
    env = np.abs(hilbert(x))
    env = sosfiltfilt(butter(4, 20, fs=fs, output="sos"), env)
    env = env[fs // 4 : -fs // 4]  # skip fades
    spec = np.abs(np.fft.rfft((env - env.mean()) * np.hanning(len(env))))
    freqs = np.fft.rfftfreq(len(env), 1 / fs)
    band = (freqs >= 3) & (freqs <= 9)
    # Hann window coherent gain is 0.5
    return 2 * spec[band].max() / (0.5 * len(env)) / env.mean()


def test_two_participant_corpus(tmp_path):
    spec = CorpusSpec(n_train=1, n_test=1, n_fail_train=1, n_fail_test=0, clips_per_participant=1)
    m = generate(spec, tmp_path)
    assert len(list((tmp_path / "audio").glob("*.wav"))) == 2
    assert (tmp_path / "manifest.csv").read_text().count("\n") == 3
    assert load_manifest(tmp_path / "manifest.csv") == m
    assert CorpusSpec.from_json((tmp_path / "corpus_spec.json").read_text()) == spec


def test_byte_identical_under_seed(tmp_path):
    spec = CorpusSpec(n_train=2, n_test=1, n_fail_train=1, n_fail_test=1, clips_per_participant=2, seed=9)
    generate(spec, tmp_path / "a")
    generate(spec, tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_oracle_recovers_known_depth():
    fs = 16000
    t = np.arange(3 * fs) / fs
    carrier = np.sin(2 * np.pi * 180 * t) + 0.5 * np.sin(2 * np.pi * 360 * t)
    for d in (0.0, 0.3, 0.6):
        x = carrier * (1 + d * np.sin(2 * np.pi * 6 * t))
        assert modulation_depth(x, fs) == pytest.approx(d, abs=0.03)


@pytest.fixture(scope="module")
def depths():
    spec = CorpusSpec()
    out = {Label.FAIL: [], Label.PASS: []}
    for part, _, x in iter_clips(spec):
        out[part.label].append(modulation_depth(x, spec.sample_rate))
    return spec, {k: np.array(v) for k, v in out.items()}


def test_depth_margin(depths):
    spec, d = depths
    margin = d[Label.FAIL].mean() - d[Label.PASS].mean()
    assert margin == pytest.approx(spec.am_depth_fail - spec.am_depth_pass, abs=0.1)


def test_threshold_separability(depths):
    _, d = depths
    scores = np.r_[d[Label.FAIL], d[Label.PASS]]
    truth = np.r_[np.ones(len(d[Label.FAIL])), np.zeros(len(d[Label.PASS]))]
    best = max(np.mean((scores >= th) == truth) for th in np.unique(scores))
    assert best >= 0.95


def test_manifest_counts_and_validation(tmp_path):
    spec = CorpusSpec(clips_per_participant=1)
    m = generate(spec, tmp_path)
    assert validate_manifest(m, tmp_path).issues == []
    tr, te = split_by_epoch(m, spec.split_cutoff)
    assert (len(tr), len(te)) == (40, 28)
    assert tr.label_counts()[Label.FAIL] == 18 and te.label_counts()[Label.FAIL] == 9
    clip = read_wav(tmp_path / m.participants[0].clips[0].file_path)
    assert clip.sample_rate == 16000 and len(clip.samples) == 48000


def test_pretraining_corpus(tmp_path):
    spec = PretrainSpec(n_per_class=2, duration_s=1.0)
    path = generate_pretraining(spec, tmp_path)
    rows = path.read_text().splitlines()
    assert rows[0] == "clip_id,file_path,class" and len(rows) == 1 + 2 * len(spec.classes)
    assert {r.split(",")[2] for r in rows[1:]} == set(spec.classes)
