"""
Compare preprocessing modes
===========================

One run per mode on the same small corpus, then a mode x metric table
built from the saved reports (nothing is recomputed).
"""
from pathlib import Path

from specpipe import pipeline
from specpipe.synth_corpus import CorpusSpec, generate

out = Path("demo_out/compare")
spec = CorpusSpec(n_train=12, n_test=8, n_fail_train=5, n_fail_test=3, clips_per_participant=2)
generate(spec, out / "corpus")

runs = []
for mode in ("mel_rgb", "mel_mono3", "superlet"):
    cfg = pipeline.resolve_config({
        "manifest": str(out / "corpus" / "manifest.csv"),
        "preprocessing": {"mode": mode, "superlet": {"n_freqs": 32}},
        "training": {"stages": [{"dataset_id": "task", "epochs": 30, "learning_rate": 3e-3}]},
        "evaluation": {"n_resamples": 500},
    })
    pipeline.run(cfg, out / mode, jobs=1)
    runs.append(out / mode)

csv_text, table = pipeline.compare(runs)
print(table)
(out / "comparison.csv").write_text(csv_text)
