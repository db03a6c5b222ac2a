"""
Pre-train on generic sounds, then fine-tune
===========================================

Stage one learns a five-way task (tone bursts, chirps, noise bands, clean
and noisy vowels).  Stage two swaps the classifier head for a two-way one
and fine-tunes on pass/fail voices with the convolution layers frozen.
"""
from pathlib import Path

import numpy as np

from specpipe import pipeline
from specpipe.manifest import split_by_epoch
from specpipe.model import Dataset, ModelConfig, TrainConfig, predict_clip, train

out = Path("demo_out/finetune")
cfg = pipeline.resolve_config({
    "corpus": {"n_train": 12, "n_test": 8, "n_fail_train": 5, "n_fail_test": 3, "clips_per_participant": 2},
    "preprocessing": {"mode": "mel_rgb", "n_mels": 64},
    "pretraining": {"n_per_class": 12},
})
m, root, cutoff = pipeline.prepare_data(cfg, out)
train_m, test_m = split_by_epoch(m, cutoff)
train_f = pipeline.preprocess_manifest(train_m, cfg, root)
test_f = pipeline.preprocess_manifest(test_m, cfg, root)

task_x = np.concatenate([f.x for f in train_f])
task_y = np.concatenate([[f.label.index] * len(f.x) for f in train_f])
task = Dataset("task", task_x, task_y)
pre = pipeline.pretraining_dataset(cfg, task_x.shape[1:])
print("pretraining set:", pre.x.shape, "classes", pre.n_classes)

stages = TrainConfig([
    {"dataset_id": "pretrain", "epochs": 15, "learning_rate": 3e-3},
    {"dataset_id": "task", "epochs": 30, "learning_rate": 3e-3, "freeze": ["conv"]},
], seed=0)
params, log = train([pre, task], stages, model_config=ModelConfig(task_x.shape[1:], n_classes=pre.n_classes))

for s in log.stages:
    print(f"{s.dataset_id:8s} head reset {s.head_reset!s:5s} loss {s.initial_loss:.3f} -> {s.final_loss:.3f}  train acc {s.train_accuracy:.2f}")

# conv weights leave stage two untouched
same = all(np.array_equal(log.stage_params[1][k], params[k]) for k in params if k.startswith("conv"))
print("conv layers frozen in stage two:", same)

for f in test_f:
    print(f"{f.clip_id:22s} {f.label.value:4s} p(fail) {predict_clip(params, f.x[0]):.2f}")
