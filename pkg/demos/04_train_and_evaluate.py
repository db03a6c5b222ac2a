"""
Train a small CNN and score participants
========================================

Runs the whole pipeline on a reduced corpus: three-FFT mel inputs, a
compact CNN trained with weighted cross-entropy plus a pairwise contrastive
term, then majority votes per participant, ROC AUC and a bootstrap CI.
"""
import sys
from pathlib import Path

from specpipe import pipeline

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/run_mono3")

cfg = pipeline.resolve_config({
    "corpus": {"n_train": 16, "n_test": 10, "n_fail_train": 7, "n_fail_test": 4, "clips_per_participant": 3},
    "preprocessing": {"mode": "mel_mono3"},
    "training": {"stages": [{"dataset_id": "task", "epochs": 40, "learning_rate": 3e-3, "lam": 0.5}]},
    "evaluation": {"n_resamples": 1000},
})
res = pipeline.run(cfg, out, jobs=1)
rep = res.report

for p in rep.participants:
    probs = " ".join(f"{v.probability:.2f}" for v in p.clip_votes)
    print(f"{p.participant_id}  truth {rep.truth[p.participant_id]:4s}  vote {p.vote_label:4s}  clips [{probs}]")

m = rep.metrics
print(f"\nAUC {m.auc:.3f}  95% CI {m.auc_ci[0]:.3f}-{m.auc_ci[1]:.3f}")
print(f"sensitivity {m.sensitivity:.2f}  specificity {m.specificity:.2f}")
print("losses per epoch:", [round(v, 3) for v in rep.extra["train_log"]["stages"][0]["epoch_losses"]])
print("artifacts:", sorted(p.name for p in out.iterdir()))
