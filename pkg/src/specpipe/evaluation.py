"""Participant-level evaluation: majority voting, metrics, ROC/AUC, bootstrap CI.

Fail is the positive class throughout.  A participant whose clip votes are
tied is labelled Fail: in a screening setting a tie escalates to the unsafe
outcome.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, EmptyGroup, IdMismatch, IoFailure, SingleClassInput
from .manifest import Label

REPORT_SCHEMA = "specpipe.report/1"
DEFAULT_RESAMPLES = 2000
CLIP_THRESHOLD = 0.5


def _is_fail(label) -> bool:
    if isinstance(label, Label):
        return label is Label.FAIL
    if isinstance(label, str):
        return Label.parse(label) is Label.FAIL
    if isinstance(label, (bool, np.bool_)):
        return bool(label)
    return int(label) == 1


def _label(is_fail: bool) -> str:
    return Label.FAIL.value if is_fail else Label.PASS.value


@dataclass(frozen=True)
class ClipVote:
    clip_id: str
    label: str
    probability: float


@dataclass(frozen=True)
class ParticipantPrediction:
    participant_id: str
    clip_votes: tuple[ClipVote, ...]
    vote_label: str
    mean_prob: float

    @property
    def vote_fraction(self) -> float:
        return sum(v.label == "fail" for v in self.clip_votes) / len(self.clip_votes)


def aggregate_participant(participant_id: str, clips, threshold: float = CLIP_THRESHOLD) -> ParticipantPrediction:
    """Majority vote over one participant's clips.

    ``clips`` holds ``(clip_id, fail_probability)`` pairs or ClipVote
    objects; a clip votes Fail when its probability is at least
    ``threshold``.
    """
    votes = []
    for c in clips:
        if isinstance(c, ClipVote):
            votes.append(c)
        else:
            cid, prob = c
            votes.append(ClipVote(str(cid), _label(prob >= threshold), float(prob)))
    if not votes:
        raise EmptyGroup(f"participant {participant_id} has no clip predictions")
    n_fail = sum(_is_fail(v.label) for v in votes)
    n_pass = len(votes) - n_fail
    mean_prob = float(math.fsum(v.probability for v in votes) / len(votes))
    return ParticipantPrediction(participant_id, tuple(votes), _label(n_fail >= n_pass), mean_prob)


def aggregate(clip_predictions: Mapping[str, Sequence], threshold: float = CLIP_THRESHOLD) -> list[ParticipantPrediction]:
    """Aggregate ``{participant_id: [(clip_id, prob), ...]}`` in sorted id order."""
    return [aggregate_participant(pid, clip_predictions[pid], threshold) for pid in sorted(clip_predictions)]


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fn: int
    fp: int
    tn: int

    @property
    def n(self) -> int:
        return self.tp + self.fn + self.fp + self.tn


def _align(preds, truth) -> tuple[list, list]:
    if isinstance(preds, Mapping) or isinstance(truth, Mapping):
        if not (isinstance(preds, Mapping) and isinstance(truth, Mapping)):
            raise IdMismatch("pass both predictions and truth as mappings or both as sequences")
        if set(preds) != set(truth):
            missing = sorted(set(preds) ^ set(truth))
            raise IdMismatch(f"participant ids differ: {missing[:5]}")
        ids = sorted(preds)
        return [preds[i] for i in ids], [truth[i] for i in ids]
    preds, truth = list(preds), list(truth)
    if len(preds) != len(truth):
        raise IdMismatch(f"{len(preds)} predictions vs {len(truth)} truth labels")
    return preds, truth


def confusion(preds, truth) -> ConfusionMatrix:
    """Confusion counts with Fail as positive.  Mappings are aligned by id."""
    p, t = _align(preds, truth)
    tp = fn = fp = tn = 0
    for a, b in zip(p, t):
        pf, tf = _is_fail(a), _is_fail(b)
        if tf and pf:
            tp += 1
        elif tf:
            fn += 1
        elif pf:
            fp += 1
        else:
            tn += 1
    return ConfusionMatrix(tp, fn, fp, tn)


@dataclass(frozen=True)
class MetricSet:
    """Ratios that are 0/0 are ``None``."""

    sensitivity: float | None
    specificity: float | None
    precision: float | None
    f1: float | None
    accuracy: float | None
    auc: float | None = None
    auc_ci: tuple[float, float] | None = None


def _ratio(a: int, b: int) -> float | None:
    return a / b if b else None


def metrics(cm: ConfusionMatrix, auc: float | None = None, auc_ci=None) -> MetricSet:
    sens = _ratio(cm.tp, cm.tp + cm.fn)
    spec = _ratio(cm.tn, cm.tn + cm.fp)
    prec = _ratio(cm.tp, cm.tp + cm.fp)
    f1 = 2 * prec * sens / (prec + sens) if prec is not None and sens is not None and prec + sens > 0 else None
    acc = _ratio(cm.tp + cm.tn, cm.n)
    ci = tuple(auc_ci) if auc_ci is not None else None
    return MetricSet(sens, spec, prec, f1, acc, auc, ci)


def _split_scores(scores, truth):
    s = np.asarray(scores, dtype=np.float64)
    t = np.array([_is_fail(v) for v in truth], dtype=bool)
    if len(s) != len(t):
        raise IdMismatch(f"{len(s)} scores vs {len(t)} truth labels")
    pos, neg = s[t], s[~t]
    if len(pos) == 0 or len(neg) == 0:
        raise SingleClassInput("ROC needs at least one Fail and one Pass participant")
    return s, t, pos, neg


@dataclass(frozen=True)
class RocPoint:
    fpr: float
    tpr: float
    threshold: float | None  # None for the initial (0, 0) point, i.e. +inf


def roc_curve(scores, truth) -> list[RocPoint]:
    """ROC points for thresholds at every distinct score, descending.

    A participant is called Fail when its score is >= the threshold.
    """
    s, t, pos, neg = _split_scores(scores, truth)
    order = np.argsort(-s, kind="stable")
    s, t = s[order], t[order]
    tps = np.cumsum(t)
    fps = np.cumsum(~t)
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    pts = [RocPoint(0.0, 0.0, None)]
    for i in last:
        pts.append(RocPoint(float(fps[i] / len(neg)), float(tps[i] / len(pos)), float(s[i])))
    return pts


def trapezoid_auc(points: Sequence[RocPoint]) -> float:
    x = np.array([p.fpr for p in points])
    y = np.array([p.tpr for p in points])
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2.0))


def mann_whitney_auc(scores, truth) -> float:
    """Pairwise AUC: a Fail scoring above a Pass counts 1, a tie 0.5."""
    _, _, pos, neg = _split_scores(scores, truth)
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return float(wins / (len(pos) * len(neg)))


def roc_auc(scores, truth) -> tuple[list[RocPoint], float]:
    points = roc_curve(scores, truth)
    return points, trapezoid_auc(points)


def _batched_auc(pos: np.ndarray, neg: np.ndarray) -> np.ndarray:
    """AUC of each row pair of (R, n_pos) and (R, n_neg) score matrices."""
    out = np.empty(len(pos))
    step = max(1, 4_000_000 // (pos.shape[1] * neg.shape[1]))
    for s in range(0, len(pos), step):
        p = pos[s : s + step, :, None]
        n = neg[s : s + step, None, :]
        wins = (p > n).sum(axis=(1, 2)) + 0.5 * (p == n).sum(axis=(1, 2))
        out[s : s + step] = wins / (pos.shape[1] * neg.shape[1])
    return out


def bootstrap_aucs(scores, truth, n_resamples: int = DEFAULT_RESAMPLES, seed: int = 0) -> np.ndarray:
    _, _, pos, neg = _split_scores(scores, truth)
    rng = np.random.default_rng(seed)
    ip = rng.integers(0, len(pos), size=(n_resamples, len(pos)))
    ineg = rng.integers(0, len(neg), size=(n_resamples, len(neg)))
    return _batched_auc(pos[ip], neg[ineg])


def bootstrap_ci(scores, truth, n_resamples: int = DEFAULT_RESAMPLES, level: float = 0.95, seed: int = 0) -> tuple[float, float]:
    """Stratified percentile bootstrap interval for the AUC.

    Fail and Pass scores are resampled separately with replacement, so
    every resample keeps both classes.
    """
    if n_resamples < 100:
        raise ConfigError("n_resamples must be at least 100")
    if not 0 < level < 1:
        raise ConfigError("level must lie in (0, 1)")
    aucs = bootstrap_aucs(scores, truth, n_resamples, seed)
    lo, hi = np.percentile(aucs, [100 * (1 - level) / 2, 100 * (1 + level) / 2])
    return float(lo), float(hi)


@dataclass
class EvaluationReport:
    participants: list[ParticipantPrediction]
    truth: dict[str, str]
    confusion: ConfusionMatrix
    metrics: MetricSet
    roc: list[RocPoint]
    config_hash: str
    seed: int
    score: str = "mean_prob"
    ci_level: float = 0.95
    n_resamples: int = DEFAULT_RESAMPLES
    extra: dict = field(default_factory=dict)
    schema: str = REPORT_SCHEMA

    def to_dict(self) -> dict:
        return {
            "schema": self.schema,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "score": self.score,
            "ci_level": self.ci_level,
            "n_resamples": self.n_resamples,
            "participants": [
                {
                    "participant_id": p.participant_id,
                    "truth": self.truth[p.participant_id],
                    "vote_label": p.vote_label,
                    "mean_prob": p.mean_prob,
                    "clip_votes": [asdict(v) for v in p.clip_votes],
                }
                for p in self.participants
            ],
            "confusion": asdict(self.confusion),
            "metrics": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self.metrics).items()},
            "roc": [asdict(r) for r in self.roc],
            "extra": self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationReport":
        if d.get("schema") != REPORT_SCHEMA:
            raise ValueError(f"unsupported report schema {d.get('schema')!r}")
        parts = [
            ParticipantPrediction(
                p["participant_id"],
                tuple(ClipVote(**v) for v in p["clip_votes"]),
                p["vote_label"],
                p["mean_prob"],
            )
            for p in d["participants"]
        ]
        m = dict(d["metrics"])
        if m.get("auc_ci") is not None:
            m["auc_ci"] = tuple(m["auc_ci"])
        return cls(
            participants=parts,
            truth={p["participant_id"]: p["truth"] for p in d["participants"]},
            confusion=ConfusionMatrix(**d["confusion"]),
            metrics=MetricSet(**m),
            roc=[RocPoint(**r) for r in d["roc"]],
            config_hash=d["config_hash"],
            seed=d["seed"],
            score=d["score"],
            ci_level=d["ci_level"],
            n_resamples=d["n_resamples"],
            extra=d.get("extra", {}),
        )

    @classmethod
    def from_json(cls, text: str) -> "EvaluationReport":
        return cls.from_dict(json.loads(text))

    def write(self, path) -> None:
        try:
            Path(path).write_text(self.to_json())
        except OSError as exc:
            raise IoFailure(f"cannot write report {path}: {exc}") from exc


def participant_scores(preds: Sequence[ParticipantPrediction], score: str = "mean_prob") -> np.ndarray:
    if score == "mean_prob":
        return np.array([p.mean_prob for p in preds])
    if score == "vote_fraction":
        return np.array([p.vote_fraction for p in preds])
    raise ValueError(f"score must be 'mean_prob' or 'vote_fraction', got {score!r}")


def build_report(
    clip_predictions: Mapping[str, Sequence],
    truth: Mapping[str, object],
    config_hash: str,
    seed: int,
    n_resamples: int = DEFAULT_RESAMPLES,
    level: float = 0.95,
    score: str = "mean_prob",
    threshold: float = CLIP_THRESHOLD,
    extra: dict | None = None,
) -> EvaluationReport:
    """Aggregate clip predictions and compute every participant-level statistic."""
    preds = aggregate(clip_predictions, threshold)
    ids = [p.participant_id for p in preds]
    if set(ids) != set(truth):
        raise IdMismatch("predicted and true participant sets differ")
    truth_lab = {pid: _label(_is_fail(truth[pid])) for pid in ids}
    cm = confusion({p.participant_id: p.vote_label for p in preds}, truth_lab)
    scores = participant_scores(preds, score)
    y = [truth_lab[pid] for pid in ids]
    try:
        points, auc = roc_auc(scores, y)
        ci = bootstrap_ci(scores, y, n_resamples, level, seed)
    except SingleClassInput:
        points, auc, ci = [], None, None
    return EvaluationReport(
        participants=preds,
        truth=truth_lab,
        confusion=cm,
        metrics=metrics(cm, auc, ci),
        roc=points,
        config_hash=config_hash,
        seed=seed,
        score=score,
        ci_level=level,
        n_resamples=n_resamples,
        extra=dict(extra or {}),
    )


def roc_csv(points: Sequence[RocPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["fpr", "tpr", "threshold"])
    for p in points:
        w.writerow([repr(p.fpr), repr(p.tpr), "inf" if p.threshold is None else repr(p.threshold)])
    return buf.getvalue()
