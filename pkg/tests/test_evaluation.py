import itertools
import json
from decimal import ROUND_HALF_UP, Decimal

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specpipe.errors import ConfigError, EmptyGroup, IdMismatch, SingleClassInput
from specpipe.evaluation import (
    ClipVote,
    ConfusionMatrix,
    EvaluationReport,
    aggregate_participant,
    bootstrap_ci,
    build_report,
    confusion,
    mann_whitney_auc,
    metrics,
    roc_auc,
    roc_csv,
)


def r2(v):
    return float(Decimal(repr(float(v))).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def test_vote_examples():
    votes = lambda labels: [ClipVote(f"c{i}", lab, 0.5) for i, lab in enumerate(labels)]
    assert aggregate_participant("p", votes(["fail", "fail", "pass"])).vote_label == "fail"
    assert aggregate_participant("p", votes(["fail", "pass"])).vote_label == "fail"
    assert aggregate_participant("p", votes(["pass", "pass", "fail"])).vote_label == "pass"
    p = aggregate_participant("p", [("a", 0.2), ("b", 0.4), ("c", 0.9)])
    assert p.mean_prob == pytest.approx(0.5, abs=1e-15)
    assert p.vote_label == "pass" and p.vote_fraction == pytest.approx(1 / 3)
    with pytest.raises(EmptyGroup):
        aggregate_participant("p", [])


def test_confusion_examples():
    truth = ["fail"] * 9 + ["pass"] * 19
    assert confusion(truth, truth) == ConfusionMatrix(9, 0, 0, 19)
    assert confusion(["pass"] * 28, truth) == ConfusionMatrix(0, 9, 0, 19)
    preds = ["fail"] * 7 + ["pass"] * 2 + ["pass"] * 19
    assert confusion(preds, truth) == ConfusionMatrix(7, 2, 0, 19)
    ids = [f"P{i:02d}" for i in range(28)]
    shuffled = dict(zip(ids[::-1], preds[::-1]))
    assert confusion(shuffled, dict(zip(ids, truth))) == ConfusionMatrix(7, 2, 0, 19)
    with pytest.raises(IdMismatch):
        confusion({"a": "fail"}, {"b": "fail"})
    with pytest.raises(IdMismatch):
        confusion(["fail"], ["fail", "pass"])


def test_table_row_confusion_is_consistent():
    # brute force: every (tp, fn, fp, tn) over 28 participants matching the row's 2-dp metrics
    hits = []
    for tp, fn, fp in itertools.product(range(29), repeat=3):
        tn = 28 - tp - fn - fp
        if tn < 0 or tp + fn == 0 or tp + fp == 0:
            continue
        m = metrics(ConfusionMatrix(tp, fn, fp, tn))
        if None in (m.f1, m.specificity):
            continue
        if (r2(m.sensitivity), r2(m.specificity), r2(m.precision), r2(m.f1)) == (0.78, 1.0, 1.0, 0.88):
            hits.append((tp, fn, fp, tn))
    assert (7, 2, 0, 19) in hits
    # the test split has 9 Fail participants, which pins the matrix down
    assert [h for h in hits if h[0] + h[1] == 9] == [(7, 2, 0, 19)]


def test_metric_examples():
    m = metrics(ConfusionMatrix(7, 2, 0, 19))
    assert (r2(m.sensitivity), r2(m.specificity), r2(m.precision), r2(m.f1)) == (0.78, 1.0, 1.0, 0.88)
    assert m.f1 == pytest.approx(0.875, abs=1e-15)
    m = metrics(ConfusionMatrix(0, 0, 0, 11))
    assert m.sensitivity is None and m.precision is None and m.f1 is None and m.specificity == 1.0
    m = metrics(ConfusionMatrix(4, 0, 0, 6))
    assert (m.sensitivity, m.specificity, m.precision, m.f1, m.accuracy) == (1.0, 1.0, 1.0, 1.0, 1.0)


def test_auc_examples():
    assert roc_auc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0])[1] == 1.0
    assert roc_auc([0.3] * 6, [1, 0, 1, 0, 0, 1])[1] == 0.5
    scores, truth = [0.9, 0.8, 0.7, 0.85], [1, 1, 0, 0]
    assert roc_auc(scores, truth)[1] == 0.75
    assert mann_whitney_auc(scores, truth) == 0.75
    with pytest.raises(SingleClassInput):
        roc_auc([0.1, 0.2], [1, 1])


def test_roc_points_and_csv():
    pts, _ = roc_auc([0.9, 0.8, 0.7, 0.85], [1, 1, 0, 0])
    assert [(p.fpr, p.tpr) for p in pts] == [(0, 0), (0, 0.5), (0.5, 0.5), (0.5, 1), (1, 1)]
    lines = roc_csv(pts).splitlines()
    assert lines[0] == "fpr,tpr,threshold" and lines[1].endswith("inf") and len(lines) == 6


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=4, max_size=40), st.data())
def test_monotone_invariance(raw, data):
    truth = data.draw(st.lists(st.booleans(), min_size=len(raw), max_size=len(raw)))
    if all(truth) or not any(truth):
        truth[0] = not truth[0]
    s = np.array(raw, dtype=float) / 6
    pts, auc = roc_auc(s, truth)
    pts2, auc2 = roc_auc(np.exp(3 * s) - 7, truth)
    assert auc == auc2
    assert [(p.fpr, p.tpr) for p in pts] == [(p.fpr, p.tpr) for p in pts2]


def test_ordering_invariance(rng):
    s = rng.random(30)
    y = rng.integers(0, 2, 30)
    y[:2] = [0, 1]
    perm = rng.permutation(30)
    assert roc_auc(s, y)[1] == roc_auc(s[perm], y[perm])[1]
    preds = ["fail" if v > 0.5 else "pass" for v in s]
    assert confusion(preds, list(y)) == confusion([preds[i] for i in perm], list(y[perm]))


def test_bootstrap_examples(rng):
    s = rng.random(20)
    y = np.r_[np.ones(8), np.zeros(12)]
    a = bootstrap_ci(s, y, 500, seed=3)
    assert a == bootstrap_ci(s, y, 500, seed=3)
    assert 0 <= a[0] <= a[1] <= 1
    assert bootstrap_ci([0.9] * 5 + [0.1] * 7, [1] * 5 + [0] * 7, 200, seed=0) == (1.0, 1.0)
    with pytest.raises(ConfigError):
        bootstrap_ci(s, y, 10)


def test_bootstrap_matches_naive_loop(rng):
    s = rng.random(15).round(1)
    y = np.r_[np.ones(6), np.zeros(9)]
    from specpipe.evaluation import bootstrap_aucs
    fast = bootstrap_aucs(s, y, 150, seed=9)
    g = np.random.default_rng(9)
    pos, neg = s[y == 1], s[y == 0]
    ip = g.integers(0, 6, size=(150, 6))
    ineg = g.integers(0, 9, size=(150, 9))
    slow = [mann_whitney_auc(np.r_[pos[a], neg[b]], np.r_[np.ones(6), np.zeros(9)]) for a, b in zip(ip, ineg)]
    np.testing.assert_allclose(fast, slow, rtol=0, atol=1e-15)


def _clips(rng, n=12):
    preds, truth = {}, {}
    for i in range(n):
        pid = f"P{i:03d}"
        fail = i % 3 == 0
        truth[pid] = "fail" if fail else "pass"
        preds[pid] = [(f"{pid}_c{j}", float(np.clip(rng.normal(0.65 if fail else 0.35, 0.2), 0, 1))) for j in range(5)]
    return preds, truth


def test_report_round_trip_and_consistency(tmp_path, rng):
    preds, truth = _clips(rng)
    rep = build_report(preds, truth, "abc123", seed=5, n_resamples=300)
    back = EvaluationReport.from_json(rep.to_json())
    assert back.to_json() == rep.to_json()
    d = json.loads(rep.to_json())
    votes = {p["participant_id"]: p["vote_label"] for p in d["participants"]}
    cm = confusion(votes, {p["participant_id"]: p["truth"] for p in d["participants"]})
    m = metrics(cm)
    assert d["confusion"] == {"tp": cm.tp, "fn": cm.fn, "fp": cm.fp, "tn": cm.tn}
    assert d["metrics"]["sensitivity"] == m.sensitivity and d["metrics"]["specificity"] == m.specificity
    assert d["config_hash"] == "abc123" and d["seed"] == 5
    rep.write(tmp_path / "r.json")
    assert (tmp_path / "r.json").read_text() == rep.to_json()
    assert build_report(preds, truth, "abc123", seed=5, n_resamples=300).to_json() == rep.to_json()
