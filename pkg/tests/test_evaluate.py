import csv
import json

import pytest

from burrscan.evaluate import (
    NORMAL_POSITIVE,
    TUNNEL_POSITIVE,
    UnlabeledName,
    confusion_from,
    evaluate,
    evaluate_run,
    flagged_names,
)
from burrscan.exporter import METRICS_FILE, REPORT_FILE
from burrscan.synth import BENIGN, TUNNEL, ConfusionCounts, write_labels

TUNNEL_NAMES = [f"t{i}.b.tunnel.com" for i in range(5)]
BENIGN_NAMES = [f"www.site{i}.com" for i in range(15)]
LABELS = {**{q: TUNNEL for q in TUNNEL_NAMES}, **{q: BENIGN for q in BENIGN_NAMES}}


def _report(verdicts, reported=()):
    return {
        "windows": [],
        "sudden_burrs": [
            {"from": 0, "to": 1, "length": 16, "new_domains": [{"qname": q, "count": 1} for q in reported]}
        ],
        "verdicts": verdicts,
    }


def _verdict(family, classification, members):
    return {"family": family, "classification": classification, "reasons": [], "members": list(members)}


def test_perfect_detection():
    report = _report([_verdict("tunnel.com", TUNNEL, TUNNEL_NAMES)], TUNNEL_NAMES)
    result = evaluate(report, LABELS)
    assert result.counts == ConfusionCounts(tp=15, fn=0, fp=0, tn=5)
    for polarity in (NORMAL_POSITIVE, TUNNEL_POSITIVE):
        assert result.metrics[polarity] == {"accuracy": 1.0, "precision": 1.0, "recall": 1.0, "f1": 1.0}


def test_silent_detector():
    result = evaluate(_report([]), LABELS)
    assert result.counts == ConfusionCounts(tp=15, fn=0, fp=5, tn=0)
    assert result.metrics[TUNNEL_POSITIVE]["recall"] == 0.0
    assert "precision" not in result.metrics[TUNNEL_POSITIVE]
    assert "f1" not in result.metrics[TUNNEL_POSITIVE]
    assert result.metrics[NORMAL_POSITIVE]["precision"] == pytest.approx(0.75)


def test_hand_counted_mix():
    flagged = set(TUNNEL_NAMES[:3]) | set(BENIGN_NAMES[:2])
    counts = confusion_from(LABELS, flagged)
    assert counts == ConfusionCounts(tp=13, fn=2, fp=2, tn=3)
    assert counts.total == 20

    report = _report([_verdict("mixed", TUNNEL, sorted(flagged))], sorted(flagged))
    metrics = evaluate(report, LABELS).metrics
    assert metrics[NORMAL_POSITIVE]["accuracy"] == pytest.approx(16 / 20)
    assert metrics[NORMAL_POSITIVE]["recall"] == pytest.approx(13 / 15)
    assert metrics[TUNNEL_POSITIVE]["precision"] == pytest.approx(3 / 5)
    assert metrics[TUNNEL_POSITIVE]["recall"] == pytest.approx(3 / 5)


def test_suspicious_counts_only_when_asked():
    report = _report([_verdict("tunnel.com", "suspicious", TUNNEL_NAMES)], TUNNEL_NAMES)
    assert flagged_names(report) == set()
    assert flagged_names(report, (TUNNEL, "suspicious")) == set(TUNNEL_NAMES)
    assert evaluate(report, LABELS, (TUNNEL, "suspicious")).counts.tn == 5


def test_unlabeled_reported_name():
    unknown = [f"x{i}.unknown.net" for i in range(12)]
    with pytest.raises(UnlabeledName) as excinfo:
        evaluate(_report([], TUNNEL_NAMES + unknown), LABELS)
    assert excinfo.value.names == sorted(unknown)
    assert "+2 more" in str(excinfo.value)


def test_rows_cover_both_polarities():
    result = evaluate(_report([_verdict("tunnel.com", TUNNEL, TUNNEL_NAMES)], TUNNEL_NAMES), LABELS)
    rows = result.rows()
    assert rows[:4] == [(NORMAL_POSITIVE, "tp", 15.0), (NORMAL_POSITIVE, "fn", 0.0),
                        (NORMAL_POSITIVE, "fp", 0.0), (NORMAL_POSITIVE, "tn", 5.0)]
    assert (TUNNEL_POSITIVE, "tp", 5.0) in rows
    assert len(rows) == 16


def test_evaluate_run_writes_metrics(tmp_path):
    report = _report([_verdict("tunnel.com", TUNNEL, TUNNEL_NAMES)], TUNNEL_NAMES)
    (tmp_path / REPORT_FILE).write_text(json.dumps(report), encoding="utf-8")
    write_labels(LABELS, tmp_path / "labels.csv")

    result = evaluate_run(tmp_path, tmp_path / "labels.csv")
    assert result.metrics[TUNNEL_POSITIVE]["f1"] == 1.0
    with (tmp_path / METRICS_FILE).open(encoding="utf-8") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["polarity", "metric", "value"]
    assert ["tunnel_positive", "recall", "1.0"] in rows
