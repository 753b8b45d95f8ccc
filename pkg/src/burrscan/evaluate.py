"""Scores an analysis report against per-name labels."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Set, Tuple

from burrscan.config import BurrscanError
from burrscan.exporter import METRICS_FILE, load_report, write_metrics_csv
from burrscan.synth import BENIGN, TUNNEL, ConfusionCounts, confusion_metrics, read_labels

logger = logging.getLogger(__name__)

NORMAL_POSITIVE = "normal_positive"
TUNNEL_POSITIVE = "tunnel_positive"


class UnlabeledName(BurrscanError):
    """Custom exception for reported names missing from the labels."""

    def __init__(self, names: Sequence[str]):
        self.names = sorted(names)
        shown = ", ".join(self.names[:10])
        more = f" (+{len(self.names) - 10} more)" if len(self.names) > 10 else ""
        super().__init__(f"{len(self.names)} reported names have no label: {shown}{more}")


@dataclass(frozen=True)
class EvalResult:
    counts: ConfusionCounts  # normal taken as positive
    metrics: Dict[str, Dict[str, float]]

    def rows(self) -> List[Tuple[str, str, float]]:
        rows = []
        for polarity, counts in ((NORMAL_POSITIVE, self.counts), (TUNNEL_POSITIVE, self.counts.inverted())):
            for name in ("tp", "fn", "fp", "tn"):
                rows.append((polarity, name, float(getattr(counts, name))))
            for name, value in self.metrics[polarity].items():
                rows.append((polarity, name, value))
        return rows


def flagged_names(report: dict, classes: Iterable[str] = (TUNNEL,)) -> Set[str]:
    wanted = set(classes)
    return {
        qname
        for verdict in report["verdicts"]
        if verdict["classification"] in wanted
        for qname in verdict["members"]
    }


def reported_names(report: dict) -> Set[str]:
    return {d["qname"] for row in report["sudden_burrs"] for d in row["new_domains"]}


def confusion_from(labels: Dict[str, str], flagged: Set[str]) -> ConfusionCounts:
    """Confusion counts over every labeled name, normal taken as the positive class."""
    tp = fn = fp = tn = 0
    for qname, label in labels.items():
        predicted_tunnel = qname in flagged
        if label == BENIGN:
            if predicted_tunnel:
                fn += 1
            else:
                tp += 1
        else:
            if predicted_tunnel:
                tn += 1
            else:
                fp += 1
    return ConfusionCounts(tp=tp, fn=fn, fp=fp, tn=tn)


def evaluate(report: dict, labels: Dict[str, str], classes: Iterable[str] = (TUNNEL,)) -> EvalResult:
    """
    Metrics of a report in both polarities.

    Raises:
        UnlabeledName: When a name in the report's sudden burrs has no label.
    """
    missing = reported_names(report) - labels.keys()
    if missing:
        raise UnlabeledName(missing)
    counts = confusion_from(labels, flagged_names(report, classes))
    return EvalResult(
        counts=counts,
        metrics={
            NORMAL_POSITIVE: confusion_metrics(counts),
            TUNNEL_POSITIVE: confusion_metrics(counts.inverted()),
        },
    )


def evaluate_run(report_dir: Path, labels_path: Path, classes: Iterable[str] = (TUNNEL,)) -> EvalResult:
    """Scores ``report_dir`` against ``labels_path`` and writes ``metrics.csv`` next to the report."""
    result = evaluate(load_report(report_dir), read_labels(labels_path), classes)
    write_metrics_csv(result.rows(), report_dir / METRICS_FILE)
    logger.info("Wrote %s", report_dir / METRICS_FILE)
    return result
