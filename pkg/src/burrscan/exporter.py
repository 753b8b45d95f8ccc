"""Writes the analysis artifacts (CSV plot data, JSON reports) and reads a report back."""

import csv
import json
import logging
from pathlib import Path
from typing import Iterable, List, Sequence

from burrscan.burrs import band_rows
from burrscan.config import BurrscanError
from burrscan.pipeline import BurrProfileRow, RunReport
from burrscan.spaces import LengthHistogram
from burrscan.windows import BurrMatrix, SpaceAnalysis, SuddenBurrReport, WindowResult

logger = logging.getLogger(__name__)

REPORT_FILE = "report.json"
FITS_FILE = "fits.json"
HEATMAP_FILE = "heatmap.csv"
SUDDEN_FILE = "sudden_burrs.json"
PROFILE_FILE = "burr_profile.csv"
VERDICTS_FILE = "verdicts.json"
METRICS_FILE = "metrics.csv"


class ReportError(BurrscanError):
    """Custom exception for report directories that cannot be read back."""
    pass


def _write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _write_json(path: Path, payload) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")
    return path


def write_histogram_csv(hist: LengthHistogram, path: Path) -> Path:
    """``length,count``, one row per nonzero length."""
    return _write_rows(path, ("length", "count"), ((x, hist.counts[x]) for x in hist.lengths))


def write_band_csv(analysis: SpaceAnalysis, path: Path) -> Path:
    """``length,observed,expected,lower,upper,is_burr`` over the band."""
    rows = (
        (x, observed, f"{expected:.6f}", f"{lower:.6f}", f"{upper:.6f}", flag)
        for x, observed, expected, lower, upper, flag in band_rows(analysis.histogram, analysis.band, analysis.burrs)
    )
    return _write_rows(path, ("length", "observed", "expected", "lower", "upper", "is_burr"), rows)


def write_heatmap_csv(matrix: BurrMatrix, path: Path) -> Path:
    header = ["burr_length"] + [str(w) for w in matrix.windows]
    return _write_rows(path, header, ([length, *matrix.cells[length]] for length in matrix.lengths))


def write_sudden_json(reports: Sequence[SuddenBurrReport], path: Path) -> Path:
    return _write_json(path, [row for report in reports for row in report.to_rows()])


def write_profile_csv(rows: Sequence[BurrProfileRow], path: Path) -> Path:
    return _write_rows(
        path,
        ("window", "length", "space", "name_types", "visits", "whitelisted"),
        ((r.window, r.length, r.space, r.name_types, r.visits, r.whitelisted) for r in rows),
    )


def fit_entries(results: Sequence[WindowResult]) -> List[dict]:
    entries = []
    for result in results:
        for kind, analysis in result.spaces.items():
            entry = {
                "window": result.window.index,
                "space": kind.value,
                "n": analysis.capacity,
                "effective_n": analysis.effective_n,
                "dispersion": analysis.histogram.dispersion,
                "fit": analysis.fit.to_fragment() if analysis.fit else None,
                "d": analysis.band.d if analysis.band else None,
                "ks": analysis.ks.to_dict() if analysis.ks else None,
                "error": analysis.error,
            }
            entries.append(entry)
    return entries


def export_run(report: RunReport, out_dir: Path) -> tuple[bool, str]:
    """
    Writes every artifact of an analysis run into ``out_dir``.

    Returns:
        A tuple containing:
        - bool: True if every file was written.
        - str: A message with the artifact count or the error encountered.
    """
    written: List[Path] = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for result in report.windows:
            for kind, analysis in result.spaces.items():
                stem = f"window_{result.window.index:03d}_{kind.value}.csv"
                if analysis.histogram.n:
                    written.append(write_histogram_csv(analysis.histogram, out_dir / "histograms" / stem))
                if analysis.band is not None:
                    written.append(write_band_csv(analysis, out_dir / "bands" / stem))
        written.append(_write_json(out_dir / FITS_FILE, fit_entries(report.windows)))
        written.append(write_heatmap_csv(report.matrix, out_dir / HEATMAP_FILE))
        written.append(write_sudden_json(report.sudden, out_dir / SUDDEN_FILE))
        written.append(write_profile_csv(report.profile, out_dir / PROFILE_FILE))
        written.append(_write_json(out_dir / VERDICTS_FILE, [v.to_dict() for v in report.verdicts]))
        written.append(_write_json(out_dir / REPORT_FILE, report.to_dict()))
    except OSError as e:
        return False, f"File system error writing report: {e}"
    logger.info("Wrote %d artifacts to %s", len(written), out_dir)
    return True, f"Wrote {len(written)} artifacts to {out_dir}"


def export_site_fit(analysis: SpaceAnalysis, out_dir: Path, stem: str) -> tuple[bool, str]:
    """Fit JSON, histogram CSV and band CSV of a single space (top-sites lists)."""
    try:
        _write_json(out_dir / f"{stem}_fit.json", {
            "n": analysis.capacity,
            "fit": analysis.fit.to_fragment() if analysis.fit else None,
            "d": analysis.band.d if analysis.band else None,
            "ks": analysis.ks.to_dict() if analysis.ks else None,
            "burrs": [b.to_dict() for b in analysis.burrs],
            "error": analysis.error,
        })
        if analysis.histogram.n:
            write_histogram_csv(analysis.histogram, out_dir / f"{stem}_histogram.csv")
        if analysis.band is not None:
            write_band_csv(analysis, out_dir / f"{stem}_band.csv")
    except OSError as e:
        return False, f"File system error writing fit: {e}"
    return True, f"Wrote fit of {analysis.capacity} names to {out_dir}"


def write_metrics_csv(rows: Iterable[Sequence], path: Path) -> Path:
    """``polarity,metric,value``"""
    return _write_rows(path, ("polarity", "metric", "value"), rows)


def load_report(report_dir: Path) -> dict:
    """
    Reads ``report.json`` of an analysis directory.

    Raises:
        ReportError: When the directory holds no readable report.
    """
    path = report_dir / REPORT_FILE
    try:
        with path.open("r", encoding="utf-8") as f:
            report = json.load(f)
    except (OSError, ValueError) as e:
        raise ReportError(f"cannot read report {path}: {e}") from e
    for key in ("verdicts", "sudden_burrs", "windows"):
        if key not in report:
            raise ReportError(f"{path} lacks '{key}'")
    return report
