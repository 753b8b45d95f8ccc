"""End-to-end analysis: ingest, windows, per-window model, heat map, sudden burrs, verification."""

import csv
import datetime as dt
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple

from burrscan import __version__
from burrscan.burrs import BurrMode
from burrscan.config import DEFAULT_ALPHA, DEFAULT_NOISE_Z, RunConfig
from burrscan.ingest import IngestStats, QueryRecord, SchemaError, load_records
from burrscan.spaces import SpaceKind, build_space
from burrscan.verification import (
    Classification,
    Thresholds,
    Verdict,
    Whitelist,
    load_thresholds,
    load_whitelist,
    verify_families,
)
from burrscan.windows import (
    DAY_US,
    BurrMatrix,
    SpaceAnalysis,
    SuddenBurrReport,
    WindowResult,
    analyze_space,
    analyze_windows,
    burr_matrix,
    cut_windows,
    sudden_burr_series,
    window_size_advice,
)

logger = logging.getLogger(__name__)

TOOL_NAME = "burrscan"


@dataclass(frozen=True)
class BurrProfileRow:
    """Who sits at one burr: distinct names, their visits and how many are whitelisted."""

    window: int
    length: int
    space: str
    name_types: int
    visits: int
    whitelisted: int


@dataclass
class RunReport:
    config: RunConfig
    ingest: IngestStats
    windows: List[WindowResult]
    matrix: BurrMatrix
    sudden: List[SuddenBurrReport]
    verdicts: List[Verdict]
    profile: List[BurrProfileRow] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    version: str = __version__
    generated_at: str = ""

    @property
    def has_tunnel(self) -> bool:
        return any(v.classification is Classification.TUNNEL for v in self.verdicts)

    def window_summary(self, result: WindowResult) -> dict:
        dnss, adnss = result.space_sizes
        return {
            "index": result.window.index,
            "start_us": result.window.start_us,
            "end_us": result.window.end_us,
            "records": result.record_count,
            "partial": result.partial,
            "unfit": result.unfit,
            "advice": result.advice.message if result.advice else None,
            "space_sizes": {"dnss": dnss, "adnss": adnss},
            "burr_lengths": sorted(result.burr_lengths),
            "fits": {
                kind.value: analysis.fit.to_fragment() if analysis.fit else None
                for kind, analysis in result.spaces.items()
            },
        }

    def to_dict(self) -> dict:
        return {
            "tool": TOOL_NAME,
            "version": self.version,
            "generated_at": self.generated_at,
            "config": self.config.echo(),
            "ingest": self.ingest.to_dict(),
            "warnings": list(self.warnings),
            "windows": [self.window_summary(r) for r in self.windows],
            "heatmap": {
                "windows": list(self.matrix.windows),
                "rows": [{"burr_length": length, "cells": self.matrix.cells[length]} for length in self.matrix.lengths],
            },
            "sudden_burrs": [row for report in self.sudden for row in report.to_rows()],
            "verdicts": [v.to_dict() for v in self.verdicts],
        }


def burr_profile(results: List[WindowResult], whitelist: Whitelist) -> List[BurrProfileRow]:
    rows = []
    for result in results:
        for burr in sorted(result.burrs, key=lambda b: b.length):
            domains = result.domains_at.get(burr.length, set())
            rows.append(BurrProfileRow(
                window=result.window.index,
                length=burr.length,
                space=burr.space or SpaceKind.ADNSS.value,
                name_types=len(domains),
                visits=sum(count for _, count in domains),
                whitelisted=sum(1 for qname, _ in domains if qname in whitelist),
            ))
    return rows


def _load_side_files(config: RunConfig) -> Tuple[Whitelist, Thresholds]:
    whitelist = load_whitelist(config.whitelist) if config.whitelist else Whitelist()
    thresholds = load_thresholds(config.thresholds) if config.thresholds else Thresholds()
    return whitelist, thresholds


def load_inputs(paths: List[Path]) -> Tuple[List[QueryRecord], IngestStats]:
    """Reads every input (capture or query log) into one time-ordered record list."""
    records: List[QueryRecord] = []
    stats = IngestStats()
    for path in paths:
        loaded, file_stats = load_records(path)
        records.extend(loaded)
        stats = stats.merge(file_stats)
    records.sort(key=lambda r: (r.timestamp_us, r.qname))
    return records, stats


def _sudden_domains(reports: List[SuddenBurrReport]) -> Dict[str, int]:
    domains: Dict[str, int] = {}
    for report in reports:
        for entry in report.entries:
            for qname, count in entry.new_domains:
                domains[qname] = domains.get(qname, 0) + count
    return domains


def run_analysis(config: RunConfig) -> RunReport:
    """
    Runs the whole detection pipeline for a validated configuration.

    Nothing is written here; see ``exporter.export_run``.

    Raises:
        EmptyInput: When the inputs hold no query at all.
        BadMagic, SchemaError, WhitelistError, ThresholdsError: From the readers.
    """
    whitelist, thresholds = _load_side_files(config)
    records, stats = load_inputs(config.inputs)
    logger.info("Loaded %d queries from %d inputs", len(records), len(config.inputs))

    warnings: List[str] = []
    duration_us = int(round(config.window_days * DAY_US))
    stride_us = int(round(config.stride_days * DAY_US)) if config.stride_days else None
    advice = window_size_advice(duration_us)
    if advice is not None:
        logger.warning(advice.message)
        warnings.append(advice.message)

    slices = cut_windows(records, duration_us, stride_us)
    for s in slices:
        if s.partial and s.advice is not None and s.advice != advice:
            message = f"window {s.window.index} is partial: {s.advice.message}"
            logger.warning(message)
            warnings.append(message)

    results = analyze_windows(slices, config.alpha, config.mode, config.noise_z, config.workers)
    for result in results:
        if result.unfit:
            reasons = "; ".join(f"{k.value}: {a.error}" for k, a in result.spaces.items())
            warnings.append(f"window {result.window.index} is unfit ({reasons})")

    matrix = burr_matrix(results)
    sudden = sudden_burr_series(results)
    domains = _sudden_domains(sudden)
    verdicts = verify_families(sorted(domains.items()), whitelist, thresholds)

    report = RunReport(
        config=config,
        ingest=stats,
        windows=results,
        matrix=matrix,
        sudden=sudden,
        verdicts=verdicts,
        profile=burr_profile(results, whitelist),
        warnings=warnings,
        generated_at=dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
    )
    logger.info("%d windows, %d sudden burr entries, %d tunnel families",
                len(results), sum(len(s.entries) for s in sudden),
                sum(1 for v in verdicts if v.classification is Classification.TUNNEL))
    return report


# --- Top-sites list --- #

def read_site_list(path: Path) -> List[QueryRecord]:
    """
    Reads a top-sites list, ``rank,domain`` rows or one domain per line.

    Each domain becomes one record at time zero; blank and ``#`` lines are skipped.

    Raises:
        SchemaError: When the list is not UTF-8 text.
    """
    records = []
    with path.open("r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        try:
            for row in reader:
                if not row or not row[0].strip() or row[0].lstrip().startswith("#"):
                    continue
                domain = row[-1].strip()
                if domain:
                    records.append(QueryRecord.from_raw(0, domain, 1))
        except UnicodeDecodeError as e:
            raise SchemaError(f"{path.name} is not UTF-8 text ({e.reason})", reader.line_num + 1) from e
    return records


def analyze_site_list(
    path: Path,
    alpha: float = DEFAULT_ALPHA,
    mode: BurrMode = "upper",
    noise_z: float = DEFAULT_NOISE_Z,
) -> SpaceAnalysis:
    """Fits the length law of a domain list (its DNSS) and finds its burrs."""
    space = build_space(read_site_list(path), SpaceKind.DNSS)
    logger.info("Site list %s: %d distinct names", path.name, space.capacity)
    return analyze_space(space, alpha, mode, noise_z)
