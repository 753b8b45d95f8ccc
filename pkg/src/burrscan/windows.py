"""Time windows, per-window burr analysis, the burr heat map and sudden-burr difference sets."""

import bisect
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

from burrscan.burrs import BurrMode, BurrPoint, ToleranceBand, delineation_band, detect_burrs, burr_domains
from burrscan.config import DEFAULT_ALPHA, DEFAULT_NOISE_Z, BurrscanError
from burrscan.fitting import DegenerateFit, GaussianFit, InsufficientSupport, KsConformance, ks_conformance, fit_gaussian
from burrscan.ingest import QueryRecord
from burrscan.spaces import DomainSampleSpace, LengthHistogram, SpaceKind, build_space, length_histogram

logger = logging.getLogger(__name__)

DAY_US = 86_400 * 1_000_000
PARTIAL_COVERAGE = 0.99

WARNING_DAYS = 7
CAUTION_DAYS = 14
WARNING_TEXT = "window shorter than 7 days: the length distribution is difficult to fit"
CAUTION_TEXT = "window shorter than 14 days: fits may be unstable"


class EmptyInput(BurrscanError):
    """Custom exception for windowing a stream without records."""
    pass


class NonAdjacentWindows(BurrscanError):
    """Custom exception for difference sets between windows that are not consecutive."""
    pass


@dataclass(frozen=True)
class TimeWindow:
    """Half-open interval ``[start_us, end_us)``."""

    index: int
    start_us: int
    end_us: int

    def __post_init__(self):
        if self.end_us <= self.start_us:
            raise ValueError(f"empty window [{self.start_us}, {self.end_us})")

    @property
    def duration_us(self) -> int:
        return self.end_us - self.start_us

    def contains(self, timestamp_us: int) -> bool:
        return self.start_us <= timestamp_us < self.end_us


@dataclass(frozen=True)
class WindowAdvice:
    level: str  # "warning" or "caution"
    message: str


@dataclass
class WindowSlice:
    window: TimeWindow
    records: List[QueryRecord]
    partial: bool = False
    advice: Optional[WindowAdvice] = None


def window_size_advice(duration_us: int) -> Optional[WindowAdvice]:
    """Warning below 7 days of traffic, caution below 14, nothing otherwise."""
    if duration_us < WARNING_DAYS * DAY_US:
        return WindowAdvice("warning", WARNING_TEXT)
    if duration_us < CAUTION_DAYS * DAY_US:
        return WindowAdvice("caution", CAUTION_TEXT)
    return None


def cut_windows(
    records: Iterable[QueryRecord],
    duration_us: int,
    stride_us: Optional[int] = None,
) -> List[WindowSlice]:
    """
    Cuts records into fixed-duration windows anchored at the earliest record.

    Tumbling by default (``stride_us == duration_us``); a shorter stride
    makes windows overlap. Windows are produced until the last record is
    covered, so empty windows inside the span are kept. A window the
    capture ends inside is flagged ``partial`` and advised on by the
    traffic it actually covers.

    Raises:
        EmptyInput: No records.
        ValueError: Nonpositive duration or stride.
    """
    if duration_us <= 0:
        raise ValueError("window duration must be positive")
    stride_us = duration_us if stride_us is None else stride_us
    if stride_us <= 0:
        raise ValueError("window stride must be positive")

    ordered = sorted(records, key=lambda r: r.timestamp_us)
    if not ordered:
        raise EmptyInput("no records to cut into windows")
    stamps = [r.timestamp_us for r in ordered]
    first, last = stamps[0], stamps[-1]

    slices: List[WindowSlice] = []
    index = 0
    start = first
    while start <= last:
        window = TimeWindow(index, start, start + duration_us)
        lo = bisect.bisect_left(stamps, window.start_us)
        hi = bisect.bisect_left(stamps, window.end_us)
        covered = min(window.end_us, last + 1) - window.start_us
        partial_window = covered < PARTIAL_COVERAGE * duration_us
        slices.append(WindowSlice(
            window=window,
            records=ordered[lo:hi],
            partial=partial_window,
            advice=window_size_advice(covered if partial_window else duration_us),
        ))
        index += 1
        start += stride_us
    logger.info("Cut %d records into %d windows", len(ordered), len(slices))
    return slices


# --- Per-window analysis --- #

@dataclass
class SpaceAnalysis:
    """Fit, band and burrs of one sample space; ``error`` is set when the fit failed."""

    kind: SpaceKind
    histogram: LengthHistogram
    capacity: int
    effective_n: float
    fit: Optional[GaussianFit] = None
    band: Optional[ToleranceBand] = None
    burrs: List[BurrPoint] = field(default_factory=list)
    ks: Optional[KsConformance] = None
    error: Optional[str] = None

    @property
    def fitted(self) -> bool:
        return self.band is not None


@dataclass
class WindowResult:
    window: TimeWindow
    spaces: Dict[SpaceKind, SpaceAnalysis]
    burrs: List[BurrPoint]
    domains_at: Dict[int, Set[Tuple[str, int]]]
    names_by_length: Dict[int, Set[str]]
    record_count: int = 0
    partial: bool = False
    advice: Optional[WindowAdvice] = None

    @property
    def unfit(self) -> bool:
        return not any(s.fitted for s in self.spaces.values())

    @property
    def fit(self) -> Optional[GaussianFit]:
        for kind in (SpaceKind.DNSS, SpaceKind.ADNSS):
            analysis = self.spaces.get(kind)
            if analysis is not None and analysis.fit is not None:
                return analysis.fit
        return None

    @property
    def burr_lengths(self) -> Set[int]:
        return {b.length for b in self.burrs}

    @property
    def space_sizes(self) -> Tuple[int, int]:
        return self.spaces[SpaceKind.DNSS].capacity, self.spaces[SpaceKind.ADNSS].capacity


def analyze_space(
    space: DomainSampleSpace,
    alpha: float = DEFAULT_ALPHA,
    mode: BurrMode = "upper",
    noise_z: float = DEFAULT_NOISE_Z,
) -> SpaceAnalysis:
    """Histogram, fit, band, burrs and KS check of one space. Fit failures are recorded, not raised."""
    hist = length_histogram(space)
    analysis = SpaceAnalysis(space.kind, hist, space.capacity, space.effective_n)
    if hist.n == 0:
        analysis.error = "no samples"
        return analysis
    try:
        fit = fit_gaussian(hist)
    except (InsufficientSupport, DegenerateFit) as e:
        analysis.error = str(e)
        return analysis
    analysis.fit = fit
    if not fit.converged:
        analysis.error = f"fit did not converge in {fit.iterations} evaluations"
        return analysis
    analysis.band = delineation_band(hist, fit, alpha)
    analysis.burrs = detect_burrs(hist, analysis.band, mode, noise_z, space.kind.value)
    try:
        analysis.ks = ks_conformance(hist, fit, alpha, space.effective_n)
    except DegenerateFit as e:
        logger.debug("KS conformance skipped for %s: %s", space.kind.value, e)
    return analysis


def analyze_window(
    slice_: WindowSlice,
    alpha: float = DEFAULT_ALPHA,
    mode: BurrMode = "upper",
    noise_z: float = DEFAULT_NOISE_Z,
) -> WindowResult:
    """
    Runs the detection model on one window.

    DNSS and ADNSS are analyzed independently and their burr lengths
    unioned; a length flagged in both keeps the point with the larger
    excess. The window is unfit only when neither space could be fitted.
    """
    records = slice_.records
    spaces = {kind: build_space(records, kind) for kind in (SpaceKind.DNSS, SpaceKind.ADNSS)}
    analyses = {kind: analyze_space(space, alpha, mode, noise_z) for kind, space in spaces.items()}

    merged: Dict[int, BurrPoint] = {}
    for analysis in analyses.values():
        for burr in analysis.burrs:
            current = merged.get(burr.length)
            if current is None or burr.excess > current.excess:
                merged[burr.length] = burr
    burrs = sorted(merged.values(), key=lambda b: (-b.excess, b.length))

    adnss = spaces[SpaceKind.ADNSS]
    domains_at = {b.length: burr_domains(adnss, b) for b in burrs}
    result = WindowResult(
        window=slice_.window,
        spaces=analyses,
        burrs=burrs,
        domains_at=domains_at,
        names_by_length=spaces[SpaceKind.DNSS].names_by_length(),
        record_count=len(records),
        partial=slice_.partial,
        advice=slice_.advice,
    )
    if result.unfit:
        reasons = "; ".join(f"{k.value}: {a.error}" for k, a in analyses.items())
        logger.warning("Window %d is unfit (%s)", slice_.window.index, reasons)
    else:
        logger.info("Window %d: %d records, burrs at %s",
                    slice_.window.index, len(records), sorted(result.burr_lengths))
    return result


def analyze_windows(
    slices: Sequence[WindowSlice],
    alpha: float = DEFAULT_ALPHA,
    mode: BurrMode = "upper",
    noise_z: float = DEFAULT_NOISE_Z,
    workers: int = 1,
) -> List[WindowResult]:
    """Analyzes every window, in worker processes when ``workers > 1``; results keep window order."""
    job = partial(analyze_window, alpha=alpha, mode=mode, noise_z=noise_z)
    if workers <= 1 or len(slices) <= 1:
        return [job(s) for s in slices]
    with ProcessPoolExecutor(max_workers=min(workers, len(slices))) as pool:
        return list(pool.map(job, slices))


# --- Heat map --- #

@dataclass(frozen=True)
class BurrMatrix:
    """0/1 cells: rows are burr lengths (ascending), columns window indices."""

    lengths: List[int]
    windows: List[int]
    cells: Dict[int, List[int]]

    def __bool__(self) -> bool:
        return bool(self.lengths)

    def column(self, window_index: int) -> Dict[int, int]:
        j = self.windows.index(window_index)
        return {length: self.cells[length][j] for length in self.lengths}


def burr_matrix(results: Sequence[WindowResult]) -> BurrMatrix:
    windows = [r.window.index for r in sorted(results, key=lambda r: r.window.index)]
    by_index = {r.window.index: r.burr_lengths for r in results}
    lengths = sorted(set().union(*by_index.values())) if by_index else []
    cells = {length: [int(length in by_index[w]) for w in windows] for length in lengths}
    return BurrMatrix(lengths=lengths, windows=windows, cells=cells)


# --- Sudden burrs --- #

@dataclass(frozen=True)
class SuddenBurrEntry:
    length: int
    new_domains: Set[Tuple[str, int]]


@dataclass(frozen=True)
class SuddenBurrReport:
    from_window: int
    to_window: int
    entries: List[SuddenBurrEntry]

    def __bool__(self) -> bool:
        return bool(self.entries)

    def qnames(self) -> Set[str]:
        return {qname for entry in self.entries for qname, _ in entry.new_domains}

    def to_rows(self) -> List[dict]:
        return [
            {
                "from": self.from_window,
                "to": self.to_window,
                "length": entry.length,
                "new_domains": [
                    {"qname": qname, "count": count}
                    for qname, count in sorted(entry.new_domains, key=lambda d: (-d[1], d[0]))
                ],
            }
            for entry in self.entries
        ]


def sudden_burrs(prev: WindowResult, cur: WindowResult, force: bool = False) -> SuddenBurrReport:
    """
    Difference sets of burr domains between two consecutive windows.

    A burr new in ``cur`` keeps the names that were absent at that length
    anywhere in ``prev``; a burr present in both keeps the names absent from
    ``prev``'s burr at that length. Names are compared, not counts.

    Raises:
        NonAdjacentWindows: Unless ``cur`` directly follows ``prev`` (or ``force``).
    """
    if not force and cur.window.index != prev.window.index + 1:
        raise NonAdjacentWindows(f"window {cur.window.index} does not follow window {prev.window.index}")
    entries: List[SuddenBurrEntry] = []
    for length in sorted(cur.burr_lengths):
        if length in prev.burr_lengths:
            seen = {qname for qname, _ in prev.domains_at.get(length, ())}
        else:
            seen = prev.names_by_length.get(length, set())
        new = {(qname, count) for qname, count in cur.domains_at.get(length, ()) if qname not in seen}
        if new:
            entries.append(SuddenBurrEntry(length, new))
    return SuddenBurrReport(prev.window.index, cur.window.index, entries)


def sudden_burr_series(results: Sequence[WindowResult]) -> List[SuddenBurrReport]:
    """Sudden-burr reports for every consecutive pair, in window order."""
    ordered = sorted(results, key=lambda r: r.window.index)
    return [sudden_burrs(a, b) for a, b in zip(ordered, ordered[1:])]
