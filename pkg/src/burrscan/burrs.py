"""Tolerance band around the fitted curve and burr extraction."""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Literal, Optional, Set, Tuple, Union

from burrscan.config import DEFAULT_NOISE_Z, BurrscanError
from burrscan.fitting import GaussianFit, ks_critical_value, theoretical_cdf
from burrscan.spaces import DomainSampleSpace, LengthHistogram

logger = logging.getLogger(__name__)

BurrMode = Literal["upper", "two_sided"]


class FitUnavailable(BurrscanError):
    """Custom exception raised when a band is requested without a usable fit."""
    pass


@dataclass(frozen=True)
class BandEntry:
    length: int
    expected: float
    lower: float
    upper: float
    cdf: float

    @property
    def slack(self) -> float:
        return self.upper - self.expected


@dataclass(frozen=True)
class ToleranceBand:
    """Per-length acceptable count interval ``[lower, upper]`` around the fitted curve."""

    entries: Dict[int, BandEntry]
    alpha: float
    d: float
    n: int

    def __contains__(self, length: int) -> bool:
        return length in self.entries

    def __getitem__(self, length: int) -> BandEntry:
        return self.entries[length]

    def lengths(self) -> List[int]:
        return sorted(self.entries)


@dataclass(frozen=True)
class BurrPoint:
    """
    A length whose observed count leaves the band.

    ``excess`` is ``observed - upper`` for upper burrs and ``lower - observed``
    for lower ones; always positive. ``space`` names the sample space the
    burr was found in, when known.
    """

    length: int
    observed: int
    expected: float
    lower: float
    upper: float
    excess: float
    side: Literal["upper", "lower"] = "upper"
    space: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "length": self.length,
            "observed": self.observed,
            "expected": self.expected,
            "lower": self.lower,
            "upper": self.upper,
            "excess": self.excess,
            "side": self.side,
            "space": self.space,
        }


def excess_bound(cdf_at_x: float, d: float) -> float:
    """Bound on cumulative-frequency excess at a length: ``d/(1+d) · (1 − F(x))``."""
    if not 0.0 <= cdf_at_x <= 1.0:
        raise ValueError(f"CDF value {cdf_at_x} outside [0, 1]")
    if d < 0:
        raise ValueError(f"tolerance constant must be >= 0, got {d}")
    return d / (1.0 + d) * (1.0 - cdf_at_x)


def delineation_band(hist: LengthHistogram, fit: Optional[GaussianFit], alpha: float) -> ToleranceBand:
    """
    Builds the reasonable band over the histogram's support hull.

    ``d`` is the KS critical value for ``hist.n``; the slack at length x is
    ``n · excess_bound(F(x), d)`` with F the fitted CDF, so the band narrows
    to the curve itself as F approaches 1.

    Raises:
        FitUnavailable: Without a converged fit.
        ValueError: For an empty histogram.
    """
    if fit is None or not fit.converged:
        raise FitUnavailable("no converged fit for this histogram")
    if hist.n <= 0:
        raise ValueError("cannot delineate a band for an empty histogram")
    d = ks_critical_value(hist.n, alpha)
    entries: Dict[int, BandEntry] = {}
    for x in hist.support_hull():
        expected = float(fit.curve(x))
        cdf = min(max(theoretical_cdf(fit, x), 0.0), 1.0)
        slack = hist.n * excess_bound(cdf, d)
        entries[x] = BandEntry(
            length=x,
            expected=expected,
            lower=max(0.0, expected - slack),
            upper=expected + slack,
            cdf=cdf,
        )
    return ToleranceBand(entries=entries, alpha=alpha, d=d, n=hist.n)


def noise_floor(expected: float, dispersion: float, noise_z: float) -> float:
    """Smallest deviation from ``expected`` that sampling noise rarely reaches."""
    return noise_z * math.sqrt(dispersion * max(expected, 1.0))


def detect_burrs(
    hist: LengthHistogram,
    band: ToleranceBand,
    mode: BurrMode = "upper",
    noise_z: float = DEFAULT_NOISE_Z,
    space: Optional[str] = None,
) -> List[BurrPoint]:
    """
    Lengths whose observed count falls outside the band.

    Besides leaving the band, the deviation from the expected count must
    exceed ``noise_z`` standard deviations of the count (``noise_z = 0``
    keeps the bare band).

    Returns:
        BurrPoints sorted by descending excess, then by length.
    """
    burrs: List[BurrPoint] = []
    for x in hist.support_hull():
        if x not in band:
            raise ValueError(f"band does not cover length {x}")
        entry = band[x]
        observed = hist.count(x)
        floor = noise_floor(entry.expected, hist.dispersion, noise_z)
        if observed > entry.upper and observed - entry.expected > floor:
            burrs.append(BurrPoint(x, observed, entry.expected, entry.lower, entry.upper,
                                   observed - entry.upper, "upper", space))
        elif mode == "two_sided" and observed < entry.lower and entry.expected - observed > floor:
            burrs.append(BurrPoint(x, observed, entry.expected, entry.lower, entry.upper,
                                   entry.lower - observed, "lower", space))
    burrs.sort(key=lambda b: (-b.excess, b.length))
    if burrs:
        logger.debug("Burrs at %s (%s)", [b.length for b in burrs], space or "histogram")
    return burrs


def burr_domains(space: DomainSampleSpace, burr: Union[BurrPoint, int]) -> Set[Tuple[str, int]]:
    """Every ``(qname, access_count)`` of the space whose length is the burr length."""
    length = burr.length if isinstance(burr, BurrPoint) else int(burr)
    return {(qname, count) for qname, count in space.entries.items() if len(qname) == length}


def band_rows(hist: LengthHistogram, band: ToleranceBand, burrs: List[BurrPoint]):
    """Plot rows ``(length, observed, expected, lower, upper, is_burr)`` over the band."""
    flagged = {b.length for b in burrs}
    for x in band.lengths():
        entry = band[x]
        yield x, hist.count(x), entry.expected, entry.lower, entry.upper, int(x in flagged)
