"""Domain name sample spaces (DNSS, ADNSS), length histograms and empirical CDFs."""

import enum
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Set, Union

import numpy as np

from burrscan.config import BurrscanError
from burrscan.ingest import QueryRecord


class EmptyHistogram(BurrscanError):
    """Custom exception for CDF requests on a histogram without samples."""
    pass


class SpaceKind(str, enum.Enum):
    DNSS = "dnss"    # each distinct name once
    ADNSS = "adnss"  # every access counted


@dataclass(frozen=True)
class DomainSampleSpace:
    """
    Names observed in a slice of traffic.

    For DNSS every access count is 1 and capacity is the number of names;
    for ADNSS capacity is the total number of accesses.
    """

    kind: SpaceKind
    entries: Mapping[str, int] = field(default_factory=dict)

    @property
    def capacity(self) -> int:
        return sum(self.entries.values())

    @property
    def effective_n(self) -> float:
        """Kish effective sample size (Σc)²/Σc²; equals capacity for DNSS."""
        total = self.capacity
        if total == 0:
            return 0.0
        squares = sum(c * c for c in self.entries.values())
        return total * total / squares

    def __len__(self) -> int:
        return len(self.entries)

    def names_by_length(self) -> Dict[int, Set[str]]:
        grouped: Dict[int, Set[str]] = {}
        for qname in self.entries:
            grouped.setdefault(len(qname), set()).add(qname)
        return grouped


def build_space(records: Iterable[QueryRecord], kind: SpaceKind) -> DomainSampleSpace:
    """
    Folds records into a sample space. Root (empty) names are not sampled.

    Args:
        records: Any iterable of QueryRecord; consumed once.
        kind: DNSS deduplicates, ADNSS counts accesses.
    """
    counts = Counter(r.qname for r in records if r.qname)
    if kind is SpaceKind.DNSS:
        return DomainSampleSpace(kind, {qname: 1 for qname in counts})
    return DomainSampleSpace(kind, dict(counts))


def space_from_counts(kind: SpaceKind, counts: Mapping[str, int]) -> DomainSampleSpace:
    """Builds a space from precomputed per-name access counts."""
    if kind is SpaceKind.DNSS:
        return DomainSampleSpace(kind, {qname: 1 for qname, c in counts.items() if c > 0 and qname})
    return DomainSampleSpace(kind, {qname: int(c) for qname, c in counts.items() if c > 0 and qname})


@dataclass(frozen=True)
class LengthHistogram:
    """
    Frequency of each name length. Missing keys mean a zero count.

    ``dispersion`` is the variance-to-mean ratio expected of a per-length
    count: 1 for DNSS, larger for ADNSS where each name brings several hits.
    """

    counts: Mapping[int, int]
    n: int
    dispersion: float = 1.0

    def count(self, length: int) -> int:
        return self.counts.get(length, 0)

    @property
    def lengths(self) -> list:
        return sorted(self.counts)

    @property
    def min_length(self) -> int:
        return min(self.counts)

    @property
    def max_length(self) -> int:
        return max(self.counts)

    def support_hull(self) -> range:
        """Every integer length between the smallest and largest observed one."""
        if not self.counts:
            return range(0)
        return range(self.min_length, self.max_length + 1)

    def as_arrays(self):
        """``(lengths, counts)`` over the support hull, zeros included, as float arrays."""
        xs = np.arange(self.min_length, self.max_length + 1, dtype=float)
        ys = np.array([self.count(int(x)) for x in xs], dtype=float)
        return xs, ys


def _access_dispersion(counts: np.ndarray) -> float:
    if counts.size == 0:
        return 1.0
    cap = np.percentile(counts, 99)
    kept = counts[counts <= cap]
    if kept.size == 0 or kept.sum() == 0:
        return 1.0
    return float(max(1.0, (kept.astype(float) ** 2).sum() / kept.sum()))


def length_histogram(space: DomainSampleSpace) -> LengthHistogram:
    """
    Histogram of name lengths, weighted by access count.

    Returns:
        LengthHistogram with ``n == space.capacity``.
    """
    counts: Counter = Counter()
    for qname, accesses in space.entries.items():
        counts[len(qname)] += accesses
    dispersion = 1.0
    if space.kind is SpaceKind.ADNSS:
        dispersion = _access_dispersion(np.fromiter(space.entries.values(), dtype=np.int64, count=len(space.entries)))
    return LengthHistogram(dict(counts), sum(counts.values()), dispersion)


class EmpiricalCdf:
    """Right-continuous step function S(x) = (#samples with length ≤ x) / n."""

    def __init__(self, hist: LengthHistogram):
        if hist.n <= 0:
            raise EmptyHistogram("empirical CDF of an empty histogram")
        self.n = hist.n
        self._lengths = np.array(hist.lengths, dtype=float)
        self._cumulative = np.cumsum([hist.counts[int(x)] for x in self._lengths]).astype(np.int64)

    def cumulative_count(self, x: Union[float, np.ndarray]):
        """Integral numerator of S(x)."""
        idx = np.searchsorted(self._lengths, x, side="right")
        padded = np.concatenate(([0], self._cumulative))
        return padded[idx]

    def __call__(self, x: Union[float, np.ndarray]):
        result = self.cumulative_count(x) / self.n
        if np.ndim(result) == 0:
            return float(result)
        return result


def empirical_cdf(hist: LengthHistogram) -> EmpiricalCdf:
    """
    Raises:
        EmptyHistogram: When ``hist.n == 0``.
    """
    return EmpiricalCdf(hist)
