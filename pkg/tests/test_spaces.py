import numpy as np
import pytest

from burrscan.ingest import QueryRecord
from burrscan.spaces import (
    EmptyHistogram,
    LengthHistogram,
    SpaceKind,
    build_space,
    empirical_cdf,
    length_histogram,
    space_from_counts,
)


def _records(*names):
    return [QueryRecord(i, name, 1) for i, name in enumerate(names)]


def test_dnss_and_adnss_of_small_window():
    records = _records("a.com", "a.com", "bb.com")
    dnss = build_space(records, SpaceKind.DNSS)
    adnss = build_space(records, SpaceKind.ADNSS)

    assert dnss.capacity == 2
    assert adnss.capacity == 3
    assert length_histogram(dnss).counts == {5: 1, 6: 1}
    assert length_histogram(adnss).counts == {5: 2, 6: 1}


def test_histogram_totals_match_capacity():
    records = _records(*[f"host{i % 37}.example.com" for i in range(500)], "x.org", "x.org")
    for kind in SpaceKind:
        space = build_space(records, kind)
        hist = length_histogram(space)
        assert sum(hist.counts.values()) == space.capacity == hist.n


def test_dnss_is_adnss_with_unit_weights():
    records = _records("a.com", "a.com", "a.com", "bb.com", "ccc.com")
    adnss = build_space(records, SpaceKind.ADNSS)
    dnss = build_space(records, SpaceKind.DNSS)
    assert set(dnss.entries) == set(adnss.entries)
    assert all(c == 1 for c in dnss.entries.values())


def test_root_name_is_not_sampled():
    space = build_space(_records("", "a.com"), SpaceKind.ADNSS)
    assert space.capacity == 1
    assert min(length_histogram(space).counts) >= 1


def test_empty_space():
    hist = length_histogram(build_space([], SpaceKind.DNSS))
    assert hist.counts == {}
    assert hist.n == 0
    assert hist.support_hull() == range(0)


def test_dispersion_and_effective_n():
    counts = {f"n{i}.com": 1 + i % 4 for i in range(400)}  # 1, 2, 3, 4 repeated
    adnss = space_from_counts(SpaceKind.ADNSS, counts)
    dnss = space_from_counts(SpaceKind.DNSS, counts)

    assert length_histogram(dnss).dispersion == 1.0
    assert length_histogram(adnss).dispersion == pytest.approx(30 / 10)
    assert adnss.effective_n == pytest.approx(1000 ** 2 / 3000)
    assert dnss.effective_n == pytest.approx(400)


def test_names_by_length():
    space = build_space(_records("a.com", "b.com", "cc.com"), SpaceKind.DNSS)
    assert space.names_by_length() == {5: {"a.com", "b.com"}, 6: {"cc.com"}}


def test_empirical_cdf_steps():
    cdf = empirical_cdf(LengthHistogram({5: 2, 6: 1}, 3))
    assert cdf(4) == 0.0
    assert cdf(5) == pytest.approx(2 / 3)
    assert cdf(5.5) == pytest.approx(2 / 3)
    assert cdf(6) == 1.0
    assert cdf(100) == 1.0


def test_empirical_cdf_is_monotone():
    rng = np.random.default_rng(3)
    counts = {int(x): int(c) for x, c in zip(range(3, 40), rng.integers(0, 50, size=37)) if c}
    cdf = empirical_cdf(LengthHistogram(counts, sum(counts.values())))
    values = cdf(np.arange(0, 45, 0.5))
    assert np.all(np.diff(values) >= 0)
    assert values[-1] == 1.0


def test_empirical_cdf_of_empty_histogram():
    with pytest.raises(EmptyHistogram):
        empirical_cdf(LengthHistogram({}, 0))


def test_as_arrays_fills_gaps():
    xs, ys = LengthHistogram({3: 1, 6: 4}, 5).as_arrays()
    assert xs.tolist() == [3.0, 4.0, 5.0, 6.0]
    assert ys.tolist() == [1.0, 0.0, 0.0, 4.0]
