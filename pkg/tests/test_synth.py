import json
from collections import Counter

import pytest

from burrscan.fitting import fit_gaussian, ks_conformance
from burrscan.ingest import SchemaError
from burrscan.spaces import SpaceKind, build_space, length_histogram
from burrscan.synth import (
    BENIGN,
    DAY_US,
    HEX_ALPHABET,
    TUNNEL,
    TUNNEL_SOURCE,
    BenignModel,
    BenignSpec,
    ConfusionCounts,
    HotDomain,
    SynthSpec,
    SynthSpecError,
    TunnelModel,
    TunnelSpec,
    UndefinedMetric,
    _label_sizes,
    accuracy,
    benign_population,
    build_dataset,
    confusion_metrics,
    default_synth_spec,
    f1_score,
    generate_benign,
    load_synth_spec,
    precision,
    read_labels,
    recall,
    sample_benign_histograms,
    sample_benign_spaces,
    tunnel_records,
    write_labels,
)
from burrscan.verification import (
    Classification,
    Thresholds,
    Whitelist,
    build_evidence,
    classify,
    shannon_entropy,
    subdomain_part,
)

SMALL = BenignModel(unique_names=2_000, max_visits=4, span_us=10 * DAY_US, seed=5)


def test_benign_generation_is_deterministic():
    assert generate_benign(SMALL) == generate_benign(SMALL)
    other = BenignModel(unique_names=2_000, max_visits=4, span_us=10 * DAY_US, seed=6)
    assert generate_benign(other) != generate_benign(SMALL)


def test_benign_names_respect_the_model():
    records = generate_benign(SMALL)
    visits = Counter(r.qname for r in records)
    assert len(visits) == SMALL.unique_names
    assert max(visits.values()) <= SMALL.max_visits
    assert all(SMALL.length_min <= len(q) <= SMALL.length_max for q in visits)
    assert all(SMALL.start_us <= r.timestamp_us < SMALL.start_us + SMALL.span_us for r in records)
    assert records == sorted(records, key=lambda r: (r.timestamp_us, r.qname))


def test_lengths_are_truncated_to_range():
    model = BenignModel(unique_names=5_000, mu=8.0, sigma=6.0, length_min=4, length_max=12, max_visits=1, seed=2)
    sample = sample_benign_histograms(model)
    assert min(sample.dnss.counts) >= 4
    assert max(sample.dnss.counts) <= 12
    assert sample.dnss.n == 5_000


def test_histogram_fast_path_matches_records():
    records = generate_benign(SMALL)
    sample = sample_benign_histograms(SMALL)
    assert length_histogram(build_space(records, SpaceKind.DNSS)).counts == sample.dnss.counts
    assert length_histogram(build_space(records, SpaceKind.ADNSS)).counts == sample.adnss.counts
    assert sample.adnss.n == len(records)


def test_tunnel_names_have_the_configured_shape():
    model = TunnelModel(query_count=500, seed=3)
    records = tunnel_records(model)
    assert len(records) == 500
    for r in records:
        assert len(r.qname) == 67
        assert r.qname.endswith(".b.tunnel.com")
        assert all(1 <= len(label) <= 63 for label in r.qname.split("."))
        assert r.qtype == 16
        assert r.src == TUNNEL_SOURCE
        assert model.burst_start_us <= r.timestamp_us < model.burst_start_us + model.burst_span_us
    assert len({r.qname for r in records}) > 490


def test_long_hex_tunnel_names_split_into_labels():
    records = tunnel_records(TunnelModel(qname_len=200, query_count=20, encoder="hexlike", seed=1))
    for r in records:
        assert len(r.qname) == 200
        payload = r.qname[: -len(".b.tunnel.com")]
        assert all(len(label) <= 63 for label in payload.split("."))
        assert set(payload.replace(".", "")) <= set(HEX_ALPHABET)


def test_label_sizes_cover_the_payload():
    for payload_len in range(1, 241):
        sizes = _label_sizes(payload_len)
        assert sum(sizes) + len(sizes) - 1 == payload_len
        assert all(1 <= s <= 63 for s in sizes)


def test_tunnel_model_validation():
    with pytest.raises(ValueError):
        TunnelModel(qname_len=12)
    with pytest.raises(ValueError):
        TunnelModel(query_count=0)
    with pytest.raises(ValueError):
        BenignModel(length_min=30, length_max=20)


def test_labels_round_trip(tmp_path):
    labels = {"www.example.com": BENIGN, "t1.b.tunnel.com": TUNNEL}
    path = tmp_path / "labels.csv"
    assert write_labels(labels, path) == 2
    assert path.read_text(encoding="utf-8").splitlines()[0] == "qname,label"
    assert read_labels(path) == labels


def test_bad_labels(tmp_path):
    path = tmp_path / "labels.csv"
    path.write_text("qname,label\nwww.example.com,maybe\n", encoding="utf-8")
    with pytest.raises(SchemaError):
        read_labels(path)
    path.write_text("qname\nwww.example.com\n", encoding="utf-8")
    with pytest.raises(SchemaError):
        read_labels(path)


def test_dataset_without_tunnel_is_all_benign():
    spec = SynthSpec(benign=BenignSpec(unique_names=1_000, max_visits=2, span_days=5))
    records, labels = build_dataset(spec)
    assert set(labels.values()) == {BENIGN}
    assert set(labels) == {r.qname for r in records}


def test_dataset_with_tunnel():
    spec = SynthSpec(seed=4, benign=BenignSpec(unique_names=1_000, max_visits=2, span_days=40),
                     tunnel=TunnelSpec(query_count=100))
    records, labels = build_dataset(spec)
    tunnel_names = {r.qname for r in records if r.qname.endswith(".b.tunnel.com")}
    assert {q for q, label in labels.items() if label == TUNNEL} == tunnel_names
    assert records == sorted(records, key=lambda r: (r.timestamp_us, r.qname))
    assert build_dataset(spec) == (records, labels)


def test_default_spec_seeds_the_tunnel_separately():
    spec = default_synth_spec()
    assert spec.tunnel is not None
    assert spec.tunnel_model().seed == spec.seed + 1
    assert spec.tunnel_model().burst_start_us == spec.benign.start_us + 35 * DAY_US


def test_metrics_on_hand_counts():
    c = ConfusionCounts(tp=8, fn=2, fp=1, tn=9)
    assert accuracy(c) == pytest.approx(0.85)
    assert precision(c) == pytest.approx(8 / 9)
    assert recall(c) == pytest.approx(0.8)
    assert f1_score(c) == pytest.approx(16 / 19)
    assert c.inverted() == ConfusionCounts(tp=9, fn=1, fp=2, tn=8)
    assert recall(c.inverted()) == pytest.approx(0.9)


def test_undefined_metrics():
    with pytest.raises(UndefinedMetric):
        accuracy(ConfusionCounts())
    with pytest.raises(UndefinedMetric):
        precision(ConfusionCounts(fn=3, tn=2))
    with pytest.raises(UndefinedMetric):
        recall(ConfusionCounts(fp=1, tn=1))
    with pytest.raises(UndefinedMetric):
        f1_score(ConfusionCounts(fp=1, fn=1))
    assert confusion_metrics(ConfusionCounts(fp=2, tn=3)) == {"accuracy": 0.6, "precision": 0.0}
    with pytest.raises(ValueError):
        ConfusionCounts(tp=-1)


@pytest.mark.parametrize("max_visits", [1, 5, 20, 100])
def test_access_weighted_lengths_follow_the_unique_fit(max_visits):
    passed = 0
    for seed in range(5):
        sample = sample_benign_histograms(BenignModel(unique_names=50_000, max_visits=max_visits, seed=seed))
        fit = fit_gaussian(sample.dnss)
        passed += ks_conformance(sample.adnss, fit, 0.05, sample.adnss_effective_n).passed
    assert passed >= 4


def test_load_synth_spec(tmp_path):
    path = tmp_path / "spec.json"
    path.write_text(json.dumps({"seed": 9, "benign": {"unique_names": 500}, "tunnel": {"encoder": "hexlike"}}),
                    encoding="utf-8")
    spec = load_synth_spec(path)
    assert spec.seed == 9
    assert spec.benign.unique_names == 500
    assert spec.benign.max_visits == 20
    assert spec.tunnel_model().encoder == "hexlike"


@pytest.mark.parametrize("payload, field", [
    ({"benign": {"sigma": 0}}, "benign.sigma"),
    ({"tunnel": {"qname_len": 10}}, "tunnel"),
    ({"tunnel": {"encoder": "rot13"}}, "tunnel.encoder"),
    ({"benign": {"length_min": 30, "length_max": 20}}, "benign"),
    ({"noise": True}, "noise"),
])
def test_bad_synth_specs(tmp_path, payload, field):
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(payload), encoding="utf-8")
    with pytest.raises(SynthSpecError) as excinfo:
        load_synth_spec(path)
    assert field in str(excinfo.value)


def test_unreadable_synth_spec(tmp_path):
    with pytest.raises(SynthSpecError):
        load_synth_spec(tmp_path / "missing.json")


def test_spaces_without_records_match_generated_traffic():
    hot = BenignModel(unique_names=2_000, max_visits=4, span_us=10 * DAY_US, seed=5,
                      hot_domains=(HotDomain("www.hot-portal.com", 300),))
    records = generate_benign(hot)
    dnss, adnss = sample_benign_spaces(hot)
    assert dnss.entries == build_space(records, SpaceKind.DNSS).entries
    assert adnss.entries == build_space(records, SpaceKind.ADNSS).entries
    assert adnss.entries["www.hot-portal.com"] == 300


@pytest.mark.parametrize("seed", [105, 7])
def test_benign_names_stay_under_the_entropy_rule(seed):
    names, _, _ = benign_population(BenignModel(unique_names=20_000, seed=seed))
    thresholds = Thresholds()
    noisy = [q for q in names if shannon_entropy(subdomain_part(q)) > thresholds.entropy_rule]
    assert len(noisy) <= len(names) // 1000

    verdicts = [classify(e, Whitelist(), thresholds) for e in build_evidence((q, 1) for q in names).values()]
    flagged = [v for v in verdicts if v.classification is not Classification.BENIGN]
    assert len(flagged) <= len(verdicts) // 1000
