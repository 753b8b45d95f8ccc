import json
import math
import random
from collections import Counter

import pytest

from burrscan.synth import BASE32_ALPHABET, TunnelModel, tunnel_records
from burrscan.verification import (
    Classification,
    DomainEvidence,
    EmptyLabel,
    FanoutRule,
    Thresholds,
    ThresholdsError,
    Verdict,
    Whitelist,
    WhitelistError,
    build_evidence,
    classify,
    load_thresholds,
    load_whitelist,
    nonalpha_ratio,
    parse_whitelist,
    registered_suffix,
    shannon_entropy,
    subdomain_part,
    verify_families,
)


def _evidence(**overrides):
    values = dict(
        registered_suffix="unknown-site.com",
        qname="www.unknown-site.com",
        access_count=5,
        entropy_bits_per_char=2.5,
        nonalpha_ratio=0.0,
        longest_label_len=12,
        total_len=20,
        distinct_subdomains_in_family=1,
        members=("www.unknown-site.com",),
    )
    values.update(overrides)
    return DomainEvidence(**values)


def test_entropy_examples():
    assert shannon_entropy("aaaa") == 0.0
    assert shannon_entropy("abcd") == pytest.approx(2.0)
    assert shannon_entropy("ab.cd") == pytest.approx(2.0)
    with pytest.raises(EmptyLabel):
        shannon_entropy("")
    with pytest.raises(EmptyLabel):
        shannon_entropy("..")


def test_random_base32_has_high_entropy():
    rng = random.Random(17)
    high = sum(shannon_entropy("".join(rng.choices(BASE32_ALPHABET, k=40))) > 3.5 for _ in range(1000))
    assert high >= 990


def test_nonalpha_ratio():
    assert nonalpha_ratio("abc") == 0.0
    assert nonalpha_ratio("a1b2") == 0.5
    assert nonalpha_ratio("a1.b2") == 0.5
    assert nonalpha_ratio("") == 0.0


def test_registered_suffix_and_subdomain_part():
    assert registered_suffix("t1.b.tunnel.com") == "tunnel.com"
    assert registered_suffix("news.bbc.co.uk") == "bbc.co.uk"
    assert registered_suffix("www.shop.com.cn") == "shop.com.cn"
    assert registered_suffix("localhost") == "localhost"
    assert subdomain_part("t1.b.tunnel.com") == "t1.b"
    assert subdomain_part("tunnel.com") == "tunnel"


def test_family_evidence_aggregates():
    evidence = build_evidence([("t1.b.tunnel.com", 300), ("t2.b.tunnel.com", 200)])
    (family,) = evidence.values()
    assert family.registered_suffix == "tunnel.com"
    assert family.distinct_subdomains_in_family == 2
    assert family.access_count == 500
    assert family.members == ("t1.b.tunnel.com", "t2.b.tunnel.com")


def test_single_short_name_evidence():
    evidence = build_evidence([("mail.corp.org", 3)])["corp.org"]
    assert evidence.longest_label_len == 4
    assert evidence.entropy_bits_per_char == pytest.approx(2.0)
    assert evidence.total_len == 13


def test_tunnel_evidence_matches_recount():
    records = tunnel_records(TunnelModel(query_count=300, seed=2))
    counts = Counter(r.qname for r in records)
    evidence = build_evidence(counts.items())["tunnel.com"]

    parts = [q[: -len(".tunnel.com")] for q in counts]
    entropies = []
    for part in parts:
        chars = part.replace(".", "")
        freq = Counter(chars)
        entropies.append(-sum(c / len(chars) * math.log2(c / len(chars)) for c in freq.values()))
    assert evidence.entropy_bits_per_char == pytest.approx(max(entropies))
    assert evidence.access_count == 300
    assert evidence.distinct_subdomains_in_family == len(counts)
    assert evidence.total_len == 67
    assert evidence.longest_label_len == max(len(label) for q in counts for label in q.split("."))
    assert 0.0 <= evidence.nonalpha_ratio <= 1.0


def test_whitelisted_family_is_benign():
    evidence = _evidence(registered_suffix="google.com", total_len=80, entropy_bits_per_char=4.5,
                         distinct_subdomains_in_family=500, access_count=10_000)
    verdict = classify(evidence, parse_whitelist(["google.com"]), Thresholds())
    assert verdict.classification is Classification.BENIGN
    assert verdict.reasons == ()


def test_tunnel_needs_content_and_volume():
    evidence = _evidence(registered_suffix="tunnel.com", total_len=67, entropy_bits_per_char=4.1,
                         nonalpha_ratio=0.2, distinct_subdomains_in_family=40, access_count=5_000)
    verdict = classify(evidence, Whitelist(), Thresholds())
    assert verdict.classification is Classification.TUNNEL
    assert [rule for rule, _ in verdict.reasons] == ["R1_length", "R2_entropy", "R4_fanout"]


def test_unknown_hot_name_is_suspicious():
    evidence = _evidence(total_len=20, entropy_bits_per_char=2.8, distinct_subdomains_in_family=12, access_count=200)
    verdict = classify(evidence, Whitelist(), Thresholds())
    assert verdict.classification is Classification.SUSPICIOUS
    assert [rule for rule, _ in verdict.reasons] == ["R4_fanout"]


@pytest.mark.parametrize("names, expected", [
    (1, Classification.BENIGN),
    (9, Classification.BENIGN),
    (10, Classification.SUSPICIOUS),
])
def test_fanout_needs_ten_names(names, expected):
    evidence = _evidence(total_len=20, entropy_bits_per_char=2.8, distinct_subdomains_in_family=names, access_count=200)
    assert classify(evidence, Whitelist(), Thresholds()).classification is expected


def test_quiet_family_is_benign():
    assert classify(_evidence(), Whitelist(), Thresholds()).classification is Classification.BENIGN


def test_raising_thresholds_never_escalates():
    rng = random.Random(3)
    for _ in range(500):
        evidence = _evidence(
            total_len=rng.randint(5, 120),
            entropy_bits_per_char=rng.uniform(0, 5),
            nonalpha_ratio=rng.uniform(0, 1),
            distinct_subdomains_in_family=rng.randint(1, 50),
            access_count=rng.randint(1, 500),
        )
        low = Thresholds(len_rule=rng.randint(20, 60), entropy_rule=rng.uniform(2, 4), nonalpha_rule=rng.uniform(0.1, 0.5),
                         fanout_rule=FanoutRule(subdomains=rng.randint(2, 20), queries=rng.randint(10, 200)))
        high = Thresholds(len_rule=low.len_rule + rng.randint(0, 30),
                          entropy_rule=low.entropy_rule + rng.uniform(0, 1),
                          nonalpha_rule=min(1.0, low.nonalpha_rule + rng.uniform(0, 0.3)),
                          fanout_rule=FanoutRule(subdomains=low.fanout_rule.subdomains + rng.randint(0, 10),
                                                 queries=low.fanout_rule.queries + rng.randint(0, 100)))
        before = classify(evidence, Whitelist(), low).classification.severity
        after = classify(evidence, Whitelist(), high).classification.severity
        assert after <= before


def test_whitelist_matches_parent_suffixes():
    whitelist = parse_whitelist(["# trusted", "google.com", "*.akamaiedge.net", "3,Baidu.COM", ""])
    assert "google.com" in whitelist
    assert "mail.google.com" in whitelist
    assert "e1.akamaiedge.net" in whitelist
    assert "baidu.com" in whitelist
    assert "oogle.com" not in whitelist
    assert "google.com.evil.io" not in whitelist
    assert len(whitelist) == 3


def test_load_whitelist(tmp_path):
    path = tmp_path / "whitelist.txt"
    path.write_text("example.org  # corp\n", encoding="utf-8")
    whitelist = load_whitelist(path)
    assert "www.example.org" in whitelist
    assert whitelist.source == str(path)
    with pytest.raises(WhitelistError):
        load_whitelist(tmp_path / "missing.txt")


def test_whitelist_with_bad_bytes(tmp_path):
    path = tmp_path / "whitelist.txt"
    path.write_bytes(b"example.org\nb\xfccher.de\n")
    with pytest.raises(WhitelistError) as excinfo:
        load_whitelist(path)
    assert "whitelist.txt" in str(excinfo.value)


def test_thresholds_file(tmp_path):
    path = tmp_path / "thresholds.json"
    path.write_text(json.dumps({"len_rule": 60, "fanout_rule": {"queries": 50}}), encoding="utf-8")
    thresholds = load_thresholds(path)
    assert thresholds.len_rule == 60
    assert thresholds.entropy_rule == 3.5
    assert thresholds.fanout_rule == FanoutRule(subdomains=10, queries=50)


@pytest.mark.parametrize("payload, field", [
    ({"len_rule": "long"}, "len_rule"),
    ({"nonalpha_rule": 2}, "nonalpha_rule"),
    ({"fanout_rule": {"subdomains": 0}}, "fanout_rule.subdomains"),
    ({"typo_rule": 1}, "typo_rule"),
])
def test_bad_thresholds_name_the_field(tmp_path, payload, field):
    path = tmp_path / "thresholds.json"
    path.write_text(json.dumps(payload), encoding="utf-8")
    with pytest.raises(ThresholdsError) as excinfo:
        load_thresholds(path)
    assert field in str(excinfo.value)


def test_unreadable_thresholds(tmp_path):
    path = tmp_path / "thresholds.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(ThresholdsError):
        load_thresholds(path)
    path.write_bytes(b'{"len_rule": "\xff"}')
    with pytest.raises(ThresholdsError):
        load_thresholds(path)


class _Sandbox:
    def __init__(self):
        self.seen = []

    def review(self, evidence, verdict):
        self.seen.append(evidence.registered_suffix)
        if evidence.registered_suffix == "cdn-edge.net":
            return Verdict("ignored", Classification.BENIGN, (("sandbox", 1.0),))
        return None


def test_verifiers_run_after_rules_but_not_on_whitelist():
    tunnel = [(f"{i:02d}x9q7z3k2m8v5w1r4t6y0p.b.tunnel.com", 50) for i in range(12)]
    edge = [(f"{i:02d}a8f3c91d7e2b6.cdn-edge.net", 20) for i in range(12)]
    trusted = [(f"{i:02d}q8z7x6w5v4u3.google.com", 20) for i in range(12)]
    sandbox = _Sandbox()
    verdicts = verify_families(tunnel + edge + trusted, parse_whitelist(["google.com"]), Thresholds(), [sandbox])

    by_family = {v.family: v for v in verdicts}
    assert by_family["tunnel.com"].classification is Classification.TUNNEL
    assert by_family["cdn-edge.net"].classification is Classification.BENIGN
    assert by_family["cdn-edge.net"].reasons == (("sandbox", 1.0),)
    assert len(by_family["cdn-edge.net"].members) == 12
    assert by_family["google.com"].classification is Classification.BENIGN
    assert "google.com" not in sandbox.seen
    assert verdicts[0].family == "tunnel.com"
    assert verdicts[0].to_dict()["classification"] == "tunnel"
