"""Multidimensional verification of sudden-burr domains: whitelist, payload and fan-out rules."""

import enum
import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Protocol, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from burrscan.config import BurrscanError
from burrscan.wire import normalize_qname

logger = logging.getLogger(__name__)

# Second-level labels under which registrations happen one level deeper (bbc.co.uk, x.com.cn)
PUBLIC_SECOND_LEVEL = frozenset({"co", "com", "net", "org", "gov", "edu", "ac", "ne", "or", "go"})


class EmptyLabel(BurrscanError):
    """Custom exception for entropy requests on empty text."""
    pass


class WhitelistError(BurrscanError):
    """Custom exception for unreadable whitelist files."""
    pass


class ThresholdsError(BurrscanError):
    """Custom exception for thresholds files that fail validation."""
    pass


# --- Whitelist --- #

@dataclass(frozen=True)
class Whitelist:
    suffixes: FrozenSet[str] = frozenset()
    source: str = "empty"

    def __len__(self) -> int:
        return len(self.suffixes)

    def __contains__(self, name: str) -> bool:
        """True when ``name`` or any of its parent suffixes is listed."""
        labels = name.split(".")
        return any(".".join(labels[i:]) in self.suffixes for i in range(len(labels)))


def _whitelist_entry(line: str) -> Optional[str]:
    text = line.split("#", 1)[0].strip()
    if not text:
        return None
    if "," in text:
        # rank,domain top-sites rows
        text = text.rsplit(",", 1)[1].strip()
    text = text.lstrip("*").lstrip(".")
    return normalize_qname(text) or None


def parse_whitelist(lines: Iterable[str], source: str = "inline") -> Whitelist:
    entries = {entry for entry in map(_whitelist_entry, lines) if entry}
    return Whitelist(frozenset(entries), source)


def load_whitelist(path: Path) -> Whitelist:
    """
    Reads a suffix-per-line whitelist (``#`` comments, ``rank,domain`` rows accepted).

    Raises:
        WhitelistError: When the file cannot be read or is not UTF-8 text.
    """
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise WhitelistError(f"cannot read whitelist {path}: {e}") from e
    whitelist = parse_whitelist(text.splitlines(), str(path))
    logger.info("Loaded %d whitelist suffixes from %s", len(whitelist), path)
    return whitelist


# --- Thresholds --- #

class FanoutRule(BaseModel):
    model_config = ConfigDict(extra="forbid")

    subdomains: int = Field(10, ge=1)
    queries: int = Field(100, ge=1)


class Thresholds(BaseModel):
    """Rule thresholds; every field has the documented default."""

    model_config = ConfigDict(extra="forbid")

    len_rule: int = Field(52, ge=1)
    entropy_rule: float = Field(3.5, ge=0)
    nonalpha_rule: float = Field(0.35, ge=0, le=1)
    fanout_rule: FanoutRule = Field(default_factory=FanoutRule)


def load_thresholds(path: Path) -> Thresholds:
    """
    Raises:
        ThresholdsError: Unreadable JSON or a field failing validation (the field is named).
    """
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise ThresholdsError(f"cannot read thresholds {path}: {e}") from e
    try:
        return Thresholds.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first.get("loc", ())) or "thresholds"
        raise ThresholdsError(f"{path}: {where}: {first.get('msg')}") from e


# --- Evidence --- #

def registered_suffix(qname: str) -> str:
    labels = [label for label in qname.split(".") if label]
    if len(labels) >= 3 and labels[-2] in PUBLIC_SECOND_LEVEL:
        return ".".join(labels[-3:])
    return ".".join(labels[-2:])


def subdomain_part(qname: str, suffix: Optional[str] = None) -> str:
    """The name left of its registered suffix, or the suffix's first label when nothing is left."""
    suffix = suffix or registered_suffix(qname)
    if qname.endswith("." + suffix):
        return qname[: -len(suffix) - 1]
    return suffix.split(".", 1)[0]


def shannon_entropy(text: str) -> float:
    """
    Shannon entropy in bits per character, dots excluded.

    Raises:
        EmptyLabel: When nothing but dots (or nothing) is given.
    """
    chars = text.replace(".", "")
    if not chars:
        raise EmptyLabel("entropy of an empty label")
    total = len(chars)
    return -sum((c / total) * math.log2(c / total) for c in Counter(chars).values())


def nonalpha_ratio(text: str) -> float:
    chars = text.replace(".", "")
    if not chars:
        return 0.0
    return sum(1 for ch in chars if not ("a" <= ch <= "z")) / len(chars)


@dataclass(frozen=True)
class DomainEvidence:
    """Aggregated statistics of one name family (names sharing a registered suffix)."""

    registered_suffix: str
    qname: str
    access_count: int
    entropy_bits_per_char: float
    nonalpha_ratio: float
    longest_label_len: int
    total_len: int
    distinct_subdomains_in_family: int
    members: Tuple[str, ...] = field(default_factory=tuple)


def build_evidence(domains: Iterable[Tuple[str, int]]) -> Dict[str, DomainEvidence]:
    """
    Groups ``(qname, count)`` pairs by registered suffix and aggregates each family.

    Entropy, non-alphabetic share, label length and name length are maxima
    over members; accesses are summed and distinct names counted.
    """
    families: Dict[str, Counter] = defaultdict(Counter)
    for qname, count in domains:
        if qname:
            families[registered_suffix(qname)][qname] += count

    evidence: Dict[str, DomainEvidence] = {}
    for family, members in families.items():
        parts = {qname: subdomain_part(qname, family) for qname in members}
        representative = max(members, key=lambda q: (len(q), members[q], q))
        evidence[family] = DomainEvidence(
            registered_suffix=family,
            qname=representative,
            access_count=sum(members.values()),
            entropy_bits_per_char=max(shannon_entropy(p) if p.replace(".", "") else 0.0 for p in parts.values()),
            nonalpha_ratio=max(nonalpha_ratio(p) for p in parts.values()),
            longest_label_len=max(len(label) for q in members for label in q.split(".")),
            total_len=max(len(q) for q in members),
            distinct_subdomains_in_family=len(members),
            members=tuple(sorted(members)),
        )
    return evidence


# --- Verdicts --- #

class Classification(str, enum.Enum):
    BENIGN = "benign"
    SUSPICIOUS = "suspicious"
    TUNNEL = "tunnel"

    @property
    def severity(self) -> int:
        return {"benign": 0, "suspicious": 1, "tunnel": 2}[self.value]


@dataclass(frozen=True)
class Verdict:
    family: str
    classification: Classification
    reasons: Tuple[Tuple[str, float], ...] = ()
    members: Tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "classification": self.classification.value,
            "reasons": [{"rule": rule, "value": value} for rule, value in self.reasons],
            "members": list(self.members),
        }


def classify(evidence: DomainEvidence, whitelist: Whitelist, thresholds: Thresholds) -> Verdict:
    """
    Verdict for one family.

    Whitelisted families are benign. Otherwise the content rules (entropy,
    non-alphabetic share) and the volume rules (name length, fan-out) are
    evaluated; both groups firing means tunnel, one group suspicious.
    """
    family = evidence.registered_suffix
    if family in whitelist:
        return Verdict(family, Classification.BENIGN, (), evidence.members)

    fanout = thresholds.fanout_rule
    fired = []
    if evidence.total_len > thresholds.len_rule:
        fired.append(("R1_length", float(evidence.total_len)))
    if evidence.entropy_bits_per_char > thresholds.entropy_rule:
        fired.append(("R2_entropy", round(evidence.entropy_bits_per_char, 4)))
    if evidence.nonalpha_ratio > thresholds.nonalpha_rule:
        fired.append(("R3_nonalpha", round(evidence.nonalpha_ratio, 4)))
    if evidence.distinct_subdomains_in_family >= fanout.subdomains and evidence.access_count >= fanout.queries:
        fired.append(("R4_fanout", float(evidence.distinct_subdomains_in_family)))

    rules = {rule for rule, _ in fired}
    content = bool(rules & {"R2_entropy", "R3_nonalpha"})
    volume = bool(rules & {"R1_length", "R4_fanout"})
    if content and volume:
        classification = Classification.TUNNEL
    elif content or volume:
        classification = Classification.SUSPICIOUS
    else:
        classification = Classification.BENIGN
    return Verdict(family, classification, tuple(fired), evidence.members)


class FamilyVerifier(Protocol):
    """
    Extra verification step, e.g. replaying a family against a sandboxed resolver.

    ``review`` returns a replacement verdict, or None to keep the given one.
    """

    def review(self, evidence: DomainEvidence, verdict: Verdict) -> Optional[Verdict]:
        ...


def verify_families(
    domains: Iterable[Tuple[str, int]],
    whitelist: Whitelist,
    thresholds: Thresholds,
    verifiers: Sequence[FamilyVerifier] = (),
) -> List[Verdict]:
    """
    Classifies every family among ``domains``, most severe first.

    Verifiers run after the rules; whitelisted families stay benign.
    """
    verdicts: List[Verdict] = []
    for family, evidence in build_evidence(domains).items():
        verdict = classify(evidence, whitelist, thresholds)
        if family not in whitelist:
            for verifier in verifiers:
                reviewed = verifier.review(evidence, verdict)
                if reviewed is not None:
                    verdict = replace(reviewed, family=family, members=evidence.members)
        if verdict.classification is not Classification.BENIGN:
            logger.info("Family %s: %s (%s)", family, verdict.classification.value,
                        ", ".join(rule for rule, _ in verdict.reasons))
        verdicts.append(verdict)
    verdicts.sort(key=lambda v: (-v.classification.severity, v.family))
    return verdicts
