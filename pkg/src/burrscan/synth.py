"""
Synthetic labeled DNS traffic and the evaluation metrics.

Benign traffic follows the length model the detector assumes: unique
names with normally distributed lengths, each visited uniformly 1..M
times over the span. Tunnel traffic is a burst of encoded names of one
length under one suffix.
"""

import csv
import json
import logging
import math
import random
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Literal, Optional, Sequence, Set, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from burrscan.config import BurrscanError
from burrscan.ingest import QueryRecord, SchemaError
from burrscan.spaces import DomainSampleSpace, LengthHistogram, SpaceKind, space_from_counts
from burrscan.wire import MAX_LABEL_LEN, normalize_qname

logger = logging.getLogger(__name__)

DAY_US = 86_400 * 1_000_000
DEFAULT_START_US = 1_696_118_400_000_000  # 2023-10-01T00:00:00Z
BENIGN = "benign"
TUNNEL = "tunnel"
TUNNEL_SOURCE = "10.9.9.9"

SUFFIXES = ("com", "net", "org", "cn", "io", "de", "info", "jp", "gov", "co.uk", "com.cn", "edu.cn")
SUBDOMAIN_PREFIXES = ("www", "mail", "api", "cdn", "img", "static", "m")
SYLLABLES = (
    "ba", "be", "bo", "ca", "co", "da", "de", "di", "do", "fa", "fe", "fi", "ga", "go", "ha",
    "he", "ho", "ja", "jo", "ka", "ke", "ki", "ko", "la", "le", "li", "lo", "lu", "ma", "me",
    "mi", "mo", "na", "ne", "ni", "no", "pa", "pe", "pi", "po", "ra", "re", "ri", "ro", "ru",
    "sa", "se", "si", "so", "su", "ta", "te", "ti", "to", "va", "ve", "vi", "wa", "we", "za",
    "an", "en", "in", "on", "ar", "er", "or", "al", "el", "il", "net", "web", "mail", "shop",
    "news", "data", "cloud", "soft", "host", "link", "zone", "hub", "box", "lab", "pay", "app",
    "tech", "star", "line", "home", "blog", "game", "book", "art", "bank", "city", "live",
    "map", "media", "music", "photo", "store", "team", "tv", "video", "wiki", "world",
)
QTYPE_MIX = (1, 1, 1, 1, 28, 28, 15, 16, 5, 12)
BASE32_ALPHABET = "abcdefghijklmnopqrstuvwxyz234567"
HEX_ALPHABET = "0123456789abcdef"
_ALNUM = string.ascii_lowercase + string.digits
_NAME_TRIES = 20
NAME_SYLLABLES = 3
MAX_NAME_LETTERS = 11  # log2(11) < 3.5 bits per character


class UndefinedMetric(BurrscanError):
    """Custom exception for metrics whose denominator is zero."""
    pass


class SynthSpecError(BurrscanError):
    """Custom exception for synthetic dataset specifications that fail validation."""
    pass


# --- Models --- #

@dataclass(frozen=True)
class HotDomain:
    """A popular name queried ``queries`` times, spread over the whole span."""

    qname: str
    queries: int


@dataclass(frozen=True)
class BenignModel:
    unique_names: int = 50_000
    mu: float = 15.0
    sigma: float = 5.0
    length_min: int = 4
    length_max: int = 60
    max_visits: int = 20
    span_us: int = 90 * DAY_US
    start_us: int = DEFAULT_START_US
    seed: int = 0
    hot_domains: Tuple[HotDomain, ...] = ()

    def __post_init__(self):
        if self.max_visits < 1:
            raise ValueError("max_visits must be >= 1")
        if not 1 <= self.length_min < self.length_max:
            raise ValueError(f"invalid length range [{self.length_min}, {self.length_max}]")
        if self.sigma <= 0 or self.span_us <= 0 or self.unique_names < 0:
            raise ValueError("sigma and span must be positive, unique_names nonnegative")


@dataclass(frozen=True)
class TunnelModel:
    suffix: str = "b.tunnel.com"
    qname_len: int = 67
    query_count: int = 5_000
    burst_start_us: int = DEFAULT_START_US + 35 * DAY_US
    burst_span_us: int = DAY_US
    encoder: Literal["base32like", "hexlike"] = "base32like"
    seed: int = 0
    src: str = TUNNEL_SOURCE

    def __post_init__(self):
        if self.query_count < 1:
            raise ValueError("query_count must be >= 1")
        if self.qname_len < len(self.suffix) + 2:
            raise ValueError(f"qname_len {self.qname_len} leaves no room under {self.suffix}")
        if self.qname_len > 253:
            raise ValueError("qname_len above 253 characters cannot be encoded")
        if self.burst_span_us <= 0:
            raise ValueError("burst_span_us must be positive")


# --- Benign traffic --- #

def _draw_lengths(rng: np.random.Generator, model: BenignModel) -> np.ndarray:
    """Rounded Normal(mu, sigma) lengths; out-of-range draws are redrawn."""
    lengths = np.rint(rng.normal(model.mu, model.sigma, model.unique_names)).astype(np.int64)
    bad = (lengths < model.length_min) | (lengths > model.length_max)
    while bad.any():
        lengths[bad] = np.rint(rng.normal(model.mu, model.sigma, int(bad.sum()))).astype(np.int64)
        bad = (lengths < model.length_min) | (lengths > model.length_max)
    return lengths


def _draw_population(model: BenignModel) -> Tuple[np.random.Generator, np.ndarray, np.ndarray]:
    rng = np.random.default_rng(model.seed)
    lengths = _draw_lengths(rng, model)
    visits = rng.integers(1, model.max_visits + 1, size=model.unique_names)
    return rng, lengths, visits


def _syllable_pool(pick: random.Random) -> List[str]:
    """A few syllables for one name, together spelling at most ``MAX_NAME_LETTERS`` distinct letters."""
    pool: List[str] = []
    letters: Set[str] = set()
    for _ in range(3 * NAME_SYLLABLES):
        syllable = pick.choice(SYLLABLES)
        if syllable in pool or len(letters | set(syllable)) > MAX_NAME_LETTERS:
            continue
        pool.append(syllable)
        letters.update(syllable)
        if len(pool) == NAME_SYLLABLES:
            break
    return pool


def _pronounceable(pick: random.Random, size: int) -> str:
    pool = _syllable_pool(pick)
    parts: List[str] = []
    total = 0
    while total < size:
        syllable = pick.choice(pool)
        parts.append(syllable)
        total += len(syllable)
    return "".join(parts)[:size]


def _candidate_name(pick: random.Random, length: int) -> str:
    suffixes = [s for s in SUFFIXES if len(s) + 2 <= length]
    if not suffixes:
        return _pronounceable(pick, length)
    suffix = pick.choice(suffixes)
    body = length - len(suffix) - 1
    prefix = pick.choice(SUBDOMAIN_PREFIXES)
    if body >= 16 and pick.random() < 0.3 and body - len(prefix) - 1 >= 3:
        return f"{prefix}.{_pronounceable(pick, body - len(prefix) - 1)}.{suffix}"
    return f"{_pronounceable(pick, body)}.{suffix}"


def _synthesize_names(rng: np.random.Generator, lengths: np.ndarray, reserved: Iterable[str] = ()) -> List[str]:
    """One distinct name per requested length."""
    pick = random.Random(int(rng.integers(0, 2**63 - 1)))
    taken = set(reserved)
    names: List[str] = []
    for length in lengths.tolist():
        name = None
        for _ in range(_NAME_TRIES):
            candidate = _candidate_name(pick, length)
            if candidate not in taken:
                name = candidate
                break
        while name is None or name in taken:
            name = "".join(pick.choices(_ALNUM, k=length))
        taken.add(name)
        names.append(name)
    return names


def benign_population(model: BenignModel) -> Tuple[List[str], np.ndarray, np.random.Generator]:
    """
    Draws the benign names and their visit counts.

    Returns:
        ``(names, visits, rng)``; the generator is positioned after the
        name draws so callers can continue the same stream.
    """
    rng, lengths, visits = _draw_population(model)
    reserved = [normalize_qname(h.qname) for h in model.hot_domains]
    names = _synthesize_names(rng, lengths, reserved)
    return names, visits, rng


def _sources(rng: np.random.Generator, size: int, pool: int = 250) -> List[str]:
    clients = [f"10.0.{i // 250}.{i % 250 + 1}" for i in range(pool)]
    return [clients[i] for i in rng.integers(0, pool, size=size).tolist()]


def generate_benign(model: BenignModel) -> List[QueryRecord]:
    """
    Benign query records, sorted by ``(timestamp, qname)``; deterministic per seed.

    Each name is queried its drawn number of times at uniform instants over
    the span. Hot domains follow the same timing.
    """
    names, visits, rng = benign_population(model)
    qnames = np.repeat(np.array(names, dtype=object), visits)
    for hot in model.hot_domains:
        qnames = np.concatenate((qnames, np.array([normalize_qname(hot.qname)] * hot.queries, dtype=object)))
    total = len(qnames)
    stamps = rng.integers(model.start_us, model.start_us + model.span_us, size=total)
    qtypes = rng.choice(np.array(QTYPE_MIX), size=total)
    sources = _sources(rng, total)
    records = [
        QueryRecord(int(ts), qname, int(qtype), src)
        for ts, qname, qtype, src in zip(stamps.tolist(), qnames.tolist(), qtypes.tolist(), sources)
    ]
    records.sort(key=lambda r: (r.timestamp_us, r.qname))
    logger.info("Generated %d benign queries over %d names", len(records), len(names))
    return records


def sample_benign_spaces(model: BenignModel) -> Tuple[DomainSampleSpace, DomainSampleSpace]:
    """DNSS and ADNSS of the benign population over the whole span, without building records."""
    names, visits, _ = benign_population(model)
    counts = dict(zip(names, visits.tolist()))
    for hot in model.hot_domains:
        counts[normalize_qname(hot.qname)] = counts.get(normalize_qname(hot.qname), 0) + hot.queries
    return space_from_counts(SpaceKind.DNSS, counts), space_from_counts(SpaceKind.ADNSS, counts)


@dataclass(frozen=True)
class BenignSample:
    """Length histograms of a benign population, drawn without naming it."""

    dnss: LengthHistogram
    adnss: LengthHistogram
    adnss_effective_n: float


def sample_benign_histograms(model: BenignModel) -> BenignSample:
    """
    Fast path: histograms from the drawn lengths and visits only.

    Shares its draws with ``generate_benign`` (hot domains are not included).
    """
    _, lengths, visits = _draw_population(model)
    unique = np.bincount(lengths)
    accessed = np.bincount(lengths, weights=visits)
    dnss = {int(x): int(c) for x, c in enumerate(unique) if c > 0}
    adnss = {int(x): int(c) for x, c in enumerate(accessed) if c > 0}
    total = float(visits.sum())
    squares = float((visits.astype(float) ** 2).sum())
    cap = np.percentile(visits, 99)
    kept = visits[visits <= cap].astype(float)
    dispersion = max(1.0, float((kept ** 2).sum() / kept.sum())) if kept.size else 1.0
    return BenignSample(
        dnss=LengthHistogram(dnss, int(unique.sum()), 1.0),
        adnss=LengthHistogram(adnss, int(total), dispersion),
        adnss_effective_n=total * total / squares if squares else 0.0,
    )


# --- Tunnel traffic --- #

def _label_sizes(payload_len: int) -> List[int]:
    """Splits ``payload_len`` characters (dots included) into labels of at most 63."""
    count = math.ceil((payload_len + 1) / (MAX_LABEL_LEN + 1))
    chars = payload_len - (count - 1)
    base, extra = divmod(chars, count)
    return [base + (1 if i < extra else 0) for i in range(count)]


def encode_payload(pick: random.Random, payload_len: int, encoder: str) -> str:
    alphabet = BASE32_ALPHABET if encoder == "base32like" else HEX_ALPHABET
    labels = ["".join(pick.choices(alphabet, k=size)) for size in _label_sizes(payload_len)]
    return ".".join(labels)


def tunnel_records(model: TunnelModel) -> List[QueryRecord]:
    """``query_count`` TXT queries of exactly ``qname_len`` characters inside the burst interval."""
    rng = np.random.default_rng(model.seed)
    pick = random.Random(int(rng.integers(0, 2**63 - 1)))
    suffix = normalize_qname(model.suffix)
    payload_len = model.qname_len - len(suffix) - 1
    stamps = rng.integers(model.burst_start_us, model.burst_start_us + model.burst_span_us, size=model.query_count)
    records = []
    for ts in stamps.tolist():
        qname = f"{encode_payload(pick, payload_len, model.encoder)}.{suffix}"
        records.append(QueryRecord(int(ts), qname, 16, model.src))
    return records


def inject_tunnel(records: Sequence[QueryRecord], model: TunnelModel) -> List[QueryRecord]:
    """Merges a tunnel burst into ``records``, re-sorted by ``(timestamp, qname)``."""
    merged = list(records) + tunnel_records(model)
    merged.sort(key=lambda r: (r.timestamp_us, r.qname))
    return merged


# --- Labels --- #

def build_labels(benign: Iterable[QueryRecord], tunnel: Iterable[QueryRecord] = ()) -> Dict[str, str]:
    labels = {r.qname: BENIGN for r in benign}
    labels.update({r.qname: TUNNEL for r in tunnel})
    return labels


def write_labels(labels: Dict[str, str], path: Path) -> int:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(("qname", "label"))
        for qname in sorted(labels):
            writer.writerow((qname, labels[qname]))
    return len(labels)


def read_labels(path: Path) -> Dict[str, str]:
    """
    Reads a ``qname,label`` sidecar.

    Raises:
        SchemaError: Missing columns or labels other than benign/tunnel.
    """
    labels: Dict[str, str] = {}
    with path.open("r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        try:
            for column in ("qname", "label"):
                if column not in (reader.fieldnames or []):
                    raise SchemaError(f"labels file lacks column '{column}'", 1, column)
            for row in reader:
                label = (row.get("label") or "").strip().lower()
                if label not in (BENIGN, TUNNEL):
                    raise SchemaError(f"unknown label {label!r}", reader.line_num, "label")
                labels[normalize_qname(row["qname"] or "")] = label
        except UnicodeDecodeError as e:
            raise SchemaError(f"{path.name} is not UTF-8 text ({e.reason})", reader.line_num + 1) from e
    return labels


# --- Metrics --- #

@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fn: int = 0
    fp: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fn, self.fp, self.tn) < 0:
            raise ValueError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.fp + self.tn

    def inverted(self) -> "ConfusionCounts":
        """The same outcomes with the other class taken as positive."""
        return ConfusionCounts(tp=self.tn, fn=self.fp, fp=self.fn, tn=self.tp)


def accuracy(c: ConfusionCounts) -> float:
    if c.total == 0:
        raise UndefinedMetric("accuracy of zero samples")
    return (c.tp + c.tn) / c.total


def precision(c: ConfusionCounts) -> float:
    if c.tp + c.fp == 0:
        raise UndefinedMetric("precision without predicted positives")
    return c.tp / (c.tp + c.fp)


def recall(c: ConfusionCounts) -> float:
    if c.tp + c.fn == 0:
        raise UndefinedMetric("recall without actual positives")
    return c.tp / (c.tp + c.fn)


def f1_score(c: ConfusionCounts) -> float:
    """Harmonic mean of precision and recall; 0 when exactly one of them is 0."""
    p, r = precision(c), recall(c)
    if p + r == 0:
        raise UndefinedMetric("f1 with zero precision and zero recall")
    return 2 * p * r / (p + r)


METRICS = (("accuracy", accuracy), ("precision", precision), ("recall", recall), ("f1", f1_score))


def confusion_metrics(c: ConfusionCounts) -> Dict[str, float]:
    """Every defined metric; undefined ones are left out rather than reported as 0."""
    metrics: Dict[str, float] = {}
    for name, func in METRICS:
        try:
            metrics[name] = func(c)
        except UndefinedMetric as e:
            logger.debug("Skipping %s: %s", name, e)
    return metrics


# --- Dataset specification --- #

class BenignSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    unique_names: int = Field(50_000, ge=0)
    mu: float = 15.0
    sigma: float = Field(5.0, gt=0)
    length_min: int = Field(4, ge=1)
    length_max: int = Field(60, le=253)
    max_visits: int = Field(20, ge=1)
    span_days: float = Field(90.0, gt=0)
    start_us: int = Field(DEFAULT_START_US, ge=0)

    @model_validator(mode="after")
    def _ordered_range(self) -> "BenignSpec":
        if self.length_min >= self.length_max:
            raise ValueError("length_min must be below length_max")
        return self


class HotDomainSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    qname: str
    queries: int = Field(ge=1)


class TunnelSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    suffix: str = "b.tunnel.com"
    qname_len: int = Field(67, le=253)
    query_count: int = Field(5_000, ge=1)
    burst_start_days: float = Field(35.0, ge=0)
    burst_span_days: float = Field(1.0, gt=0)
    encoder: Literal["base32like", "hexlike"] = "base32like"

    @model_validator(mode="after")
    def _room_for_payload(self) -> "TunnelSpec":
        if self.qname_len < len(normalize_qname(self.suffix)) + 2:
            raise ValueError(f"qname_len {self.qname_len} leaves no room under {self.suffix}")
        return self


class SynthSpec(BaseModel):
    """Dataset specification; a missing ``tunnel`` section means benign-only traffic."""

    model_config = ConfigDict(extra="forbid")

    seed: int = 1
    benign: BenignSpec = Field(default_factory=BenignSpec)
    hot_domains: List[HotDomainSpec] = Field(default_factory=list)
    tunnel: Optional[TunnelSpec] = None

    def benign_model(self) -> BenignModel:
        b = self.benign
        return BenignModel(
            unique_names=b.unique_names,
            mu=b.mu,
            sigma=b.sigma,
            length_min=b.length_min,
            length_max=b.length_max,
            max_visits=b.max_visits,
            span_us=int(round(b.span_days * DAY_US)),
            start_us=b.start_us,
            seed=self.seed,
            hot_domains=tuple(HotDomain(h.qname, h.queries) for h in self.hot_domains),
        )

    def tunnel_model(self) -> Optional[TunnelModel]:
        if self.tunnel is None:
            return None
        t = self.tunnel
        return TunnelModel(
            suffix=t.suffix,
            qname_len=t.qname_len,
            query_count=t.query_count,
            burst_start_us=self.benign.start_us + int(round(t.burst_start_days * DAY_US)),
            burst_span_us=int(round(t.burst_span_days * DAY_US)),
            encoder=t.encoder,
            seed=self.seed + 1,
        )


def default_synth_spec() -> SynthSpec:
    """Three months of benign traffic with one tunnel burst in the second month."""
    return SynthSpec(tunnel=TunnelSpec())


def load_synth_spec(path: Path) -> SynthSpec:
    """
    Raises:
        SynthSpecError: Unreadable JSON or a field failing validation (the field is named).
    """
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise SynthSpecError(f"cannot read synth spec {path}: {e}") from e
    try:
        return SynthSpec.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first.get("loc", ())) or "spec"
        raise SynthSpecError(f"{path}: {where}: {first.get('msg')}") from e


def build_dataset(spec: SynthSpec) -> Tuple[List[QueryRecord], Dict[str, str]]:
    """Records and per-name labels for a dataset specification."""
    benign = generate_benign(spec.benign_model())
    tunnel_model = spec.tunnel_model()
    if tunnel_model is None:
        return benign, build_labels(benign)
    tunnel = tunnel_records(tunnel_model)
    merged = sorted(benign + tunnel, key=lambda r: (r.timestamp_us, r.qname))
    return merged, build_labels(benign, tunnel)
