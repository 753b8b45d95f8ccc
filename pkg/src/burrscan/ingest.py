"""Capture and query-log ingestion into a normalized stream of QueryRecord."""

import csv
import logging
import socket
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, List, Optional, Tuple

import dpkt

from burrscan.config import BurrscanError
from burrscan.wire import (
    HEADER_LEN,
    MalformedName,
    build_query,
    is_response,
    normalize_qname,
    parse_header,
    read_question,
)

logger = logging.getLogger(__name__)

PCAP_MAGICS = {
    0xA1B2C3D4,  # microsecond, big-endian header
    0xD4C3B2A1,  # microsecond, byte-swapped
    0xA1B23C4D,  # nanosecond
    0x4D3CB2A1,  # nanosecond, byte-swapped
}
PCAPNG_MAGIC = b"\x0a\x0d\x0d\x0a"
QUERY_LOG_COLUMNS = ("ts_us", "src", "qname", "qtype")
_REQUIRED_COLUMNS = ("ts_us", "qname", "qtype")


class BadMagic(BurrscanError):
    """Custom exception for a capture file without a classic pcap header."""
    pass


class SchemaError(BurrscanError):
    """Custom exception for query-log rows or headers that break the CSV schema."""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[str] = None):
        self.line = line
        self.column = column
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


@dataclass(frozen=True, slots=True)
class QueryRecord:
    """One observed DNS query. ``qname_len`` is derived from ``qname``."""

    timestamp_us: int
    qname: str
    qtype: int
    src: Optional[str] = None
    qname_len: int = field(init=False)

    def __post_init__(self):
        if self.timestamp_us < 0:
            raise ValueError(f"negative timestamp {self.timestamp_us}")
        object.__setattr__(self, "qname_len", len(self.qname))

    @classmethod
    def from_raw(cls, timestamp_us: int, name: str, qtype: int, src: Optional[str] = None) -> "QueryRecord":
        """Builds a record from an unnormalized name."""
        return cls(timestamp_us, normalize_qname(name), qtype, src or None)


@dataclass
class IngestStats:
    """
    Counters for one ingestion pass.

    ``dns_messages == queries_emitted + responses_skipped + malformed_skipped``
    once the record stream is exhausted. ``queries_emitted`` counts accepted query
    messages and ``records_emitted`` counts their question entries, one record each.
    """

    packets_seen: int = 0
    dns_messages: int = 0
    queries_emitted: int = 0
    records_emitted: int = 0
    responses_skipped: int = 0
    malformed_skipped: int = 0
    other_skipped: int = 0

    def merge(self, other: "IngestStats") -> "IngestStats":
        return IngestStats(**{k: v + getattr(other, k) for k, v in asdict(self).items()})

    def to_dict(self) -> dict:
        return asdict(self)


# --- Packet captures --- #

class _ClampedReader:
    """File wrapper that never asks the OS for more bytes than remain (fuzzed caplen values)."""

    def __init__(self, fileobj: BinaryIO, size: int):
        self._f = fileobj
        self._size = size
        self.name = getattr(fileobj, "name", "<capture>")

    def read(self, n: int = -1) -> bytes:
        remaining = self._size - self._f.tell()
        if n is None or n < 0 or n > remaining:
            n = max(0, remaining)
        return self._f.read(n)


def _network_layer(linktype: int, frame: bytes):
    if linktype == dpkt.pcap.DLT_EN10MB:
        return dpkt.ethernet.Ethernet(frame).data
    if linktype == dpkt.pcap.DLT_LINUX_SLL:
        return dpkt.sll.SLL(frame).data
    return None


def _dns_payload(linktype: int, frame: bytes, port: int) -> Optional[bytes]:
    ip = _network_layer(linktype, frame)
    if not isinstance(ip, (dpkt.ip.IP, dpkt.ip6.IP6)):
        return None
    udp = ip.data
    if not isinstance(udp, dpkt.udp.UDP):
        return None
    if udp.dport != port and udp.sport != port:
        return None
    return bytes(udp.data)


def _source_address(linktype: int, frame: bytes) -> Optional[str]:
    ip = _network_layer(linktype, frame)
    if isinstance(ip, (dpkt.ip.IP, dpkt.ip6.IP6)):
        return dpkt.utils.inet_to_str(ip.src)
    return None


def _decode_query(payload: bytes) -> Optional[List[Tuple[str, int]]]:
    """
    Returns ``(qname, qtype)`` for every question of a query message, None for a response.

    The whole message is malformed when any question is truncated or unreadable.
    """
    _txid, flags, qdcount, _ancount = parse_header(payload)
    if is_response(flags):
        return None
    if qdcount == 0:
        raise MalformedName("query carries no question")
    questions = []
    offset = HEADER_LEN
    for _ in range(qdcount):
        qname, qtype, offset = read_question(payload, offset)
        questions.append((qname, qtype))
    return questions


def check_capture_magic(path: Path) -> bool:
    """True when ``path`` starts with a classic pcap magic number (either byte order)."""
    with path.open("rb") as f:
        head = f.read(4)
    if len(head) < 4:
        return False
    return struct.unpack("<I", head)[0] in PCAP_MAGICS or struct.unpack(">I", head)[0] in PCAP_MAGICS


def parse_capture(path: Path, port_filter: int = 53) -> Tuple[Iterator[QueryRecord], IngestStats]:
    """
    Streams DNS query records out of a classic pcap file.

    One record is emitted per question entry of every UDP DNS query message
    on ``port_filter`` (either direction). Responses, TCP and every other packet are counted
    and skipped. Per-packet problems never abort the stream.

    Args:
        path: Capture file path.
        port_filter: UDP port carrying DNS.

    Returns:
        ``(records, stats)``. ``stats`` is updated while ``records`` is consumed.

    Raises:
        FileNotFoundError: If the capture does not exist.
        BadMagic: If the file does not start with a classic pcap header.
    """
    if not path.is_file():
        raise FileNotFoundError(f"Capture file not found: {path}")
    if not check_capture_magic(path):
        raise BadMagic(f"{path} is not a classic pcap capture")

    stats = IngestStats()
    size = path.stat().st_size

    def _records() -> Iterator[QueryRecord]:
        with path.open("rb") as f:
            try:
                reader = dpkt.pcap.Reader(_ClampedReader(f, size))
            except (ValueError, dpkt.UnpackError) as e:
                raise BadMagic(f"{path}: unreadable pcap header ({e})") from e
            linktype = reader.datalink()
            packets = iter(reader)
            while True:
                try:
                    ts, frame = next(packets)
                except StopIteration:
                    break
                except (dpkt.UnpackError, struct.error) as e:
                    logger.debug("Truncated record header in %s: %s", path.name, e)
                    break
                stats.packets_seen += 1
                try:
                    payload = _dns_payload(linktype, frame, port_filter)
                except Exception as e:
                    logger.debug("Undecodable frame %d in %s: %s", stats.packets_seen, path.name, e)
                    payload = None
                if payload is None:
                    stats.other_skipped += 1
                    continue

                stats.dns_messages += 1
                try:
                    decoded = _decode_query(payload)
                except MalformedName as e:
                    logger.debug("Malformed DNS message in packet %d: %s", stats.packets_seen, e)
                    stats.malformed_skipped += 1
                    continue
                if decoded is None:
                    stats.responses_skipped += 1
                    continue
                stats.queries_emitted += 1
                timestamp_us = max(0, int(round(ts * 1_000_000)))
                src = _source_address(linktype, frame)
                for qname, qtype in decoded:
                    stats.records_emitted += 1
                    yield QueryRecord(timestamp_us=timestamp_us, qname=qname, qtype=qtype, src=src)

    return _records(), stats


def _query_frame(record: QueryRecord, txid: int) -> bytes:
    udp = dpkt.udp.UDP(sport=1024 + txid % 60000, dport=53, data=build_query(record.qname, record.qtype, txid))
    udp.ulen = len(udp)
    src = record.src or "10.0.0.1"
    if ":" in src:
        ip = dpkt.ip6.IP6(
            src=socket.inet_pton(socket.AF_INET6, src),
            dst=socket.inet_pton(socket.AF_INET6, "fd00::53"),
            nxt=dpkt.ip.IP_PROTO_UDP,
            hlim=64,
            plen=len(udp),
            data=udp,
        )
        eth_type = dpkt.ethernet.ETH_TYPE_IP6
    else:
        ip = dpkt.ip.IP(
            src=socket.inet_aton(src),
            dst=socket.inet_aton("10.0.0.53"),
            p=dpkt.ip.IP_PROTO_UDP,
            ttl=64,
            data=udp,
        )
        eth_type = dpkt.ethernet.ETH_TYPE_IP
    eth = dpkt.ethernet.Ethernet(src=b"\x02\x00\x00\x00\x00\x01", dst=b"\x02\x00\x00\x00\x00\x35",
                                 type=eth_type, data=ip)
    return bytes(eth)


def write_capture(records: Iterable[QueryRecord], path: Path) -> int:
    """
    Writes records as an Ethernet pcap of single-question UDP queries.

    Names are encoded from their text form, so percent escapes are not undone.
    Returns the number of packets written.
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("wb") as f:
        writer = dpkt.pcap.Writer(f, linktype=dpkt.pcap.DLT_EN10MB)
        for record in records:
            writer.writepkt(_query_frame(record, count & 0xFFFF), ts=record.timestamp_us / 1_000_000)
            count += 1
    return count


# --- Query logs --- #

def _undecodable(value: Optional[str]) -> bool:
    """True when ``value`` carries bytes that were smuggled through ``surrogateescape``."""
    return isinstance(value, str) and any("\udc80" <= ch <= "\udcff" for ch in value)


def _parse_row(row: dict, line: int) -> QueryRecord:
    for column in _REQUIRED_COLUMNS:
        if row.get(column) in (None, ""):
            raise SchemaError(f"missing value for column '{column}'", line, column)
    for column in QUERY_LOG_COLUMNS:
        if _undecodable(row.get(column)):
            raise SchemaError(f"column '{column}' is not valid UTF-8", line, column)
    try:
        ts_us = int(row["ts_us"])
    except ValueError as e:
        raise SchemaError(f"ts_us is not an integer: {row['ts_us']!r}", line, "ts_us") from e
    try:
        qtype = int(row["qtype"])
    except ValueError as e:
        raise SchemaError(f"qtype is not an integer: {row['qtype']!r}", line, "qtype") from e
    if ts_us < 0:
        raise SchemaError(f"negative ts_us {ts_us}", line, "ts_us")
    if not 0 <= qtype <= 0xFFFF:
        raise SchemaError(f"qtype {qtype} outside 0..65535", line, "qtype")
    return QueryRecord.from_raw(ts_us, row["qname"], qtype, (row.get("src") or "").strip() or None)


def read_query_log(
    path: Path,
    max_errors: int = 100,
    errors: Optional[List[SchemaError]] = None,
) -> Iterator[QueryRecord]:
    """
    Streams records from a ``ts_us,src,qname,qtype`` CSV query log.

    Bad rows, including rows with bytes that are not UTF-8, are skipped and
    appended to ``errors`` (when given).

    Args:
        path: CSV file with a header row.
        max_errors: Row errors tolerated before giving up.
        errors: Optional list collecting the row-level SchemaErrors.

    Raises:
        SchemaError: When a required column is missing from the header, or
            when more than ``max_errors`` rows are invalid.
    """
    with path.open("r", encoding="utf-8", errors="surrogateescape", newline="") as f:
        reader = csv.DictReader(f)
        header = reader.fieldnames or []
        for column in _REQUIRED_COLUMNS:
            if column not in header:
                raise SchemaError(f"header lacks required column '{column}'", 1, column)
        bad = 0
        for row in reader:
            try:
                yield _parse_row(row, reader.line_num)
            except SchemaError as e:
                bad += 1
                logger.debug("Skipping row in %s: %s", path.name, e)
                if errors is not None:
                    errors.append(e)
                if bad > max_errors:
                    raise SchemaError(f"more than {max_errors} invalid rows in {path.name}", reader.line_num) from e


def write_query_log(records: Iterable[QueryRecord], path: Path) -> int:
    """Writes records as a query-log CSV. Returns the number of rows written."""
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(QUERY_LOG_COLUMNS)
        for record in records:
            writer.writerow((record.timestamp_us, record.src or "", record.qname, record.qtype))
            count += 1
    return count


def _reject_binary(path: Path, probe_size: int = 4096) -> None:
    with path.open("rb") as f:
        head = f.read(probe_size)
    if head.startswith(PCAPNG_MAGIC):
        raise BadMagic(f"{path} is a pcapng capture; convert it to classic pcap (editcap -F pcap)")
    if not check_capture_magic(path) and b"\x00" in head:
        raise BadMagic(f"{path} is a binary file, neither a classic pcap capture nor a CSV query log")


def load_records(path: Path, port_filter: int = 53) -> Tuple[List[QueryRecord], IngestStats]:
    """
    Loads every record of one input, choosing the reader by file signature.

    Captures go through ``parse_capture``; anything else is read as a query log.

    Raises:
        FileNotFoundError: If ``path`` does not exist.
        BadMagic: For pcapng and other binary files that are neither a capture nor a log.
        SchemaError: From the query-log reader.
    """
    if not path.is_file():
        raise FileNotFoundError(f"Input file not found: {path}")
    _reject_binary(path)
    if check_capture_magic(path):
        stream, stats = parse_capture(path, port_filter)
        records = list(stream)
        logger.info("%s: %d queries from %d packets", path.name, len(records), stats.packets_seen)
        return records, stats
    row_errors: List[SchemaError] = []
    records = list(read_query_log(path, errors=row_errors))
    stats = IngestStats(
        dns_messages=len(records) + len(row_errors),
        queries_emitted=len(records),
        records_emitted=len(records),
        malformed_skipped=len(row_errors),
    )
    stats.packets_seen = stats.dns_messages
    if row_errors:
        logger.warning("%s: skipped %d malformed rows", path.name, len(row_errors))
    return records, stats
