"""DNS wire-format name codec (RFC 1035 labels and compression pointers)."""

import struct
from typing import Iterable, List, Tuple

MAX_LABEL_LEN = 63
MAX_NAME_LEN = 255  # wire octets, length bytes and terminal zero included
MAX_POINTER_HOPS = 127
HEADER_LEN = 12

_KEEP = frozenset(b"abcdefghijklmnopqrstuvwxyz0123456789-_")
_KEEP_TEXT = _KEEP | frozenset(b"%")


class MalformedName(Exception):
    """Custom exception for a QNAME that violates RFC 1035 encoding rules."""
    pass


def _escape_label(raw: bytes, keep: frozenset = _KEEP) -> str:
    out = []
    for byte in raw:
        if 0x41 <= byte <= 0x5A:
            out.append(chr(byte + 0x20))
        elif byte in keep:
            out.append(chr(byte))
        else:
            out.append(f"%{byte:02x}")
    return "".join(out)


def normalize_qname(name: str) -> str:
    """
    Normalizes a textual domain name.

    Lowercases ASCII, drops the trailing root dot and empty labels, and
    percent-escapes anything outside ``[a-z0-9-_%]``. Idempotent, and the
    identity on names produced by ``decode_qname``.

    Args:
        name: Name as captured, e.g. ``"WWW.Example.COM."``.

    Returns:
        The normalized name, e.g. ``"www.example.com"``.
    """
    labels = [label for label in name.strip().split(".") if label]
    return ".".join(_escape_label(label.encode("utf-8"), _KEEP_TEXT) for label in labels)


def decode_qname(message: bytes, offset: int) -> Tuple[str, int]:
    """
    Decodes a (possibly compressed) domain name from a DNS message.

    Args:
        message: The complete DNS message.
        offset: Position of the first length octet of the name.

    Returns:
        ``(qname, next_offset)`` where qname is normalized and next_offset is
        the position right after the name at its original location (after the
        first pointer, if the name is compressed).

    Raises:
        MalformedName: On out-of-bounds reads, labels longer than 63 bytes,
            reserved label types, names longer than 255 bytes, or pointer
            loops (more than 127 hops).
    """
    size = len(message)
    if offset < 0 or offset >= size:
        raise MalformedName(f"offset {offset} outside message of {size} bytes")

    labels: List[str] = []
    wire_len = 0
    hops = 0
    pos = offset
    next_offset = -1

    while True:
        if pos >= size:
            raise MalformedName(f"name runs past end of message at {pos}")
        length = message[pos]
        kind = length & 0xC0
        if kind == 0xC0:
            if pos + 1 >= size:
                raise MalformedName(f"truncated compression pointer at {pos}")
            hops += 1
            if hops > MAX_POINTER_HOPS:
                raise MalformedName("compression pointer loop")
            if next_offset < 0:
                next_offset = pos + 2
            pos = ((length & 0x3F) << 8) | message[pos + 1]
            continue
        if kind:
            raise MalformedName(f"reserved label type 0x{length:02x} at {pos}")
        if length == 0:
            wire_len += 1
            if wire_len > MAX_NAME_LEN:
                raise MalformedName(f"name longer than {MAX_NAME_LEN} bytes")
            if next_offset < 0:
                next_offset = pos + 1
            break
        end = pos + 1 + length
        if end > size:
            raise MalformedName(f"label at {pos} runs past end of message")
        wire_len += 1 + length
        if wire_len > MAX_NAME_LEN:
            raise MalformedName(f"name longer than {MAX_NAME_LEN} bytes")
        labels.append(_escape_label(message[pos + 1:end]))
        pos = end

    return ".".join(labels), next_offset


def encode_qname(name: str) -> bytes:
    """
    Encodes a dotted name as uncompressed RFC 1035 labels.

    Raises:
        MalformedName: If a label exceeds 63 bytes or the name exceeds 255 bytes.
    """
    out = bytearray()
    for label in (part for part in name.strip(".").split(".") if part):
        raw = label.encode("ascii")
        if len(raw) > MAX_LABEL_LEN:
            raise MalformedName(f"label {label[:16]!r}... longer than {MAX_LABEL_LEN} bytes")
        out.append(len(raw))
        out += raw
    out.append(0)
    if len(out) > MAX_NAME_LEN:
        raise MalformedName(f"name longer than {MAX_NAME_LEN} bytes")
    return bytes(out)


# --- Message helpers --- #

def parse_header(message: bytes) -> Tuple[int, int, int, int]:
    """
    Returns ``(txid, flags, qdcount, ancount)`` of a DNS message.

    Raises:
        MalformedName: If the message is shorter than the 12-byte header.
    """
    if len(message) < HEADER_LEN:
        raise MalformedName(f"message of {len(message)} bytes has no complete header")
    txid, flags, qdcount, ancount = struct.unpack("!HHHH", message[:8])
    return txid, flags, qdcount, ancount


def is_response(flags: int) -> bool:
    return bool(flags & 0x8000)


def read_question(message: bytes, offset: int) -> Tuple[str, int, int]:
    """
    Reads one question entry.

    Returns:
        ``(qname, qtype, next_offset)``.

    Raises:
        MalformedName: If the name or the fixed QTYPE/QCLASS fields are truncated.
    """
    qname, pos = decode_qname(message, offset)
    if pos + 4 > len(message):
        raise MalformedName("question truncated before QTYPE/QCLASS")
    qtype, _qclass = struct.unpack("!HH", message[pos:pos + 4])
    return qname, qtype, pos + 4


def build_query(name: str, qtype: int = 1, txid: int = 0, questions: Iterable[str] = ()) -> bytes:
    """Builds a minimal standard query message (RD set) for ``name`` plus any extra questions."""
    names = [name, *questions]
    header = struct.pack("!HHHHHH", txid & 0xFFFF, 0x0100, len(names), 0, 0, 0)
    body = b"".join(encode_qname(n) + struct.pack("!HH", qtype, 1) for n in names)
    return header + body


if __name__ == "__main__":
    sample = build_query("Example.COM", qtype=16, txid=0x1234)
    print(sample.hex())
    print(read_question(sample, HEADER_LEN))
