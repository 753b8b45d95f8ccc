# tests/conftest.py
import socket
import sys
from pathlib import Path
from types import SimpleNamespace

import dpkt
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

from burrscan.ingest import write_query_log  # noqa: E402
from burrscan.synth import SynthSpec, build_dataset, write_labels  # noqa: E402
from burrscan.wire import build_query  # noqa: E402


def udp_frame(payload: bytes, sport: int = 40000, dport: int = 53, src: str = "10.0.0.7") -> bytes:
    udp = dpkt.udp.UDP(sport=sport, dport=dport, data=payload)
    udp.ulen = len(udp)
    ip = dpkt.ip.IP(src=socket.inet_aton(src), dst=socket.inet_aton("10.0.0.53"), p=dpkt.ip.IP_PROTO_UDP, data=udp)
    return bytes(dpkt.ethernet.Ethernet(src=b"\x02" * 6, dst=b"\x04" * 6, type=dpkt.ethernet.ETH_TYPE_IP, data=ip))


def tcp_frame(payload: bytes) -> bytes:
    tcp = dpkt.tcp.TCP(sport=40000, dport=53, data=payload)
    ip = dpkt.ip.IP(src=socket.inet_aton("10.0.0.7"), dst=socket.inet_aton("10.0.0.53"), p=dpkt.ip.IP_PROTO_TCP, data=tcp)
    return bytes(dpkt.ethernet.Ethernet(src=b"\x02" * 6, dst=b"\x04" * 6, type=dpkt.ethernet.ETH_TYPE_IP, data=ip))


def response(name: str) -> bytes:
    query = bytearray(build_query(name, txid=9))
    query[2] |= 0x80  # QR bit
    return bytes(query)


@pytest.fixture
def write_pcap(tmp_path):
    """Writes ``[(ts, frame), ...]`` to an Ethernet pcap and returns its path."""
    def _write(frames, name="capture.pcap", linktype=dpkt.pcap.DLT_EN10MB):
        path = tmp_path / name
        with path.open("wb") as f:
            writer = dpkt.pcap.Writer(f, linktype=linktype)
            for ts, frame in frames:
                writer.writepkt(frame, ts=ts)
        return path
    return _write


@pytest.fixture
def mixed_capture(write_pcap):
    """Two queries, one response, one TCP segment, one two-question query and one junk payload."""
    frames = [
        (1.0, udp_frame(build_query("WWW.Example.COM", txid=1))),
        (2.5, udp_frame(build_query("mail.example.org", qtype=28, txid=2), src="10.0.0.8")),
        (3.0, udp_frame(response("www.example.com"), sport=53, dport=40000)),
        (4.0, tcp_frame(build_query("tcp.example.com"))),
        (5.0, udp_frame(build_query("a.example.com", questions=("b.example.com",)))),
        (6.0, udp_frame(b"\x00\x01\x02")),
    ]
    return write_pcap(frames)


# Three months, each name queried once, plus the default tunnel burst in the second month
TUNNEL_SPEC = {
    "seed": 3,
    "benign": {"unique_names": 150_000, "max_visits": 1, "span_days": 90},
    "tunnel": {},
}
BENIGN_SPEC = {
    "seed": 8,
    "benign": {"unique_names": 20_000, "max_visits": 2, "span_days": 60},
}


def _materialize(directory: Path, payload: dict):
    spec = SynthSpec.model_validate(payload)
    records, labels = build_dataset(spec)
    queries = directory / "queries.csv"
    write_query_log(records, queries)
    write_labels(labels, directory / "labels.csv")
    return SimpleNamespace(queries=queries, labels=directory / "labels.csv", records=records, label_map=labels)


@pytest.fixture(scope="session")
def tunnel_dataset(tmp_path_factory):
    """Query log and labels of the three-month dataset with one tunnel burst."""
    return _materialize(tmp_path_factory.mktemp("tunnel"), TUNNEL_SPEC)


@pytest.fixture(scope="session")
def benign_dataset(tmp_path_factory):
    return _materialize(tmp_path_factory.mktemp("benign"), BENIGN_SPEC)


@pytest.fixture(scope="session")
def make_dataset(tmp_path_factory):
    """Factory writing the query log and labels of a synth payload into a fresh directory."""

    def _make(payload: dict):
        return _materialize(tmp_path_factory.mktemp("dataset"), payload)

    return _make
