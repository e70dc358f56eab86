"""
Ingest: capture files -> normalized ProbePacket stream, plus offline enrichment.

Inputs:
- NDJSON, one probe per line (see packet_to_record for the field set)
- pcap / pcapng captures containing IPv6 frames (decoded with dpkt)

Enrichment never touches the network: ASN, country, network type and RDNS
come from CSV snapshots loaded into longest-prefix-match tables.
"""

import csv
import json
import logging
import struct
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Any, Callable, Dict, IO, Iterable, Iterator, List, Optional, Sequence, Tuple

import dpkt

from addr6 import (
    Address6, Level, Prefix6, PrefixTable, ProbePacket, SourceKey, PROTOCOLS,
    TCP_FLAG_ORDER, canonical_flags, contains, parse_address, parse_prefix, render,
)
from errors import DataError, IngestError

log = logging.getLogger("ingest")

NETTYPES = ("hosting", "isp", "education", "business", "government", "unknown")
DEFAULT_PAYLOAD_CAP = 256
MAX_STORED_ERRORS = 1000

EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
ONE_US = timedelta(microseconds=1)

# pcap link types we can decode
LINK_ETHERNET = 1
LINK_RAW = (12, 14, 101)
LINK_SLL = 113
LINK_LOOPBACK = (0, 108)

PCAP_MAGICS = (
    b"\xa1\xb2\xc3\xd4", b"\xd4\xc3\xb2\xa1",  # microsecond
    b"\xa1\xb2\x3c\x4d", b"\x4d\x3c\xb2\xa1",  # nanosecond
)
PCAPNG_MAGIC = b"\x0a\x0d\x0d\x0a"

IP_PROTO_FRAGMENT = 44


@dataclass
class IngestSummary:
    read: int = 0
    accepted: int = 0
    rejected: int = 0
    excluded: int = 0
    skipped: int = 0
    errors: List[Tuple[int, str]] = field(default_factory=list)

    def reject(self, line_no: int, msg: str) -> None:
        self.rejected += 1
        if len(self.errors) < MAX_STORED_ERRORS:
            self.errors.append((line_no, msg))
        log.warning(f"line {line_no}: rejected ({msg})")

    def as_dict(self) -> Dict[str, int]:
        return {
            "read": self.read, "accepted": self.accepted, "rejected": self.rejected,
            "excluded": self.excluded, "skipped": self.skipped,
        }


# ---------- timestamps ----------
def parse_ts(value: Any) -> int:
    """Integer microseconds, or an RFC 3339 string, -> microseconds since epoch."""
    if isinstance(value, bool):
        raise ValueError("boolean timestamp")
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        s = value.strip()
        if s.lstrip("-").isdigit():
            return int(s)
        dt = datetime.fromisoformat(s.replace("Z", "+00:00").replace("z", "+00:00"))
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=timezone.utc)
        return (dt - EPOCH) // ONE_US
    raise ValueError(f"bad timestamp {value!r}")


def format_ts(ts_us: int) -> str:
    dt = EPOCH + timedelta(microseconds=ts_us)
    return dt.strftime("%Y-%m-%dT%H:%M:%S.%fZ")


# ---------- exclusion ----------
def is_excluded(pkt: ProbePacket, exclude: Sequence[Prefix6]) -> bool:
    return any(contains(p, pkt.src) or contains(p, pkt.dst) for p in exclude)


# ---------- NDJSON ----------
def _opt_int(rec: Dict[str, Any], key: str) -> Optional[int]:
    v = rec.get(key)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValueError(f"{key} must be an integer")
    return v


def record_to_packet(rec: Dict[str, Any], payload_cap: int = DEFAULT_PAYLOAD_CAP) -> ProbePacket:
    for key in ("ts", "src", "dst", "proto", "telescope"):
        if key not in rec or rec[key] is None:
            raise ValueError(f"missing field {key}")
    proto = rec["proto"]
    if proto not in PROTOCOLS:
        raise ValueError(f"unknown proto {proto!r}")

    flags = rec.get("tcp_flags")
    if flags is not None:
        if not isinstance(flags, str) or any(c not in TCP_FLAG_ORDER for c in flags.upper()):
            raise ValueError(f"bad tcp_flags {flags!r}")
        flags = canonical_flags(flags)

    payload = b""
    if rec.get("payload_hex"):
        payload = bytes.fromhex(rec["payload_hex"])[:payload_cap]

    return ProbePacket(
        ts=parse_ts(rec["ts"]),
        src=parse_address(rec["src"]),
        dst=parse_address(rec["dst"]),
        proto=proto,
        sport=_opt_int(rec, "sport"),
        dport=_opt_int(rec, "dport"),
        icmp_type=_opt_int(rec, "icmp_type"),
        tcp_flags=flags,
        payload=payload,
        telescope=str(rec["telescope"]),
    )


def packet_to_record(pkt: ProbePacket) -> Dict[str, Any]:
    rec: Dict[str, Any] = {
        "ts": pkt.ts,
        "src": render(pkt.src),
        "dst": render(pkt.dst),
        "proto": pkt.proto,
    }
    if pkt.sport is not None:
        rec["sport"] = pkt.sport
    if pkt.dport is not None:
        rec["dport"] = pkt.dport
    if pkt.icmp_type is not None:
        rec["icmp_type"] = pkt.icmp_type
    if pkt.tcp_flags is not None:
        rec["tcp_flags"] = pkt.tcp_flags
    if pkt.payload:
        rec["payload_hex"] = pkt.payload.hex()
    rec["telescope"] = pkt.telescope
    return rec


def read_ndjson(
    stream: Iterable[Any],
    summary: Optional[IngestSummary] = None,
    exclude: Sequence[Prefix6] = (),
    payload_cap: int = DEFAULT_PAYLOAD_CAP,
) -> Iterator[ProbePacket]:
    """Yield packets in file order. Bad lines are rejected and counted, never raised."""
    summary = summary if summary is not None else IngestSummary()
    for line_no, line in enumerate(stream, 1):
        line = line.strip()
        if not line:
            continue
        summary.read += 1
        try:
            if isinstance(line, bytes):
                line = line.decode("utf-8")
            rec = json.loads(line)
            if not isinstance(rec, dict):
                raise ValueError("record is not an object")
            pkt = record_to_packet(rec, payload_cap)
        except (ValueError, TypeError) as e:
            summary.reject(line_no, str(e))
            continue
        if exclude and is_excluded(pkt, exclude):
            summary.excluded += 1
            continue
        summary.accepted += 1
        yield pkt


def write_ndjson(packets: Iterable[ProbePacket], stream: IO[str]) -> int:
    n = 0
    for pkt in packets:
        stream.write(json.dumps(packet_to_record(pkt), separators=(",", ":")) + "\n")
        n += 1
    return n


# ---------- pcap ----------
def _flags_text(bits: int) -> str:
    out = ""
    if bits & dpkt.tcp.TH_SYN:
        out += "S"
    if bits & dpkt.tcp.TH_ACK:
        out += "A"
    if bits & dpkt.tcp.TH_FIN:
        out += "F"
    if bits & dpkt.tcp.TH_RST:
        out += "R"
    if bits & dpkt.tcp.TH_PUSH:
        out += "P"
    if bits & dpkt.tcp.TH_URG:
        out += "U"
    return out


def _ip6_of(linktype: int, buf: bytes) -> Optional[dpkt.ip6.IP6]:
    if linktype == LINK_ETHERNET:
        ip = dpkt.ethernet.Ethernet(buf).data
    elif linktype in LINK_RAW:
        if not buf or buf[0] >> 4 != 6:
            return None
        ip = dpkt.ip6.IP6(buf)
    elif linktype == LINK_SLL:
        ip = dpkt.sll.SLL(buf).data
    elif linktype in LINK_LOOPBACK:
        ip = dpkt.loopback.Loopback(buf).data
    else:
        raise IngestError(f"unsupported pcap link type {linktype}")
    return ip if isinstance(ip, dpkt.ip6.IP6) else None


def _frame_to_packet(ts: float, ip6: dpkt.ip6.IP6, telescope: str, payload_cap: int) -> Optional[ProbePacket]:
    frag = (getattr(ip6, "extension_hdrs", None) or {}).get(IP_PROTO_FRAGMENT)
    if frag is not None and getattr(frag, "frag_off", 0) != 0:
        return None

    tr = ip6.data
    common = {
        "ts": int(round(float(ts) * 1_000_000)),
        "src": Address6(bytes(ip6.src)),
        "dst": Address6(bytes(ip6.dst)),
        "telescope": telescope,
    }
    if isinstance(tr, dpkt.tcp.TCP):
        return ProbePacket(proto="tcp", sport=tr.sport, dport=tr.dport,
                           tcp_flags=_flags_text(tr.flags),
                           payload=bytes(tr.data)[:payload_cap], **common)
    if isinstance(tr, dpkt.udp.UDP):
        return ProbePacket(proto="udp", sport=tr.sport, dport=tr.dport,
                           payload=bytes(tr.data)[:payload_cap], **common)
    if isinstance(tr, dpkt.icmp6.ICMP6):
        return ProbePacket(proto="icmp6", icmp_type=tr.type,
                           payload=bytes(tr)[4:][:payload_cap], **common)
    return None


def read_pcap(
    stream: IO[bytes],
    summary: Optional[IngestSummary] = None,
    exclude: Sequence[Prefix6] = (),
    payload_cap: int = DEFAULT_PAYLOAD_CAP,
    telescope_of: Optional[Callable[[Address6], str]] = None,
) -> Iterator[ProbePacket]:
    """Yield IPv6 probes from a pcap/pcapng stream.

    Non-IPv6 frames, non-first fragments and frames without a TCP/UDP/ICMPv6
    header are skipped and counted. A truncated file raises IngestError after
    every complete frame before the damage has been yielded.
    """
    summary = summary if summary is not None else IngestSummary()
    try:
        reader = dpkt.pcap.UniversalReader(stream)
    except (ValueError, dpkt.NeedData, dpkt.UnpackError) as e:
        raise IngestError(f"not a pcap/pcapng stream: {e}") from e
    linktype = reader.datalink()

    frames = iter(reader)
    while True:
        try:
            ts, buf = next(frames)
        except StopIteration:
            break
        except (dpkt.NeedData, dpkt.UnpackError, struct.error, ValueError) as e:
            raise IngestError(f"truncated capture after {summary.read} frames: {e}") from e

        summary.read += 1
        try:
            ip6 = _ip6_of(linktype, buf)
            pkt = None
            if ip6 is not None:
                dst = Address6(bytes(ip6.dst))
                telescope = telescope_of(dst) if telescope_of else ""
                pkt = _frame_to_packet(ts, ip6, telescope, payload_cap)
        except (dpkt.NeedData, dpkt.UnpackError, struct.error, ValueError) as e:
            summary.skipped += 1
            log.debug(f"frame {summary.read}: undecodable ({e})")
            continue
        if pkt is None:
            summary.skipped += 1
            continue
        if exclude and is_excluded(pkt, exclude):
            summary.excluded += 1
            continue
        summary.accepted += 1
        yield pkt


def detect_format(path: str) -> str:
    with open(path, "rb") as f:
        head = f.read(4)
    if head in PCAP_MAGICS or head == PCAPNG_MAGIC:
        return "pcap"
    return "ndjson"


def read_packets(
    path: str,
    fmt: str = "auto",
    summary: Optional[IngestSummary] = None,
    exclude: Sequence[Prefix6] = (),
    payload_cap: int = DEFAULT_PAYLOAD_CAP,
    telescope_of: Optional[Callable[[Address6], str]] = None,
) -> Iterator[ProbePacket]:
    if fmt == "auto":
        fmt = detect_format(path)
    if fmt == "pcap":
        with open(path, "rb") as f:
            yield from read_pcap(f, summary, exclude, payload_cap, telescope_of)
    elif fmt == "ndjson":
        with open(path, "rb") as f:
            yield from read_ndjson(f, summary, exclude, payload_cap)
    else:
        raise IngestError(f"unknown input format {fmt!r}")


# ---------- enrichment ----------
@dataclass
class EnrichmentMaps:
    asn_table: PrefixTable = field(default_factory=PrefixTable)
    geo_table: PrefixTable = field(default_factory=PrefixTable)
    nettype_table: PrefixTable = field(default_factory=PrefixTable)
    rdns_table: Dict[Address6, str] = field(default_factory=dict)

    @classmethod
    def from_lists(
        cls,
        asn: Iterable[Tuple[Prefix6, int]] = (),
        geo: Iterable[Tuple[Prefix6, str]] = (),
        nettype: Iterable[Tuple[Prefix6, str]] = (),
        rdns: Optional[Dict[Address6, str]] = None,
    ) -> "EnrichmentMaps":
        nettype = list(nettype)
        for prefix, kind in nettype:
            if kind not in NETTYPES:
                raise DataError(f"unknown network type {kind!r} for {prefix}")
        return cls(PrefixTable(asn), PrefixTable(geo), PrefixTable(nettype), dict(rdns or {}))


@dataclass(frozen=True)
class SourceMeta:
    key: SourceKey
    asn: Optional[int] = None
    country: Optional[str] = None
    nettype: str = "unknown"
    rdns: Optional[str] = None


def enrich(key: SourceKey, maps: EnrichmentMaps) -> SourceMeta:
    rdns = maps.rdns_table.get(key.value) if key.level is Level.ADDR128 else None
    return SourceMeta(
        key=key,
        asn=maps.asn_table.lookup(key.value),
        country=maps.geo_table.lookup(key.value),
        nettype=maps.nettype_table.lookup(key.value) or "unknown",
        rdns=rdns,
    )


def _read_pairs(path: str) -> List[Tuple[str, str]]:
    rows: List[Tuple[str, str]] = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        next(reader, None)  # header
        for line_no, row in enumerate(reader, 2):
            if not row or row[0].startswith("#"):
                continue
            if len(row) < 2:
                raise DataError(f"{path}:{line_no}: expected two columns")
            rows.append((row[0].strip(), row[1].strip()))
    return rows


def load_enrichment_maps(
    asn_path: str = "",
    geo_path: str = "",
    nettype_path: str = "",
    rdns_path: str = "",
) -> EnrichmentMaps:
    try:
        asn = [(parse_prefix(p), int(v)) for p, v in _read_pairs(asn_path)] if asn_path else []
        geo = [(parse_prefix(p), v.upper()) for p, v in _read_pairs(geo_path)] if geo_path else []
        nettype = [(parse_prefix(p), v.lower()) for p, v in _read_pairs(nettype_path)] if nettype_path else []
        rdns = {parse_address(a): n for a, n in _read_pairs(rdns_path)} if rdns_path else {}
    except ValueError as e:
        raise DataError(f"bad enrichment map: {e}") from e
    maps = EnrichmentMaps.from_lists(asn, geo, nettype, rdns)
    log.info(f"Enrichment: {len(maps.asn_table)} ASN, {len(maps.geo_table)} geo, "
             f"{len(maps.nettype_table)} nettype prefixes, {len(maps.rdns_table)} RDNS names")
    return maps
