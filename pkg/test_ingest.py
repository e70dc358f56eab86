import io
import json
import struct

import dpkt
import pytest

from addr6 import Level, SourceKey, parse_address, parse_prefix
from errors import DataError, IngestError
from ingest import (
    EnrichmentMaps, IngestSummary, enrich, format_ts, load_enrichment_maps, packet_to_record,
    parse_ts, read_ndjson, read_packets, read_pcap, record_to_packet, write_ndjson,
)

SRC = parse_address("2001:db8:ffff::9")
DST = parse_address("2001:db8::1")


def _line(**over):
    rec = {"ts": 1_000_000, "src": str(SRC), "dst": str(DST), "proto": "icmp6",
           "icmp_type": 128, "telescope": "T1"}
    rec.update(over)
    return json.dumps(rec)


# ---------- timestamps ----------
def test_parse_ts_forms():
    assert parse_ts(5) == 5
    assert parse_ts("1704067200000000") == 1_704_067_200_000_000
    assert parse_ts("2024-01-01T00:00:00Z") == 1_704_067_200_000_000
    assert parse_ts("2024-01-01T00:00:00.000001+00:00") == 1_704_067_200_000_001
    with pytest.raises(ValueError):
        parse_ts(True)


def test_format_ts():
    assert format_ts(1_704_067_200_000_001) == "2024-01-01T00:00:00.000001Z"


# ---------- NDJSON ----------
def test_ndjson_rejects_bad_lines_with_line_numbers():
    lines = [
        _line(),
        "{not json",
        _line(proto="sctp"),
        "",
        _line(proto="tcp", dport=22, tcp_flags="s"),
        _line(telescope=None),
    ]
    summary = IngestSummary()
    pkts = list(read_ndjson(lines, summary))
    assert len(pkts) == 2
    assert pkts[1].tcp_flags == "S"
    assert summary.read == 5
    assert summary.accepted == 2
    assert summary.rejected == 3
    assert [n for n, _ in summary.errors] == [2, 3, 6]


def test_ndjson_invalid_utf8_line_is_rejected():
    good = (_line() + "\n").encode()
    summary = IngestSummary()
    pkts = list(read_ndjson([good, b"\xff\xfe{\n", good], summary))
    assert len(pkts) == 2
    assert (summary.read, summary.accepted, summary.rejected) == (3, 2, 1)
    assert [n for n, _ in summary.errors] == [2]


def test_read_packets_survives_invalid_utf8(tmp_path):
    path = tmp_path / "probes.ndjson"
    path.write_bytes(_line().encode() + b"\n\xc3\x28\n" + _line(dst="2001:db8::2").encode() + b"\n")
    summary = IngestSummary()
    pkts = list(read_packets(str(path), "ndjson", summary))
    assert [str(p.dst) for p in pkts] == ["2001:db8::1", "2001:db8::2"]
    assert summary.errors[0][0] == 2


def test_ndjson_exclude_prefixes():
    summary = IngestSummary()
    pkts = list(read_ndjson([_line(), _line(src="2001:db9::1")], summary,
                            exclude=[parse_prefix("2001:db8:ffff::/48")]))
    assert [str(p.src) for p in pkts] == ["2001:db9::1"]
    assert summary.excluded == 1


def test_payload_cap():
    pkt = record_to_packet(json.loads(_line(proto="udp", dport=53, payload_hex="00" * 300)), payload_cap=16)
    assert len(pkt.payload) == 16


def test_ndjson_write_read_preserves_fields():
    pkt = record_to_packet(json.loads(_line(proto="udp", sport=1000, dport=33434, payload_hex="4041")))
    buf = io.StringIO()
    assert write_ndjson([pkt], buf) == 1
    again = list(read_ndjson(buf.getvalue().splitlines()))
    assert again == [pkt]
    assert packet_to_record(pkt)["payload_hex"] == "4041"


# ---------- pcap ----------
def _udp(sport, dport, payload=b""):
    return struct.pack("!HHHH", sport, dport, 8 + len(payload), 0) + payload


def _tcp_syn(sport, dport):
    return struct.pack("!HHIIBBHHH", sport, dport, 1, 0, 5 << 4, 0x02, 1024, 0, 0)


def _icmp_echo(ident, seq, data=b""):
    return struct.pack("!BBHHH", 128, 0, 0, ident, seq) + data


def _frame(nxt, l4, src=SRC, dst=DST):
    ip6 = struct.pack("!IHBB16s16s", 0x60000000, len(l4), nxt, 64, src.packed, dst.packed)
    eth = b"\x00\x11\x22\x33\x44\x55" + b"\x66\x77\x88\x99\xaa\xbb" + b"\x86\xdd"
    return eth + ip6 + l4


def _pcap(frames):
    buf = io.BytesIO()
    w = dpkt.pcap.Writer(buf, linktype=dpkt.pcap.DLT_EN10MB)
    for i, f in enumerate(frames):
        w.writepkt(f, ts=1_704_067_200 + i)
    return buf.getvalue()


def test_pcap_decodes_protocols():
    raw = _pcap([
        _frame(17, _udp(40000, 33434, b"@ABC")),
        _frame(6, _tcp_syn(40001, 443)),
        _frame(58, _icmp_echo(7, 1, b"hi")),
    ])
    summary = IngestSummary()
    pkts = list(read_pcap(io.BytesIO(raw), summary, telescope_of=lambda dst: "T1"))
    assert [p.proto for p in pkts] == ["udp", "tcp", "icmp6"]
    assert pkts[0].dport == 33434 and pkts[0].payload == b"@ABC"
    assert pkts[1].tcp_flags == "S"
    assert pkts[2].icmp_type == 128
    assert pkts[2].payload == struct.pack("!HH", 7, 1) + b"hi"
    assert pkts[0].ts == 1_704_067_200_000_000
    assert all(p.telescope == "T1" for p in pkts)
    assert summary.accepted == 3


def test_pcap_skips_non_ipv6():
    ipv4 = b"\x00" * 12 + b"\x08\x00" + b"\x45" + b"\x00" * 19
    summary = IngestSummary()
    pkts = list(read_pcap(io.BytesIO(_pcap([ipv4, _frame(17, _udp(1, 2))])), summary))
    assert len(pkts) == 1
    assert summary.skipped == 1


def test_truncated_pcap_keeps_earlier_frames():
    first = _frame(17, _udp(1, 53))
    raw = _pcap([first, _frame(17, _udp(2, 53))])
    cut = raw[: 24 + 16 + len(first) + 8]
    got = []
    with pytest.raises(IngestError):
        for pkt in read_pcap(io.BytesIO(cut)):
            got.append(pkt)
    assert len(got) == 1


def test_not_a_pcap():
    with pytest.raises(IngestError):
        list(read_pcap(io.BytesIO(b"hello world, not a capture")))


# ---------- enrichment ----------
def test_enrich_addr128_and_net64():
    maps = EnrichmentMaps.from_lists(
        asn=[(parse_prefix("2001:db8::/32"), 64500)],
        geo=[(parse_prefix("2001:db8::/32"), "DE")],
        nettype=[(parse_prefix("2001:db8:1::/48"), "hosting")],
        rdns={parse_address("2001:db8:1::5"): "probe.atlas.ripe.net"},
    )
    meta = enrich(SourceKey(Level.ADDR128, parse_address("2001:db8:1::5")), maps)
    assert (meta.asn, meta.country, meta.nettype, meta.rdns) == (64500, "DE", "hosting", "probe.atlas.ripe.net")
    net = enrich(SourceKey.parse("2001:db8:2::/64"), maps)
    assert net.nettype == "unknown"
    assert net.rdns is None


def test_unknown_nettype_rejected():
    with pytest.raises(DataError):
        EnrichmentMaps.from_lists(nettype=[(parse_prefix("2001:db8::/32"), "cloudy")])


def test_load_enrichment_maps(tmp_path):
    asn = tmp_path / "asn.csv"
    asn.write_text("prefix,asn\n2001:db8::/32,64500\n# comment\n2001:db8:8000::/33,64501\n")
    rdns = tmp_path / "rdns.csv"
    rdns.write_text("address,name\n2001:db8::1,scan.example.org\n")
    maps = load_enrichment_maps(asn_path=str(asn), rdns_path=str(rdns))
    assert maps.asn_table.lookup(parse_address("2001:db8:8000::1")) == 64501
    assert maps.rdns_table[parse_address("2001:db8::1")] == "scan.example.org"


def test_load_enrichment_maps_bad_row(tmp_path):
    asn = tmp_path / "asn.csv"
    asn.write_text("prefix,asn\n2001:db8::/32,not-a-number\n")
    with pytest.raises(DataError):
        load_enrichment_maps(asn_path=str(asn))
