import os

import numpy as np
import pytest

from addr6 import ProbePacket, parse_address
from artifacts import US
from errors import DataError
from fingerprint import (
    UNLABELED, FingerprintConfig, cluster_payloads, cluster_rows, label_cluster, load_signatures,
    mean_pairwise_distance, parse_signatures, payload_distance, registered_domain, tool_report,
)
from sessionizer import sessionize

HERE = os.path.dirname(os.path.abspath(__file__))
T0 = 1_704_067_200 * US
TRACEROUTE = bytes(range(0x40, 0x80))


def _session(src, payloads, start=T0):
    pkts = [
        ProbePacket(ts=start + i * US, src=parse_address(src), dst=parse_address(f"2001:db8::{i + 1:x}"),
                    proto="udp", sport=40000, dport=33434 + i, payload=p, telescope="T1")
        for i, p in enumerate(payloads)
    ]
    (s,) = sessionize(pkts)
    return s


def _counter_payload(n):
    return b"\xaa" * 8 + n.to_bytes(4, "big") + b"\xbb" * 52


@pytest.fixture
def sigs():
    return load_signatures(os.path.join(HERE, "signatures.txt"))


# ---------- signatures ----------
def test_shipped_signatures_parse(sigs):
    assert sigs[0].tool == "Traceroute"
    assert sigs[0].matches(TRACEROUTE)
    assert {s.kind for s in sigs} <= {"substring", "regex", "bytes_at_offset", "rdns"}


def test_signature_kinds():
    sigs = parse_signatures([
        "A\tregex\t^HELLO",
        "B\tbytes_at_offset\t0102\t4",
        "C\trdns\texample.net",
    ])
    assert sigs[0].matches(b"HELLO world")
    assert not sigs[0].matches(b"say HELLO")
    assert sigs[1].matches(b"\x00\x00\x00\x00\x01\x02")
    assert not sigs[1].matches(b"\x01\x02")
    assert sigs[2].matches_name("probe7.example.net.")
    assert not sigs[2].matches_name("notexample.net")


@pytest.mark.parametrize("line", ["A\tsubstring", "A\tsubstring\tzz", "A\tbogus\t00", "A\tbytes_at_offset\t00"])
def test_bad_signature_lines(line):
    with pytest.raises(DataError, match=":2:"):
        parse_signatures(["# header", line])


# ---------- distance ----------
def test_payload_distance():
    assert payload_distance(TRACEROUTE, TRACEROUTE) == 0.0
    assert payload_distance(_counter_payload(1), _counter_payload(0x01020301)) == pytest.approx(3 / 64)
    assert payload_distance(b"\x00" * 32, b"\x00" * 64) == pytest.approx(0.5)


def test_payload_distance_length_penalty_is_one_per_byte():
    assert payload_distance(b"\x00\x00", b"\x00") == pytest.approx(1 / 64)
    assert payload_distance(b"\x00\xff", b"\x00") == pytest.approx(1 / 64)
    assert payload_distance(b"", b"\xff" * 64) == pytest.approx(1.0)
    assert payload_distance(b"\x01" * 80, b"\x01" * 70) == 0.0


def test_mean_pairwise_distance():
    rng = np.random.default_rng(0)
    randoms = [rng.bytes(64) for _ in range(8)]
    assert mean_pairwise_distance(randoms) > 0.9
    assert mean_pairwise_distance([TRACEROUTE] * 4) == 0.0
    assert mean_pairwise_distance([TRACEROUTE]) == 0.0


# ---------- clustering + labels ----------
def test_counter_payloads_form_one_cluster():
    sessions = [_session(f"2001:db8:ffff:{i:x}::1", [_counter_payload(i * 7919)], T0 + i * 10_000 * US)
                for i in range(6)]
    clusters = cluster_payloads(sessions)
    assert len(clusters) == 1
    assert len(clusters[0].members) == 6
    assert not clusters[0].noise


def test_noise_points_become_singletons():
    rng = np.random.default_rng(1)
    sessions = [_session("2001:db8:ffff::1", [TRACEROUTE]), _session("2001:db8:ffff::2", [TRACEROUTE]),
                _session("2001:db8:ffff::3", [rng.bytes(64)])]
    clusters = cluster_payloads(sessions)
    assert [c.noise for c in clusters] == [False, True]
    assert [c.id for c in clusters] == [0, 1]


def test_sessions_without_payload_are_ignored():
    s = _session("2001:db8:ffff::1", [b""])
    assert cluster_payloads([s]) == []


def test_signature_label(sigs):
    sessions = [_session(f"2001:db8:ffff::{i}", [TRACEROUTE]) for i in range(1, 4)]
    (c,) = [label_cluster(c, sigs) for c in cluster_payloads(sessions)]
    assert c.label == "Traceroute"
    assert c.is_tool
    assert c.subtag is None


def test_rdns_rule_label(sigs):
    payload = b"\x11" * 64
    sessions = [_session("2001:db8:ffff::1", [payload]), _session("2001:db8:ffff::2", [payload])]
    rdns = {parse_address("2001:db8:ffff::1"): "p123.probes.atlas.ripe.net"}
    (c,) = [label_cluster(c, sigs, rdns) for c in cluster_payloads(sessions)]
    assert c.label == "RIPEAtlasProbe"


def test_rdns_domain_fallback(sigs):
    payload = b"\x22" * 64
    sessions = [_session("2001:db8:ffff::1", [payload]), _session("2001:db8:ffff::2", [payload])]
    rdns = {parse_address("2001:db8:ffff::1"): "scan-01.research.example.org"}
    (c,) = [label_cluster(c, sigs, rdns) for c in cluster_payloads(sessions)]
    assert c.label == "rdns:example.org"
    assert not c.is_tool


def test_random_bytes_subtag(sigs):
    rng = np.random.default_rng(2)
    s = _session("2001:db8:ffff::1", [rng.bytes(64) for _ in range(6)])
    (c,) = [label_cluster(c, sigs) for c in cluster_payloads([s])]
    assert c.label == UNLABELED
    assert c.subtag == "random_bytes"


def test_address_rotation_subtag(sigs):
    payload = b"\x33" * 64
    sessions = [_session(f"2001:db8:ffff:1::{i:x}", [payload], T0 + i * 10_000 * US) for i in range(1, 4)]
    (c,) = [label_cluster(c, sigs) for c in cluster_payloads(sessions)]
    assert c.subtag == "address_rotation"


def test_other_subtag(sigs):
    payload = b"\x44" * 64
    sessions = [_session("2001:db8:ffff:1::1", [payload]), _session("2001:db8:ffff:2::1", [payload])]
    (c,) = [label_cluster(c, sigs) for c in cluster_payloads(sessions)]
    assert c.subtag == "other"


def test_registered_domain():
    assert registered_domain("a.b.Example.COM.") == "example.com"


def test_tool_report_and_rows(sigs):
    rng = np.random.default_rng(3)
    sessions = [_session(f"2001:db8:ffff::{i}", [TRACEROUTE]) for i in range(1, 4)]
    sessions.append(_session("2001:db8:ffff::9", [rng.bytes(64)]))
    clusters = [label_cluster(c, sigs, cfg=FingerprintConfig()) for c in cluster_payloads(sessions)]
    assert tool_report(clusters) == [["Traceroute", 3, 0.75, 3, 0.75]]
    rows = cluster_rows(clusters)
    assert rows[0][:6] == [0, "Traceroute", "", False, 3, 3]
    assert rows[0][6] == TRACEROUTE.hex()
