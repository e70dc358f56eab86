import pytest

from addr6 import SourceKey, parse_address, parse_prefix
from address_types import (
    AddressConfig, AddressSelection, AddressType, aggregate_types, classify_iid, classify_session_addresses,
    is_monotone, scanner_selection, type_histogram,
)
from artifacts import US
from bgp_schedule import generate_schedule
from randomness import Section, SessionRandomness
from sessionizer import ScanSession

T0 = 1_704_067_200 * US
SHUFFLED = [3, 1, 4, 0, 5, 2]


def _session(targets, src="3fff::a", tel="T1"):
    return ScanSession(
        source=SourceKey.parse(src), telescope=tel, start_ts=T0, end_ts=T0 + 60 * US,
        packet_count=len(targets), targets=tuple(parse_address(t) for t in targets),
        protocols=frozenset({"icmp6"}), proto_packets={"icmp6": len(targets)}, dports_by_proto={},
    )


def _random_looking(i):
    return str(parse_address("2001:db8::1234:5678:9abc:def0") + i * 0x1111)


@pytest.mark.parametrize("addr,expected", [
    ("2001:db8::1", AddressType.LOW_BYTE),
    ("2001:db8::443", AddressType.EMBEDDED_PORT),
    ("2001:db8::50", AddressType.EMBEDDED_PORT),
    ("2001:db8::c000:1", AddressType.EMBEDDED_IPV4),
    ("2001:db8::192:0:2:1", AddressType.EMBEDDED_IPV4),
    ("2001:db8:1234:5678::", AddressType.SUBNET_ANYCAST),
    ("2001:db8::200:5eff:fe01:203", AddressType.IEEE_DERIVED),
    ("2001:db8::5efe:c000:201", AddressType.ISATAP),
    ("2001:db8::aaaa:aaaa:aaaa:aaaa", AddressType.PATTERN_BYTES),
    ("2001:db8::7:707", AddressType.PATTERN_BYTES),
    ("2001:db8::1234:5678:9abc:def0", AddressType.RANDOMIZED),
])
def test_classify_iid(addr, expected):
    assert classify_iid(parse_address(addr)) is expected


def test_service_ports_are_configurable():
    a = parse_address("2001:db8::443")
    assert classify_iid(a, frozenset({22})) is AddressType.LOW_BYTE


def test_type_histogram_covers_every_type():
    hist = type_histogram(_session(["2001:db8::1", "2001:db8::2", "2001:db8::443"]))
    assert set(hist) == set(AddressType)
    assert hist[AddressType.LOW_BYTE] == 2
    assert hist[AddressType.EMBEDDED_PORT] == 1
    assert sum(hist.values()) == 3


# ---------- session labels ----------
def test_low_byte_of_every_prefix_is_structured():
    schedule = generate_schedule(parse_prefix("2001:db8::/32"), 16, T0)
    targets = [str(p.network_address + 1) for p in schedule.announced(16)]
    assert len(targets) == 17
    assert classify_session_addresses(_session(targets)) is AddressSelection.STRUCTURED


def test_monotone_sweep_is_structured():
    targets = [_random_looking(i) for i in range(12)]
    assert is_monotone([parse_address(t) for t in targets])
    assert classify_session_addresses(_session(targets)) is AddressSelection.STRUCTURED


def test_short_or_flat_runs_are_not_monotone():
    assert not is_monotone([parse_address(_random_looking(i)) for i in range(9)])
    assert not is_monotone([parse_address("2001:db8::1")] * 12)


def test_random_verdict_labels_random():
    session = _session([_random_looking(i) for i in SHUFFLED])
    rand = SessionRandomness(session.session_id, True, verdicts={Section.IID64: True})
    assert classify_session_addresses(session, rand) is AddressSelection.RANDOM


@pytest.mark.parametrize("rand", [
    None,
    SessionRandomness("x", False),
    SessionRandomness("x", True, verdicts={Section.IID64: False, Section.SUBNET32: True}),
])
def test_otherwise_unknown(rand):
    session = _session([_random_looking(i) for i in SHUFFLED])
    assert classify_session_addresses(session, rand) is AddressSelection.UNKNOWN


def test_structured_threshold():
    targets = ["2001:db8::1", "2001:db8::2", "2001:db8::3"] + [_random_looking(i) for i in (2, 0)]
    assert classify_session_addresses(_session(targets)) is AddressSelection.UNKNOWN
    cfg = AddressConfig(structured_threshold=0.6)
    assert classify_session_addresses(_session(targets), cfg=cfg) is AddressSelection.STRUCTURED


# ---------- scanner level ----------
@pytest.mark.parametrize("labels,expected", [
    ([AddressSelection.STRUCTURED, AddressSelection.RANDOM], AddressSelection.STRUCTURED),
    ([AddressSelection.RANDOM, AddressSelection.RANDOM, AddressSelection.STRUCTURED], AddressSelection.RANDOM),
    ([AddressSelection.UNKNOWN, AddressSelection.RANDOM], AddressSelection.RANDOM),
    ([AddressSelection.UNKNOWN, AddressSelection.UNKNOWN, AddressSelection.RANDOM], AddressSelection.UNKNOWN),
    ([], AddressSelection.UNKNOWN),
])
def test_scanner_selection(labels, expected):
    assert scanner_selection(labels) is expected


def test_aggregate_types():
    sessions = [
        _session(["2001:db8::1", "2001:db8::2", _random_looking(0)], src="3fff::a"),
        _session([_random_looking(1)], src="3fff::b"),
    ]
    rows = {r[0]: r[1:] for r in aggregate_types(sessions)}
    assert list(rows) == [t.value for t in AddressType]
    assert rows["low_byte"] == [2, 0.5, 1, 0.5]
    assert rows["randomized"] == [2, 0.5, 2, 1.0]
    assert rows["isatap"] == [0, 0.0, 0, 0.0]
