import ipaddress
import random

import pytest

from addr6 import (
    Level, PrefixTable, ProbePacket, SourceKey, canonical_flags, contains, iid,
    longest_prefix_match, low_byte_address, parse_address, parse_prefix, render,
    source_key, split, truncate,
)
from errors import PrefixError


def test_render_is_rfc5952():
    a = parse_address("2001:0DB8:0000:0000:0000:0000:0000:0001")
    assert render(a) == "2001:db8::1"


def test_zone_ids_rejected():
    with pytest.raises(ValueError):
        parse_address("fe80::1%eth0")


def test_parse_prefix_strict_and_lenient():
    with pytest.raises(ValueError):
        parse_prefix("2001:db8::1/32")
    assert str(parse_prefix("2001:db8::1/32", strict=False)) == "2001:db8::/32"
    with pytest.raises(ValueError):
        parse_prefix("2001:db8::")


def test_split_halves():
    lo, hi = split(parse_prefix("2001:db8::/32"))
    assert str(lo) == "2001:db8::/33"
    assert str(hi) == "2001:db8:8000::/33"


def test_split_128_fails():
    with pytest.raises(PrefixError):
        split(parse_prefix("2001:db8::1/128"))


def test_truncate_and_contains():
    a = parse_address("2001:db8:1:2:3:4:5:6")
    p = truncate(a, 64)
    assert str(p) == "2001:db8:1:2::/64"
    assert contains(p, a)
    assert not contains(parse_prefix("2001:db8:1:3::/64"), a)


def test_iid_and_low_byte():
    assert iid(parse_address("2001:db8::1:0:0:5")) == (1 << 48) | 5
    assert str(low_byte_address(parse_prefix("2001:db8:8000::/33"))) == "2001:db8:8000::1"


@pytest.mark.parametrize("text,level", [("128", Level.ADDR128), ("/64", Level.NET64), ("net64", Level.NET64)])
def test_level_parse(text, level):
    assert Level.parse(text) is level


def test_source_key_net64():
    a = parse_address("2001:db8:0:1:aaaa::7")
    k = source_key(a, Level.NET64)
    assert k.render() == "2001:db8:0:1::/64"
    assert SourceKey.parse(k.render()) == k
    assert source_key(a, Level.ADDR128).render() == "2001:db8:0:1:aaaa::7"


def test_source_key_rejects_host_bits_at_net64():
    with pytest.raises(PrefixError):
        SourceKey(Level.NET64, parse_address("2001:db8::1"))


def test_prefix_table_longest_match():
    table = PrefixTable([
        (parse_prefix("2001:db8::/32"), "T1"),
        (parse_prefix("2001:db8:8000::/33"), "T1-upper"),
    ])
    assert len(table) == 2
    assert table.lookup(parse_address("2001:db8::1")) == "T1"
    assert table.lookup(parse_address("2001:db8:8000::1")) == "T1-upper"
    assert table.lookup(parse_address("2001:db9::1")) is None
    assert table.lookup_prefix(parse_address("2001:db8:8000::1")) == parse_prefix("2001:db8:8000::/33")


def test_prefix_table_readd_keeps_size():
    table = PrefixTable()
    p = parse_prefix("2001:db8::/32")
    table.add(p, 1)
    table.add(p, 2)
    assert len(table) == 1
    assert longest_prefix_match([(p, 3)], parse_address("2001:db8::5")) == 3


def test_probe_packet_validation():
    src, dst = parse_address("2001:db8::1"), parse_address("2001:db8::2")
    ProbePacket(ts=0, src=src, dst=dst, proto="icmp6", icmp_type=128)
    with pytest.raises(ValueError):
        ProbePacket(ts=0, src=src, dst=dst, proto="tcp")
    with pytest.raises(ValueError):
        ProbePacket(ts=0, src=src, dst=dst, proto="icmp6", dport=80)
    with pytest.raises(ValueError):
        ProbePacket(ts=0, src=src, dst=dst, proto="udp", dport=70000)
    with pytest.raises(ValueError):
        ProbePacket(ts=0, src=src, dst=dst, proto="sctp", dport=1)


def test_canonical_flags():
    assert canonical_flags("as") == "SA"
    assert canonical_flags("RF") == "FR"


def test_addresses_are_ipaddress_values():
    assert isinstance(parse_address("::1"), ipaddress.IPv6Address)


# ---------- rendering corpus ----------
PINNED = [
    ("2001:0db8:0000:0000:0000:0000:0000:0001", "2001:db8::1"),
    ("2001:DB8::AbCd", "2001:db8::abcd"),
    ("0:0:0:0:0:0:0:0", "::"),
    ("0:0:0:0:0:0:0:1", "::1"),
    ("1:0:0:0:0:0:0:0", "1::"),
    ("fe80:0:0:0:0:0:0:1", "fe80::1"),
    ("2001:db8:0:0:1:0:0:1", "2001:db8::1:0:0:1"),
    ("2001:0:0:1:0:0:0:1", "2001:0:0:1::1"),
    ("1:0:0:2:0:0:0:3", "1:0:0:2::3"),
    ("1:0:0:0:1:0:0:0", "1::1:0:0:0"),
    ("0:0:1:0:0:0:0:0", "0:0:1::"),
    ("0:0:0:0:0:0:1:0", "::1:0"),
    ("2001:db8:0:1:1:1:1:1", "2001:db8:0:1:1:1:1:1"),
    ("0:1:0:1:0:1:0:1", "0:1:0:1:0:1:0:1"),
    ("2001:db8:0:0:0:0:2:1", "2001:db8::2:1"),
    ("2001:db8:1:0:0:0:0:0", "2001:db8:1::"),
    ("ffff:ffff:ffff:ffff:ffff:ffff:ffff:ffff", "ffff:ffff:ffff:ffff:ffff:ffff:ffff:ffff"),
    ("::ffff:192.0.2.1", "::ffff:192.0.2.1"),
    ("0:0:0:0:0:ffff:c000:0201", "::ffff:192.0.2.1"),
    ("::ffff:0:0", "::ffff:0.0.0.0"),
    ("::ffff:1:2", "::ffff:0.1.0.2"),
    ("0:0:0:0:0:fffe:0:1", "::fffe:0:1"),
    ("0:0:0:0:1:ffff:0:1", "::1:ffff:0:1"),
]


def ref_render(hextets):
    """Plain-Python RFC 5952 text form."""
    if hextets[:6] == [0, 0, 0, 0, 0, 0xFFFF]:
        lo = (hextets[6] << 16) | hextets[7]
        return "::ffff:" + ".".join(str((lo >> s) & 0xFF) for s in (24, 16, 8, 0))
    best_start, best_len, i = -1, 0, 0
    while i < 8:
        if hextets[i] == 0:
            j = i
            while j < 8 and hextets[j] == 0:
                j += 1
            if j - i > best_len:
                best_start, best_len = i, j - i
            i = j
        else:
            i += 1
    parts = [f"{h:x}" for h in hextets]
    if best_len < 2:
        return ":".join(parts)
    return ":".join(parts[:best_start]) + "::" + ":".join(parts[best_start + best_len:])


def _corpus(n=200, seed=5952):
    rng = random.Random(seed)
    choices = (1, 0xAB, 0xFFF, 0x1000, 0xFFFF)
    out = []
    for i in range(n):
        if i % 10 == 0:
            hextets = [0, 0, 0, 0, 0, 0xFFFF, rng.randrange(1 << 16), rng.randrange(1 << 16)]
        else:
            hextets = [0 if rng.random() < 0.5 else rng.choice(choices + (rng.randrange(1, 1 << 16),))
                       for _ in range(8)]
        out.append(hextets)
    return out


def _from_hextets(hextets):
    return ipaddress.IPv6Address(sum(h << (16 * (7 - i)) for i, h in enumerate(hextets)))


@pytest.mark.parametrize("text,expected", PINNED)
def test_render_pinned(text, expected):
    a = parse_address(text)
    assert render(a) == expected
    assert parse_address(expected) == a


def test_reference_render_agrees_on_pinned():
    for text, expected in PINNED:
        value = int(parse_address(text))
        assert ref_render([(value >> (16 * (7 - i))) & 0xFFFF for i in range(8)]) == expected


def test_render_corpus():
    corpus = _corpus()
    assert len(corpus) == 200
    for hextets in corpus:
        a = _from_hextets(hextets)
        assert render(a) == ref_render(hextets), hextets
        assert parse_address(render(a)) == a


def test_render_round_trip_random():
    rng = random.Random(128)
    for _ in range(1000):
        a = ipaddress.IPv6Address(rng.getrandbits(128))
        assert parse_address(render(a)) == a
        assert render(a) == render(a).lower()


def test_source_key_renders_mapped_tail():
    k = SourceKey.parse("::ffff:192.0.2.1")
    assert k.render() == "::ffff:192.0.2.1"
    assert SourceKey.parse(k.render()) == k
