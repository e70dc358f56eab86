"""
IPv6 address / prefix arithmetic and the shared domain values.

Address6 and Prefix6 are the stdlib ipaddress types, so text form is the
RFC 5952 rendering of `str()`. Everything here is immutable and pure.
"""

import ipaddress
from dataclasses import dataclass
from enum import Enum
from typing import Generic, Hashable, Iterable, Optional, Tuple, TypeVar

import radix

from errors import PrefixError

Address6 = ipaddress.IPv6Address
Prefix6 = ipaddress.IPv6Network

ALL_ONES = (1 << 128) - 1
IID_MASK = (1 << 64) - 1

PROTOCOLS = ("icmp6", "tcp", "udp")
TCP_FLAG_ORDER = "SAFRPU"

T = TypeVar("T", bound=Hashable)


class Level(str, Enum):
    """Source aggregation level."""

    ADDR128 = "addr128"
    NET64 = "net64"

    @property
    def length(self) -> int:
        return 128 if self is Level.ADDR128 else 64

    @classmethod
    def parse(cls, text: str) -> "Level":
        t = str(text).strip().lower().lstrip("/")
        if t in ("128", "addr128"):
            return cls.ADDR128
        if t in ("64", "net64"):
            return cls.NET64
        raise ValueError(f"unknown aggregation level: {text!r}")


# ---------- text forms ----------
def parse_address(text: str) -> Address6:
    t = str(text).strip()
    if "%" in t:
        raise ValueError(f"zone identifiers are not supported: {t!r}")
    return ipaddress.IPv6Address(t)


def parse_prefix(text: str, strict: bool = True) -> Prefix6:
    t = str(text).strip()
    if "/" not in t:
        raise ValueError(f"prefix without length: {t!r}")
    return ipaddress.IPv6Network(t, strict=strict)


def render(a: Address6) -> str:
    """RFC 5952 text; IPv4-mapped addresses keep a dotted-quad tail on every Python version."""
    mapped = a.ipv4_mapped
    if mapped is not None:
        return f"::ffff:{mapped}"
    return str(a)


def mask(length: int) -> int:
    if not 0 <= length <= 128:
        raise PrefixError(f"prefix length out of range: {length}")
    return (ALL_ONES << (128 - length)) & ALL_ONES


def truncate(a: Address6, length: int) -> Prefix6:
    """Prefix of the given length that contains `a`."""
    return ipaddress.IPv6Network((int(a) & mask(length), length))


def iid(a: Address6) -> int:
    return int(a) & IID_MASK


# ---------- prefix operations ----------
def split(p: Prefix6) -> Tuple[Prefix6, Prefix6]:
    """Halve a prefix into its two more-specific children (lower, upper)."""
    if p.prefixlen >= 128:
        raise PrefixError(f"cannot split {p}: already a /128")
    length = p.prefixlen + 1
    base = int(p.network_address)
    lower = ipaddress.IPv6Network((base, length))
    upper = ipaddress.IPv6Network((base | (1 << (127 - p.prefixlen)), length))
    return lower, upper


def low_byte_address(p: Prefix6) -> Address6:
    return ipaddress.IPv6Address(int(p.network_address) | 1)


def contains(p: Prefix6, a: Address6) -> bool:
    return (int(a) & mask(p.prefixlen)) == int(p.network_address)


class PrefixTable(Generic[T]):
    """Longest-prefix-match table over a radix tree."""

    def __init__(self, entries: Iterable[Tuple[Prefix6, T]] = ()):
        self._tree = radix.Radix()
        self._size = 0
        for prefix, tag in entries:
            self.add(prefix, tag)

    def add(self, prefix: Prefix6, tag: T) -> None:
        node = self._tree.add(str(prefix))
        if "tag" not in node.data:
            self._size += 1
        node.data["tag"] = tag

    def lookup(self, a: Address6) -> Optional[T]:
        node = self._tree.search_best(str(a))
        if node is None:
            return None
        return node.data.get("tag")

    def lookup_prefix(self, a: Address6) -> Optional[Prefix6]:
        node = self._tree.search_best(str(a))
        if node is None:
            return None
        return ipaddress.IPv6Network(node.prefix)

    def __len__(self) -> int:
        return self._size


def longest_prefix_match(table: Iterable[Tuple[Prefix6, T]], a: Address6) -> Optional[T]:
    return PrefixTable(table).lookup(a)


# ---------- domain values ----------
@dataclass(frozen=True, order=True)
class SourceKey:
    level: Level
    value: Address6

    def __post_init__(self):
        if self.level is Level.NET64 and iid(self.value) != 0:
            raise PrefixError(f"net64 source key with host bits set: {self.value}")

    def render(self) -> str:
        if self.level is Level.NET64:
            return f"{render(self.value)}/64"
        return render(self.value)

    @classmethod
    def parse(cls, text: str) -> "SourceKey":
        t = str(text).strip()
        if t.endswith("/64"):
            return cls(Level.NET64, parse_prefix(t).network_address)
        return cls(Level.ADDR128, parse_address(t))

    def sort_key(self) -> Tuple[int, str]:
        return int(self.value), self.level.value

    def __str__(self) -> str:
        return self.render()


def source_key(a: Address6, level: Level) -> SourceKey:
    return SourceKey(level, ipaddress.IPv6Address(int(a) & mask(level.length)))


@dataclass(frozen=True, slots=True)
class ProbePacket:
    ts: int  # microseconds since the Unix epoch
    src: Address6
    dst: Address6
    proto: str
    sport: Optional[int] = None
    dport: Optional[int] = None
    icmp_type: Optional[int] = None
    tcp_flags: Optional[str] = None
    payload: bytes = b""
    telescope: str = ""

    def __post_init__(self):
        if self.proto not in PROTOCOLS:
            raise ValueError(f"unknown proto {self.proto!r}")
        if self.proto == "icmp6":
            if self.sport is not None or self.dport is not None:
                raise ValueError("icmp6 packet with ports")
        elif self.dport is None:
            raise ValueError(f"{self.proto} packet without dport")
        for port in (self.sport, self.dport):
            if port is not None and not 0 <= port <= 65535:
                raise ValueError(f"port out of range: {port}")
        if self.tcp_flags is not None and any(c not in TCP_FLAG_ORDER for c in self.tcp_flags):
            raise ValueError(f"bad tcp flags {self.tcp_flags!r}")


def canonical_flags(flags: str) -> str:
    return "".join(c for c in TCP_FLAG_ORDER if c in flags.upper())
