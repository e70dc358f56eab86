"""
Target address typing (addr6-style IID categories) and per-session
address-selection labels.

IID types, first match wins:
    subnet_anycast > isatap > ieee_derived > embedded_ipv4 > embedded_port
    > low_byte > pattern_bytes > randomized
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence

from addr6 import Address6, iid
from randomness import Section, SessionRandomness
from sessionizer import ScanSession

log = logging.getLogger("addresses")

DEFAULT_SERVICE_PORTS = frozenset({
    21, 22, 23, 25, 53, 80, 110, 123, 143, 161, 179,
    443, 445, 993, 995, 3306, 3389, 5060, 8080, 8443,
})


class AddressType(str, Enum):
    LOW_BYTE = "low_byte"
    EMBEDDED_IPV4 = "embedded_ipv4"
    EMBEDDED_PORT = "embedded_port"
    IEEE_DERIVED = "ieee_derived"
    ISATAP = "isatap"
    PATTERN_BYTES = "pattern_bytes"
    SUBNET_ANYCAST = "subnet_anycast"
    RANDOMIZED = "randomized"


class AddressSelection(str, Enum):
    STRUCTURED = "structured"
    RANDOM = "random"
    UNKNOWN = "unknown"


# tie-break order when session labels are equally frequent
SELECTION_PRIORITY = (AddressSelection.STRUCTURED, AddressSelection.RANDOM, AddressSelection.UNKNOWN)


@dataclass(frozen=True)
class AddressConfig:
    structured_threshold: float = 0.8
    service_ports: FrozenSet[int] = field(default=DEFAULT_SERVICE_PORTS)
    monotone_min_targets: int = 10


# ---------- IID matchers ----------
def _is_isatap(b: bytes) -> bool:
    return b[0:4] in (b"\x00\x00\x5e\xfe", b"\x02\x00\x5e\xfe")


def _is_ieee_derived(b: bytes) -> bool:
    return b[3] == 0xFF and b[4] == 0xFE


def _nibble_decimal_quad(value: int) -> bool:
    groups = [(value >> shift) & 0xFFFF for shift in (48, 32, 16, 0)]
    if groups[0] == 0:
        return False
    for g in groups:
        text = f"{g:x}"
        if not text.isdigit() or int(text) > 255:
            return False
    return True


def _is_embedded_ipv4(b: bytes, value: int) -> bool:
    if b[0:4] == b"\x00\x00\x00\x00" and b[4] != 0 and value & 0xFFFF:
        return True
    return _nibble_decimal_quad(value)


def _is_embedded_port(b: bytes, value: int, ports: FrozenSet[int]) -> bool:
    if any(b[0:6]):
        return False
    low = value & 0xFFFF
    if low == 0:
        return False
    if low in ports:
        return True
    text = f"{low:x}"
    return text.isdigit() and int(text) in ports


def _is_pattern_bytes(b: bytes, value: int) -> bool:
    nibbles = f"{value:016x}"
    if nibbles[0] != "0" and nibbles == nibbles[0] * 16:
        return True
    nonzero = [(i, x) for i, x in enumerate(b) if x]
    if len(nonzero) < 3 or len({x for _, x in nonzero}) != 1:
        return False
    positions = [i for i, _ in nonzero]
    return positions[-1] - positions[0] + 1 == len(positions)


def classify_iid(a: Address6, service_ports: FrozenSet[int] = DEFAULT_SERVICE_PORTS) -> AddressType:
    value = iid(a)
    if value == 0:
        return AddressType.SUBNET_ANYCAST
    b = value.to_bytes(8, "big")
    if _is_isatap(b):
        return AddressType.ISATAP
    if _is_ieee_derived(b):
        return AddressType.IEEE_DERIVED
    if _is_embedded_ipv4(b, value):
        return AddressType.EMBEDDED_IPV4
    if _is_embedded_port(b, value, service_ports):
        return AddressType.EMBEDDED_PORT
    if not any(b[0:6]) and value & 0xFFFF:
        return AddressType.LOW_BYTE
    if _is_pattern_bytes(b, value):
        return AddressType.PATTERN_BYTES
    return AddressType.RANDOMIZED


def type_histogram(session: ScanSession, service_ports: FrozenSet[int] = DEFAULT_SERVICE_PORTS) -> Dict[AddressType, int]:
    counts = Counter(classify_iid(t, service_ports) for t in session.targets)
    return {t: counts.get(t, 0) for t in AddressType}


def is_monotone(targets: Sequence[Address6], min_targets: int = 10) -> bool:
    if len(targets) < min_targets:
        return False
    values = [int(t) for t in targets]
    if len(set(values)) < 2:
        return False
    diffs = [b - a for a, b in zip(values, values[1:])]
    return all(d >= 0 for d in diffs) or all(d <= 0 for d in diffs)


def classify_session_addresses(
    s: ScanSession,
    rand_result: Optional[SessionRandomness] = None,
    cfg: Optional[AddressConfig] = None,
) -> AddressSelection:
    cfg = cfg or AddressConfig()
    if s.targets:
        hist = type_histogram(s, cfg.service_ports)
        structured = {t: n for t, n in hist.items() if t is not AddressType.RANDOMIZED}
        top = max(structured.values())
        if top / len(s.targets) >= cfg.structured_threshold:
            return AddressSelection.STRUCTURED
        if is_monotone(s.targets, cfg.monotone_min_targets):
            return AddressSelection.STRUCTURED
    if rand_result is not None and rand_result.is_random(Section.IID64):
        return AddressSelection.RANDOM
    return AddressSelection.UNKNOWN


def scanner_selection(labels: Iterable[AddressSelection]) -> AddressSelection:
    """Most frequent session label; ties go structured > random > unknown."""
    counts = Counter(labels)
    if not counts:
        return AddressSelection.UNKNOWN
    return max(SELECTION_PRIORITY, key=lambda lbl: (counts.get(lbl, 0), -SELECTION_PRIORITY.index(lbl)))


def aggregate_types(sessions: Iterable[ScanSession], service_ports: FrozenSet[int] = DEFAULT_SERVICE_PORTS) -> List[List]:
    """Rows of (type, packets, packet share, sources, source share)."""
    packets: Counter = Counter()
    sources: Dict[AddressType, set] = {t: set() for t in AddressType}
    all_sources = set()
    for s in sessions:
        all_sources.add((s.source, s.telescope))
        for t, n in type_histogram(s, service_ports).items():
            if n:
                packets[t] += n
                sources[t].add((s.source, s.telescope))
    total_packets = sum(packets.values())
    rows = []
    for t in AddressType:
        rows.append([
            t.value,
            packets[t],
            packets[t] / total_packets if total_packets else 0.0,
            len(sources[t]),
            len(sources[t]) / len(all_sources) if all_sources else 0.0,
        ])
    return rows
