"""
Sessionizer - splits each source's probe stream into scan sessions.

A session is a run of packets from one source (at /128 or /64) on one
telescope whose consecutive inter-arrival gaps never exceed the timeout.
A gap of exactly the timeout stays inside the session.
"""

import json
import logging
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, IO, Iterable, Iterator, List, Optional, Tuple

from addr6 import Address6, Level, ProbePacket, SourceKey, PROTOCOLS, parse_address, render, source_key
from artifacts import US
from errors import DataError

log = logging.getLogger("sessions")

GroupKey = Tuple[SourceKey, str]


@dataclass(frozen=True)
class SessionizerConfig:
    timeout_secs: int = 3600
    level: Level = Level.ADDR128

    def __post_init__(self):
        if self.timeout_secs <= 0:
            raise ValueError(f"session timeout must be positive, got {self.timeout_secs}")

    @property
    def timeout_us(self) -> int:
        return self.timeout_secs * US


@dataclass(frozen=True)
class ScanSession:
    source: SourceKey
    telescope: str
    start_ts: int
    end_ts: int
    packet_count: int
    targets: Tuple[Address6, ...]
    protocols: frozenset
    proto_packets: Dict[str, int] = field(hash=False, compare=False)
    dports_by_proto: Dict[str, frozenset] = field(hash=False, compare=False)
    packets: Tuple[ProbePacket, ...] = field(default=(), hash=False, compare=False, repr=False)

    @property
    def session_id(self) -> str:
        return f"{self.telescope}:{self.start_ts}"

    @property
    def distinct_targets(self) -> int:
        return len(set(self.targets))

    @property
    def duration_us(self) -> int:
        return self.end_ts - self.start_ts

    def payloads(self, limit: int = 16) -> List[bytes]:
        out = []
        for p in self.packets:
            if p.payload:
                out.append(p.payload)
                if len(out) >= limit:
                    break
        return out


def _packet_order(p: ProbePacket) -> Tuple[int, int, str, int]:
    return p.ts, int(p.dst), p.proto, -1 if p.dport is None else p.dport


def build_session(key: SourceKey, telescope: str, packets: List[ProbePacket]) -> ScanSession:
    proto_packets: Dict[str, int] = defaultdict(int)
    dports: Dict[str, set] = defaultdict(set)
    for p in packets:
        proto_packets[p.proto] += 1
        if p.dport is not None:
            dports[p.proto].add(p.dport)
    return ScanSession(
        source=key,
        telescope=telescope,
        start_ts=packets[0].ts,
        end_ts=packets[-1].ts,
        packet_count=len(packets),
        targets=tuple(p.dst for p in packets),
        protocols=frozenset(proto_packets),
        proto_packets=dict(proto_packets),
        dports_by_proto={k: frozenset(v) for k, v in dports.items()},
        packets=tuple(packets),
    )


def split_group(key: SourceKey, telescope: str, packets: List[ProbePacket], timeout_us: int) -> List[ScanSession]:
    packets = sorted(packets, key=_packet_order)
    sessions: List[ScanSession] = []
    current: List[ProbePacket] = []
    for p in packets:
        if current and p.ts - current[-1].ts > timeout_us:
            sessions.append(build_session(key, telescope, current))
            current = []
        current.append(p)
    if current:
        sessions.append(build_session(key, telescope, current))
    return sessions


def group_packets(packets: Iterable[ProbePacket], level: Level) -> Dict[GroupKey, List[ProbePacket]]:
    groups: Dict[GroupKey, List[ProbePacket]] = defaultdict(list)
    for p in packets:
        groups[(source_key(p.src, level), p.telescope)].append(p)
    return groups


def sessionize(
    packets: Iterable[ProbePacket],
    cfg: Optional[SessionizerConfig] = None,
    threads: int = 1,
) -> List[ScanSession]:
    """Partition packets into sessions, ordered by (source, telescope, start)."""
    cfg = cfg or SessionizerConfig()
    groups = group_packets(packets, cfg.level)
    keys = sorted(groups, key=lambda k: (k[0].sort_key(), k[1]))

    def work(k: GroupKey) -> List[ScanSession]:
        return split_group(k[0], k[1], groups[k], cfg.timeout_us)

    if threads > 1 and len(keys) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, keys))
    else:
        parts = [work(k) for k in keys]

    sessions = [s for part in parts for s in part]
    log.info(f"Sessionized {sum(s.packet_count for s in sessions)} packets from "
             f"{len(keys)} sources into {len(sessions)} sessions (level={cfg.level.value})")
    return sessions


def sessions_by_source(sessions: Iterable[ScanSession]) -> Dict[GroupKey, List[ScanSession]]:
    out: Dict[GroupKey, List[ScanSession]] = defaultdict(list)
    for s in sessions:
        out[(s.source, s.telescope)].append(s)
    for lst in out.values():
        lst.sort(key=lambda s: s.start_ts)
    return out


# ---------- session NDJSON ----------
def session_to_record(s: ScanSession) -> Dict:
    return {
        "session_id": s.session_id,
        "source": s.source.render(),
        "level": s.source.level.value,
        "telescope": s.telescope,
        "start": s.start_ts,
        "end": s.end_ts,
        "packets": s.packet_count,
        "distinct_targets": s.distinct_targets,
        "protocols": sorted(s.protocols),
        "proto_packets": {k: s.proto_packets[k] for k in sorted(s.proto_packets)},
        "dports": {k: sorted(v) for k, v in sorted(s.dports_by_proto.items())},
        "targets": [render(t) for t in s.targets],
    }


def record_to_session(rec: Dict) -> ScanSession:
    key = SourceKey.parse(rec["source"])
    if Level.parse(rec.get("level", key.level.value)) is not key.level:
        raise ValueError(f"level mismatch for source {rec['source']}")
    protocols = frozenset(rec.get("protocols", ()))
    for proto in protocols:
        if proto not in PROTOCOLS:
            raise ValueError(f"unknown proto {proto!r}")
    targets = tuple(parse_address(t) for t in rec.get("targets", ()))
    return ScanSession(
        source=key,
        telescope=str(rec["telescope"]),
        start_ts=int(rec["start"]),
        end_ts=int(rec["end"]),
        packet_count=int(rec["packets"]),
        targets=targets,
        protocols=protocols,
        proto_packets={k: int(v) for k, v in rec.get("proto_packets", {}).items()},
        dports_by_proto={k: frozenset(int(x) for x in v) for k, v in rec.get("dports", {}).items()},
    )


def write_sessions(sessions: Iterable[ScanSession], stream: IO[str]) -> int:
    n = 0
    for s in sessions:
        stream.write(json.dumps(session_to_record(s), separators=(",", ":")) + "\n")
        n += 1
    return n


def read_sessions(stream: Iterable[str]) -> Iterator[ScanSession]:
    for line_no, line in enumerate(stream, 1):
        line = line.strip()
        if not line:
            continue
        try:
            s = record_to_session(json.loads(line))
        except (KeyError, ValueError, TypeError) as e:
            raise DataError(f"session line {line_no}: {e}") from e
        yield s


def load_sessions(path: str) -> List[ScanSession]:
    with open(path, "r", encoding="utf-8") as f:
        return list(read_sessions(f))
