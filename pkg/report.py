"""
Report tables over sessions, scanner profiles and the announcement schedule.

Every table is a header plus rows of plain values; write_bundle turns them
into CSV files next to a manifest.json carrying the config hash, the config
itself and sha256 digests of inputs and tables.
"""

import logging
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Any, Dict, FrozenSet, List, Optional, Sequence, Set, Tuple

from addr6 import PROTOCOLS, Level, SourceKey, truncate
from address_types import DEFAULT_SERVICE_PORTS, aggregate_types
from artifacts import DAY_US, US, read_csv, save_json, sha256_file, utc_day_key, write_csv
from bgp_schedule import AnnouncementSchedule, cycle_at, most_specific_announced, span
from errors import DataError
from ingest import EnrichmentMaps
from netsel import CycleFeature, NetselConfig, classify_cycle
from sessionizer import ScanSession

log = logging.getLogger("report")

TRACEROUTE_RANGE = (33434, 33523)


@dataclass(frozen=True)
class ReportConfig:
    heavy_hitter_share: float = 0.10
    top_k: int = 5
    discovery_prefix_len: int = 48
    reactive_max_delay_secs: int = 3600
    reactive_min_cycles: int = 2


@dataclass
class Table:
    name: str
    header: List[str]
    rows: List[List[Any]] = field(default_factory=list)


@dataclass
class ScannerProfile:
    source: SourceKey
    telescope: str
    sessions: int
    packets: int
    temporal: str
    period_secs: Optional[int] = None
    netsel: str = ""
    addrsel: str = ""
    nettype: str = "unknown"
    asn: Optional[int] = None
    country: Optional[str] = None
    rdns: Optional[str] = None


PROFILE_HEADER = ["source", "telescope", "sessions", "packets", "temporal", "period_secs",
                  "netsel", "addrsel", "nettype", "asn", "country", "rdns"]


def profile_row(p: ScannerProfile) -> List[Any]:
    return [p.source.render(), p.telescope, p.sessions, p.packets, p.temporal, p.period_secs,
            p.netsel, p.addrsel, p.nettype, p.asn, p.country, p.rdns]


def _opt_int(v: str) -> Optional[int]:
    return int(v) if v not in ("", None) else None


def read_profiles(paths: Sequence[str]) -> List[ScannerProfile]:
    """Merge classification CSVs by (source, telescope); later files fill blanks."""
    merged: Dict[Tuple[str, str], Dict[str, str]] = {}
    for path in paths:
        for row in read_csv(path):
            if "source" not in row or "telescope" not in row:
                raise DataError(f"{path}: classification CSV needs source and telescope columns")
            cur = merged.setdefault((row["source"], row["telescope"]), {})
            for k, v in row.items():
                if v not in ("", None) and not cur.get(k):
                    cur[k] = v
    out = []
    for (src, tel), row in sorted(merged.items()):
        out.append(ScannerProfile(
            source=SourceKey.parse(src),
            telescope=tel,
            sessions=int(row.get("sessions") or 0),
            packets=int(row.get("packets") or 0),
            temporal=row.get("temporal", ""),
            period_secs=_opt_int(row.get("period_secs", "")),
            netsel=row.get("netsel", ""),
            addrsel=row.get("addrsel", ""),
            nettype=row.get("nettype") or "unknown",
            asn=_opt_int(row.get("asn", "")),
            country=row.get("country") or None,
            rdns=row.get("rdns") or None,
        ))
    return out


def _share(n: int, total: int) -> float:
    return n / total if total else 0.0


# ---------- traffic tables ----------
def protocol_table(sessions: Sequence[ScanSession]) -> Table:
    t = Table("protocols", ["proto", "packets", "packets_share", "sessions", "sessions_share", "sources", "sources_share"])
    packets: Counter = Counter()
    sess: Counter = Counter()
    srcs: Dict[str, Set[SourceKey]] = defaultdict(set)
    all_sources = set()
    for s in sessions:
        all_sources.add(s.source)
        for proto, n in s.proto_packets.items():
            packets[proto] += n
            sess[proto] += 1
            srcs[proto].add(s.source)
    total = sum(packets.values())
    for proto in PROTOCOLS:
        if packets[proto]:
            t.rows.append([proto, packets[proto], _share(packets[proto], total),
                           sess[proto], _share(sess[proto], len(sessions)),
                           len(srcs[proto]), _share(len(srcs[proto]), len(all_sources))])
    return t


def target_type_table(sessions: Sequence[ScanSession], service_ports: FrozenSet[int] = DEFAULT_SERVICE_PORTS) -> Table:
    t = Table("target_types", ["type", "packets", "packets_share", "sources", "sources_share"])
    if sessions:
        t.rows = aggregate_types(sessions, service_ports)
    return t


def _port_label(proto: str, port: int) -> str:
    if proto == "udp" and TRACEROUTE_RANGE[0] <= port <= TRACEROUTE_RANGE[1]:
        return "traceroute"
    return str(port)


def top_ports(sessions: Sequence[ScanSession], k: int = 5) -> Table:
    """Per protocol, the k ports hit by most sessions (each port once per session)."""
    t = Table("top_ports", ["proto", "rank", "port", "sessions", "sessions_share"])
    for proto in ("tcp", "udp"):
        counts: Counter = Counter()
        n_sessions = 0
        for s in sessions:
            ports = s.dports_by_proto.get(proto)
            if not ports:
                continue
            n_sessions += 1
            for label in {_port_label(proto, p) for p in ports}:
                counts[label] += 1
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
        for rank, (label, n) in enumerate(ranked, 1):
            t.rows.append([proto, rank, label, n, _share(n, n_sessions)])
    return t


def host_packet_counts(sessions: Sequence[ScanSession]) -> Dict[str, Counter]:
    """Packets per (telescope, /128 source).

    Sessions keyed at /64 are split back into their /128 senders from the
    retained packets. Sessions loaded from disk carry no packets and keep
    their /64 key.
    """
    per_tel: Dict[str, Counter] = defaultdict(Counter)
    for s in sessions:
        if s.source.level is Level.ADDR128 or not s.packets:
            per_tel[s.telescope][s.source] += s.packet_count
            continue
        for p in s.packets:
            per_tel[s.telescope][SourceKey(Level.ADDR128, p.src)] += 1
    return per_tel


def heavy_hitters(sessions: Sequence[ScanSession], threshold: float = 0.10) -> Table:
    """/128 sources sending strictly more than `threshold` of a telescope's packets."""
    t = Table("heavy_hitters", ["telescope", "source", "packets", "packets_share"])
    per_tel = host_packet_counts(sessions)
    for tel in sorted(per_tel):
        counts = per_tel[tel]
        total = sum(counts.values())
        hits = [(src, n) for src, n in counts.items() if n > threshold * total]
        for src, n in sorted(hits, key=lambda x: (-x[1], x[0].sort_key())):
            t.rows.append([tel, src.render(), n, _share(n, total)])
    return t


def telescope_comparison(sessions: Sequence[ScanSession], maps: Optional[EnrichmentMaps] = None) -> Table:
    t = Table("telescopes", ["telescope", "packets", "sessions", "sources", "source_prefixes48", "asns"])
    groups: Dict[str, List[ScanSession]] = defaultdict(list)
    for s in sessions:
        groups[s.telescope].append(s)
    for tel in sorted(groups):
        group = groups[tel]
        sources = {s.source for s in group}
        asns = None
        if maps is not None:
            asns = len({a for a in (maps.asn_table.lookup(src.value) for src in sources) if a is not None})
        t.rows.append([
            tel,
            sum(s.packet_count for s in group),
            len(group),
            len(sources),
            len({truncate(src.value, 48) for src in sources}),
            asns,
        ])
    return t


def source_intersections(
    sessions: Sequence[ScanSession],
    key: str = "addr128",
    maps: Optional[EnrichmentMaps] = None,
) -> Table:
    """Exclusive telescope-combination counts (UpSet style) plus per-telescope totals."""
    t = Table(f"intersections_{key}", ["kind", "telescopes", "count"])
    seen: Dict[Any, Set[str]] = defaultdict(set)
    if key == "addr128":
        for tel, counts in host_packet_counts(sessions).items():
            for src in counts:
                seen[src].add(tel)
    elif key == "asn":
        if maps is None:
            raise DataError("ASN intersections need an ASN map")
        for s in sessions:
            asn = maps.asn_table.lookup(s.source.value)
            if asn is not None:
                seen[asn].add(s.telescope)
    else:
        raise ValueError(f"unknown intersection key {key!r}")

    telescopes = sorted({tel for tels in seen.values() for tel in tels})
    for tel in telescopes:
        t.rows.append(["total", tel, sum(1 for tels in seen.values() if tel in tels)])
    if len(telescopes) >= 2:
        combos = Counter("+".join(sorted(tels)) for tels in seen.values())
        for combo, n in sorted(combos.items(), key=lambda kv: (-kv[1], kv[0])):
            t.rows.append(["exclusive", combo, n])
    return t


# ---------- time series ----------
def _days(lo: int, hi: int) -> List[Tuple[str, int]]:
    first = lo - lo % DAY_US
    return [(utc_day_key(d), d) for d in range(first, hi, DAY_US)]


def per_prefix_cumulative(sessions: Sequence[ScanSession], schedule: AnnouncementSchedule, telescope: str = "T1") -> Table:
    """Daily cumulative session counts per most-specific announced prefix."""
    t = Table("per_prefix_cumulative", ["day", "prefix", "sessions"])
    daily: Dict[Tuple[str, Any], int] = Counter()
    prefixes = set()
    for s in sessions:
        if s.telescope != telescope or not s.targets:
            continue
        pos = cycle_at(schedule, s.start_ts)
        if pos is None or pos.dark:
            continue
        prefix = most_specific_announced(schedule, pos.index, s.targets[0])
        if prefix is None:
            continue
        prefixes.add(prefix)
        daily[(utc_day_key(s.start_ts), prefix)] += 1

    ordered = sorted(prefixes, key=lambda p: (int(p.network_address), p.prefixlen))
    running = Counter()
    lo, hi = span(schedule)
    for day, _ in _days(lo, hi):
        for p in ordered:
            running[p] += daily.get((day, p), 0)
            t.rows.append([day, str(p), running[p]])
    return t


def new_prefix_discovery(
    sessions: Sequence[ScanSession],
    window: Optional[Tuple[int, int]] = None,
    prefix_len: int = 48,
) -> Table:
    t = Table("new_prefix_discovery", ["day", "new_prefixes", "cumulative"])
    if not sessions:
        return t
    first_seen: Dict[Any, int] = {}
    for s in sorted(sessions, key=lambda s: s.start_ts):
        first_seen.setdefault(truncate(s.source.value, prefix_len), s.start_ts)
    lo, hi = window or (min(s.start_ts for s in sessions), max(s.end_ts for s in sessions) + 1)
    per_day = Counter(utc_day_key(ts) for ts in first_seen.values())
    total = 0
    for day, _ in _days(lo, hi):
        total += per_day.get(day, 0)
        t.rows.append([day, per_day.get(day, 0), total])
    return t


# ---------- taxonomy ----------
def taxonomy_table(profiles: Sequence[ScannerProfile]) -> Table:
    t = Table("taxonomy", ["axis", "label", "scanners", "scanners_share", "sessions", "sessions_share"])
    total_scanners = len(profiles)
    total_sessions = sum(p.sessions for p in profiles)
    for axis in ("temporal", "netsel", "addrsel"):
        scanners: Counter = Counter()
        sess: Counter = Counter()
        for p in profiles:
            label = getattr(p, axis)
            if not label:
                continue
            scanners[label] += 1
            sess[label] += p.sessions
        for label in sorted(scanners):
            t.rows.append([axis, label, scanners[label], _share(scanners[label], total_scanners),
                           sess[label], _share(sess[label], total_sessions)])
    return t


def netsel_table(features: Sequence[CycleFeature], cfg: Optional[NetselConfig] = None) -> Table:
    t = Table("netsel_cycles", ["cycle", "label", "sources"])
    counts: Counter = Counter((f.cycle, classify_cycle(f, cfg=cfg).value) for f in features)
    for (cycle, label), n in sorted(counts.items()):
        t.rows.append([cycle, label, n])
    return t


def nettype_table(profiles: Sequence[ScannerProfile]) -> Table:
    t = Table("nettypes", ["nettype", "sources", "sources_share"])
    counts = Counter(p.nettype or "unknown" for p in profiles)
    for kind, n in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
        t.rows.append([kind, n, _share(n, len(profiles))])
    return t


def reactive_sources(
    sessions: Sequence[ScanSession],
    schedule: AnnouncementSchedule,
    max_delay_secs: int = 3600,
    min_cycles: int = 2,
    telescope: str = "T1",
) -> Table:
    """Sources whose first session in a cycle follows the announcement within max_delay."""
    t = Table("reactive_sources", ["source", "telescope", "active_cycles", "triggered_cycles", "median_delay_secs"])
    first: Dict[SourceKey, Dict[int, int]] = defaultdict(dict)
    for s in sessions:
        if s.telescope != telescope:
            continue
        pos = cycle_at(schedule, s.start_ts)
        if pos is None or pos.index == 0 or pos.dark:
            continue
        cur = first[s.source].get(pos.index)
        if cur is None or s.start_ts < cur:
            first[s.source][pos.index] = s.start_ts

    max_delay = max_delay_secs * US
    for src in sorted(first, key=lambda k: k.sort_key()):
        delays = sorted(ts - schedule.cycle(idx).window[0] for idx, ts in first[src].items())
        triggered = [d for d in delays if d <= max_delay]
        active = len(delays)
        if len(triggered) >= min_cycles and len(triggered) >= active - 1:
            mid = triggered[len(triggered) // 2] if len(triggered) % 2 else \
                (triggered[len(triggered) // 2 - 1] + triggered[len(triggered) // 2]) // 2
            t.rows.append([src.render(), telescope, active, len(triggered), mid // US])
    return t


# ---------- bundle ----------
def build_bundle(
    sessions: Sequence[ScanSession],
    profiles: Sequence[ScannerProfile] = (),
    schedule: Optional[AnnouncementSchedule] = None,
    features: Sequence[CycleFeature] = (),
    maps: Optional[EnrichmentMaps] = None,
    cfg: Optional[ReportConfig] = None,
    netsel_cfg: Optional[NetselConfig] = None,
    service_ports: FrozenSet[int] = DEFAULT_SERVICE_PORTS,
) -> List[Table]:
    cfg = cfg or ReportConfig()
    netsel_cfg = netsel_cfg or NetselConfig()
    tables = [
        protocol_table(sessions),
        target_type_table(sessions, service_ports),
        top_ports(sessions, cfg.top_k),
        heavy_hitters(sessions, cfg.heavy_hitter_share),
        telescope_comparison(sessions, maps),
        new_prefix_discovery(sessions, span(schedule) if schedule else None, cfg.discovery_prefix_len),
        source_intersections(sessions, "addr128"),
    ]
    if maps is not None and len(maps.asn_table):
        tables.append(source_intersections(sessions, "asn", maps))
    if profiles:
        tables += [taxonomy_table(profiles), nettype_table(profiles)]
    if schedule is not None:
        tel = netsel_cfg.schedule_telescope
        tables += [
            per_prefix_cumulative(sessions, schedule, tel),
            netsel_table(features, netsel_cfg),
            reactive_sources(sessions, schedule, cfg.reactive_max_delay_secs, cfg.reactive_min_cycles, tel),
        ]
    return tables


def write_bundle(
    tables: Sequence[Table],
    out_dir: str,
    config: Dict[str, Any],
    config_hash: str,
    inputs: Sequence[str] = (),
) -> Dict[str, Any]:
    os.makedirs(out_dir, exist_ok=True)
    manifest: Dict[str, Any] = {
        "config_hash": config_hash,
        "config": config,
        "inputs": {os.path.basename(path): sha256_file(path) for path in sorted(inputs)},
        "tables": {},
    }
    for table in tables:
        fname = f"{table.name}.csv"
        path = os.path.join(out_dir, fname)
        write_csv(path, table.header, table.rows)
        manifest["tables"][table.name] = {"file": fname, "rows": len(table.rows), "sha256": sha256_file(path)}
    save_json(os.path.join(out_dir, "manifest.json"), manifest)
    log.info(f"Report: {len(tables)} tables written to {out_dir} (config {config_hash})")
    return manifest
