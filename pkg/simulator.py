"""
Synthetic scanner population for closed-loop validation.

Every scanner is described along the three taxonomy axes (timing, network
selection, address selection) plus protocol mix, ports and an optional
payload template. Scanners are BGP-aware: they only probe prefixes announced
at emission time, stay silent on dark days and react to a new announcement
after `reaction_delay_secs`.

Randomness: one numpy Generator per scanner, spawned from a SeedSequence,
so output depends only on the seed and the spec list.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from addr6 import Address6, Prefix6, ProbePacket, contains, parse_address, truncate
from artifacts import US, write_csv
from bgp_schedule import AnnouncementSchedule, cycle_at, span
from errors import DataError

log = logging.getLogger("simulator")

TEMPORAL_KINDS = ("one_off", "periodic", "intermittent", "reactive")
NETSEL_KINDS = ("single_prefix", "size_independent", "size_dependent")
ADDRSEL_KINDS = ("low_byte_iteration", "sequential_traversal", "random")
SOURCE_MODES = ("fixed_128", "rotate_in_64")

GROUND_TRUTH_HEADER = ["scanner_id", "source128", "source64", "temporal", "period_secs", "netsel", "addrsel", "tool"]

HOME_BASE = 0x3FFF << 112  # 3fff::/20, outside any telescope
VISIT_MARGIN_US = 3600 * US
TRACEROUTE_PORTS = (33434, 33523)


@dataclass(frozen=True)
class TemporalSpec:
    kind: str
    period_secs: int = 0
    jitter: float = 0.0
    delay_secs: int = 1800
    min_gap_secs: int = 2 * 3600
    max_gap_secs: int = 200 * 3600

    def __post_init__(self):
        if self.kind not in TEMPORAL_KINDS:
            raise ValueError(f"unknown temporal kind {self.kind!r}")
        if self.kind == "periodic" and self.period_secs <= 0:
            raise ValueError("periodic scanner needs a positive period")


@dataclass(frozen=True)
class PayloadTemplate:
    kind: str = "hex"  # hex | random
    hex: str = ""
    counter_offset: Optional[int] = None
    length: int = 32
    tool: str = ""

    def render(self, counter: int, rng: np.random.Generator) -> bytes:
        if self.kind == "random":
            return rng.bytes(self.length)
        data = bytearray.fromhex(self.hex)
        if self.counter_offset is not None:
            off = self.counter_offset
            data[off:off + 4] = (counter & 0xFFFFFFFF).to_bytes(4, "big")
        return bytes(data)


@dataclass(frozen=True)
class ScannerSpec:
    id: str
    home: Address6
    temporal: TemporalSpec
    netsel: str = "single_prefix"
    addrsel: str = "low_byte_iteration"
    source_mode: str = "fixed_128"
    single_choice: str = "lower"  # lower | random
    proto_mix: Dict[str, float] = field(default_factory=lambda: {"icmp6": 1.0})
    ports: Tuple[int, ...] = (80,)
    payload: Optional[PayloadTemplate] = None
    rate: int = 16
    telescope: str = "T1"

    def __post_init__(self):
        if self.netsel not in NETSEL_KINDS:
            raise ValueError(f"unknown netsel {self.netsel!r}")
        if self.addrsel not in ADDRSEL_KINDS:
            raise ValueError(f"unknown address selection {self.addrsel!r}")
        if self.source_mode not in SOURCE_MODES:
            raise ValueError(f"unknown source mode {self.source_mode!r}")
        if self.rate < 1:
            raise ValueError("rate must be at least 1")
        if abs(sum(self.proto_mix.values()) - 1.0) > 1e-9:
            raise ValueError(f"protocol weights of {self.id} do not sum to 1")
        if any(p in ("tcp", "udp") for p in self.proto_mix) and not self.ports:
            raise ValueError(f"{self.id}: tcp/udp probes need ports")


# ---------- expected labels ----------
def expected_labels(spec: ScannerSpec, schedule: AnnouncementSchedule) -> Dict[str, Any]:
    t = spec.temporal
    if t.kind == "one_off":
        temporal, period = "one_off", None
    elif t.kind == "periodic":
        temporal, period = "periodic", t.period_secs
    elif t.kind == "reactive":
        temporal, period = "periodic", schedule.cycle_secs
    else:
        temporal, period = "intermittent", None
    addrsel = "random" if spec.addrsel == "random" else "structured"
    tool = spec.payload.tool if spec.payload else ""
    return {"temporal": temporal, "period_secs": period, "netsel": spec.netsel, "addrsel": addrsel, "tool": tool}


def ground_truth_rows(specs: Sequence[ScannerSpec], schedule: AnnouncementSchedule) -> List[List]:
    rows = []
    for spec in specs:
        e = expected_labels(spec, schedule)
        rows.append([
            spec.id, str(spec.home), f"{truncate(spec.home, 64).network_address}/64",
            e["temporal"], e["period_secs"], e["netsel"], e["addrsel"], e["tool"],
        ])
    return rows


# ---------- visit timing ----------
def _valid_visit(schedule: AnnouncementSchedule, ts: int, delay_us: int) -> bool:
    pos = cycle_at(schedule, ts)
    if pos is None or pos.dark:
        return False
    if pos.index == 0:
        return ts + VISIT_MARGIN_US < schedule.baseline[1]
    c = schedule.cycle(pos.index)
    return c.window[0] + delay_us <= ts and ts + VISIT_MARGIN_US < c.window[1]


def visit_times(
    spec: ScannerSpec,
    schedule: AnnouncementSchedule,
    rng: np.random.Generator,
    reaction_delay_secs: int = 1800,
) -> List[int]:
    t = spec.temporal
    lo, hi = span(schedule)
    delay_us = reaction_delay_secs * US
    times: List[int] = []

    if t.kind == "periodic":
        p = t.period_secs * US
        cur = lo + int(rng.uniform(0, p))
        while cur < hi:
            times.append(cur + int(rng.uniform(-t.jitter, t.jitter) * p))
            cur += p
    elif t.kind == "intermittent":
        cur = lo + int(rng.uniform(0, t.max_gap_secs) * US)
        while cur < hi:
            times.append(cur)
            gap = math.exp(rng.uniform(math.log(t.min_gap_secs), math.log(t.max_gap_secs)))
            cur += int(gap * US)
    elif t.kind == "reactive":
        d = max(t.delay_secs, reaction_delay_secs) * US
        times = [c.window[0] + d for c in schedule.cycles]
    else:
        first = 2 if spec.netsel == "size_independent" else 1
        cycles = [c for c in schedule.cycles if c.index >= first]
        if cycles:
            c = cycles[int(rng.integers(len(cycles)))]
            room = c.window[1] - VISIT_MARGIN_US - (c.window[0] + delay_us)
            times = [c.window[0] + delay_us + int(rng.uniform(0, max(room, 1)))]
        else:
            times = [lo + int(rng.uniform(0, max(schedule.baseline[1] - lo - VISIT_MARGIN_US, 1)))]

    return [ts for ts in sorted(times) if _valid_visit(schedule, ts, delay_us)]


# ---------- targets ----------
def _spread(total: int, k: int) -> List[int]:
    return [max(1, total // k + (1 if i < total % k else 0)) for i in range(k)]


def select_prefixes(
    spec: ScannerSpec,
    announced: Sequence[Prefix6],
    visit_in_cycle: int,
    cycle_choice: Dict[int, Prefix6],
    cycle_index: int,
    rng: np.random.Generator,
) -> List[Prefix6]:
    announced = sorted(announced, key=lambda p: int(p.network_address))
    if spec.netsel == "single_prefix":
        if spec.single_choice == "lower":
            return [announced[0]]
        if cycle_index not in cycle_choice:
            cycle_choice[cycle_index] = announced[int(rng.integers(len(announced)))]
        return [cycle_choice[cycle_index]]
    if spec.netsel == "size_independent":
        return announced

    shortest = min(p.prefixlen for p in announced)
    chosen = [p for p in announced if p.prefixlen == shortest]
    for length in sorted({p.prefixlen for p in announced} - {shortest}):
        ratio = 1 << (length - shortest)
        slot = ratio // 2 if ratio >= 4 else 0
        if visit_in_cycle % ratio == slot:
            members = [p for p in announced if p.prefixlen == length]
            chosen.append(members[int(rng.integers(len(members)))])
    return sorted(chosen, key=lambda p: int(p.network_address))


def prefix_targets(spec: ScannerSpec, prefix: Prefix6, n: int, rng: np.random.Generator) -> List[Address6]:
    base = int(prefix.network_address)
    host_bits = 128 - prefix.prefixlen
    if spec.addrsel == "low_byte_iteration":
        return [Address6(base + j) for j in range(1, n + 1)]
    if spec.addrsel == "sequential_traversal":
        return [Address6(base + (j << 64) + 1) for j in range(n)]
    host_mask = (1 << host_bits) - 1
    return [Address6(base | (int.from_bytes(rng.bytes(16), "big") & host_mask)) for _ in range(n)]


# ---------- packets ----------
def _pick(rng: np.random.Generator, items: Sequence[Any]) -> Any:
    return items[int(rng.integers(len(items)))]


def emit_visit(
    spec: ScannerSpec,
    start: int,
    targets: Sequence[Address6],
    counter: int,
    rng: np.random.Generator,
) -> List[ProbePacket]:
    protos = sorted(spec.proto_mix)
    weights = np.array([spec.proto_mix[p] for p in protos], dtype=np.float64)
    home64 = int(spec.home) & ~((1 << 64) - 1)
    packets = []
    ts = start
    for i, dst in enumerate(targets):
        if i:
            ts += int(rng.uniform(0.5, 5.0) * US)
        proto = protos[int(rng.choice(len(protos), p=weights))]
        src = spec.home
        if spec.source_mode == "rotate_in_64":
            src = Address6(home64 | (int.from_bytes(rng.bytes(8), "big") or 1))
        payload = spec.payload.render(counter + i, rng) if spec.payload else b""
        if proto == "icmp6":
            packets.append(ProbePacket(ts=ts, src=src, dst=dst, proto="icmp6", icmp_type=128,
                                       payload=payload, telescope=spec.telescope))
        else:
            packets.append(ProbePacket(
                ts=ts, src=src, dst=dst, proto=proto,
                sport=int(rng.integers(32768, 61000)), dport=int(_pick(rng, spec.ports)),
                tcp_flags="S" if proto == "tcp" else None,
                payload=payload, telescope=spec.telescope,
            ))
    return packets


def simulate_scanner(
    spec: ScannerSpec,
    schedule: AnnouncementSchedule,
    rng: np.random.Generator,
    reaction_delay_secs: int = 1800,
) -> List[ProbePacket]:
    packets: List[ProbePacket] = []
    visits_per_cycle: Dict[int, int] = {}
    cycle_choice: Dict[int, Prefix6] = {}
    counter = 0
    for start in visit_times(spec, schedule, rng, reaction_delay_secs):
        pos = cycle_at(schedule, start)
        i = visits_per_cycle.get(pos.index, 0)
        visits_per_cycle[pos.index] = i + 1
        prefixes = select_prefixes(spec, pos.announced, i, cycle_choice, pos.index, rng)
        targets: List[Address6] = []
        for prefix, n in zip(prefixes, _spread(spec.rate, len(prefixes))):
            targets.extend(prefix_targets(spec, prefix, n, rng))
        packets.extend(emit_visit(spec, start, targets, counter, rng))
        counter += len(targets)
    return packets


def simulate(
    specs: Sequence[ScannerSpec],
    schedule: AnnouncementSchedule,
    seed: int,
    reaction_delay_secs: int = 1800,
) -> Tuple[List[ProbePacket], List[List]]:
    """Trace (sorted by time) and ground-truth rows for a scanner population."""
    ids = [s.id for s in specs]
    if len(set(ids)) != len(ids):
        raise DataError("scanner ids must be unique")
    for s in specs:
        if contains(schedule.base, s.home):
            raise DataError(f"scanner {s.id} lives inside the telescope prefix {schedule.base}")

    children = np.random.SeedSequence(seed).spawn(len(specs))
    packets: List[ProbePacket] = []
    for spec, child in zip(specs, children):
        packets.extend(simulate_scanner(spec, schedule, np.random.default_rng(child), reaction_delay_secs))
    packets.sort(key=lambda p: (p.ts, int(p.src), int(p.dst)))
    log.info(f"Simulated {len(specs)} scanners, {len(packets)} packets")
    return packets, ground_truth_rows(specs, schedule)


def write_ground_truth(path: str, rows: Sequence[Sequence[Any]]) -> None:
    write_csv(path, GROUND_TRUTH_HEADER, rows)


# ---------- population ----------
TOOL_TEMPLATES = (
    PayloadTemplate(kind="hex", hex="404142434445464748494a4b4c4d4e4f505152535455565758595a5b5c5d5e5f", tool="Traceroute"),
    PayloadTemplate(kind="hex", hex="79617272703600000000000000000000", counter_offset=8, tool="Yarrp6"),
    PayloadTemplate(kind="random", length=32),
)

PROTO_MIXES = (
    {"icmp6": 1.0},
    {"tcp": 1.0},
    {"udp": 1.0},
    {"icmp6": 0.6, "tcp": 0.3, "udp": 0.1},
)

PORT_PLANS = ((80, 443), (22,), (53, 123), (8080, 8443, 3389))
PERIODS_SECS = (6 * 3600, 8 * 3600, 12 * 3600, 24 * 3600)


def axis_combinations() -> List[Tuple[str, str, str]]:
    combos = []
    for t in TEMPORAL_KINDS:
        for n in NETSEL_KINDS:
            if n == "size_dependent" and t not in ("periodic", "intermittent"):
                continue
            for a in ADDRSEL_KINDS:
                combos.append((t, n, a))
    return combos


def generate_population(n: int, seed: int, schedule: AnnouncementSchedule, telescope: str = "T1") -> List[ScannerSpec]:
    """n scanners cycling through every observable axis combination."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5CA7]))
    combos = axis_combinations()
    specs = []
    for i in range(n):
        t_kind, netsel, addrsel = combos[i % len(combos)]
        if t_kind == "periodic":
            temporal = TemporalSpec("periodic", period_secs=_pick(rng, PERIODS_SECS), jitter=float(rng.uniform(0, 0.05)))
        else:
            temporal = TemporalSpec(t_kind)

        payload = None
        proto_mix = PROTO_MIXES[i % len(PROTO_MIXES)]
        ports = PORT_PLANS[i % len(PORT_PLANS)]
        if i % 5 == 0:
            payload = TOOL_TEMPLATES[(i // 5) % len(TOOL_TEMPLATES)]
            if payload.tool == "Traceroute":
                proto_mix, ports = {"udp": 1.0}, tuple(range(TRACEROUTE_PORTS[0], TRACEROUTE_PORTS[0] + 8))

        home_iid = int.from_bytes(rng.bytes(8), "big") or 1
        home = Address6(HOME_BASE | ((i + 1) << 64) | home_iid)
        rate = int(rng.integers(100, 121)) if addrsel == "random" else int(rng.integers(8, 25))
        specs.append(ScannerSpec(
            id=f"s{i:04d}",
            home=home,
            temporal=temporal,
            netsel=netsel,
            addrsel=addrsel,
            source_mode="rotate_in_64" if i % 7 == 3 else "fixed_128",
            single_choice="random" if i % 2 else "lower",
            proto_mix=dict(proto_mix),
            ports=tuple(ports),
            payload=payload,
            rate=rate,
            telescope=telescope,
        ))
    return specs


# ---------- spec files ----------
def spec_to_json(spec: ScannerSpec) -> Dict[str, Any]:
    doc = asdict(spec)
    doc["home"] = str(spec.home)
    doc["ports"] = list(spec.ports)
    return doc


def spec_from_json(doc: Dict[str, Any]) -> ScannerSpec:
    try:
        payload = PayloadTemplate(**doc["payload"]) if doc.get("payload") else None
        return ScannerSpec(
            id=str(doc["id"]),
            home=parse_address(doc["home"]),
            temporal=TemporalSpec(**doc["temporal"]),
            netsel=doc.get("netsel", "single_prefix"),
            addrsel=doc.get("addrsel", "low_byte_iteration"),
            source_mode=doc.get("source_mode", "fixed_128"),
            single_choice=doc.get("single_choice", "lower"),
            proto_mix={k: float(v) for k, v in doc.get("proto_mix", {"icmp6": 1.0}).items()},
            ports=tuple(int(p) for p in doc.get("ports", (80,))),
            payload=payload,
            rate=int(doc.get("rate", 16)),
            telescope=str(doc.get("telescope", "T1")),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"bad scanner spec {doc.get('id', '?')}: {e}") from e
