"""
Scanner profiles and the closed-loop validation run.

build_profiles folds the three classifiers (temporal, network selection,
address selection) plus offline enrichment into one ScannerProfile per
(source, telescope). run_validate drives simulator -> sessionizer ->
classifiers -> report and scores the result against ground truth.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

from addr6 import Level, SourceKey
from address_types import AddressSelection, classify_session_addresses, scanner_selection
from artifacts import US, save_json, write_csv
from bgp_schedule import AnnouncementSchedule, generate_schedule, schedule_to_json, span
from config import RunConfig
from errors import AcceptanceError
from fingerprint import cluster_payloads, label_cluster, load_signatures, tool_report
from ingest import EnrichmentMaps, enrich, write_ndjson
from netsel import CycleFeature, classify_sources
from randomness import SessionRandomness, session_randomness
from report import PROFILE_HEADER, ScannerProfile, Table, build_bundle, profile_row, write_bundle
from sessionizer import ScanSession, SessionizerConfig, sessionize, sessions_by_source, write_sessions
from simulator import generate_population, simulate, write_ground_truth
from temporal import TemporalKind, classify_temporal

log = logging.getLogger("pipeline")

THRESHOLDS = {"temporal": 0.95, "netsel": 0.90, "addrsel": 0.90}

VALIDATE_T0 = 1_704_067_200 * US  # 2024-01-01T00:00:00Z
VALIDATE_CYCLES = 5
VALIDATE_BASELINE_DAYS = 7


def observation_window(sessions: Sequence[ScanSession], schedule: Optional[AnnouncementSchedule]) -> Tuple[int, int]:
    lo = min(s.start_ts for s in sessions)
    hi = max(s.end_ts for s in sessions) + 1
    if schedule is not None:
        s_lo, s_hi = span(schedule)
        lo, hi = min(lo, s_lo), max(hi, s_hi)
    return lo, hi


def session_address_label(s: ScanSession, cfg: RunConfig) -> Tuple[AddressSelection, Optional[SessionRandomness]]:
    rand = None
    if len(s.targets) >= cfg.randomness.min_packets and s.telescope in cfg.telescopes:
        rand = session_randomness(s, cfg.telescopes[s.telescope], cfg.randomness)
    return classify_session_addresses(s, rand, cfg.address), rand


def build_profiles(
    sessions: Sequence[ScanSession],
    cfg: RunConfig,
    schedule: Optional[AnnouncementSchedule] = None,
    maps: Optional[EnrichmentMaps] = None,
    threads: int = 1,
) -> Tuple[List[ScannerProfile], List[CycleFeature]]:
    if not sessions:
        return [], []
    window = observation_window(sessions, schedule)
    netsel_labels, features = classify_sources(sessions, schedule, cfg.netsel)
    groups = sessions_by_source(sessions)
    keys = sorted(groups, key=lambda k: (k[0].sort_key(), k[1]))

    def work(key: Tuple[SourceKey, str]) -> ScannerProfile:
        group = groups[key]
        temporal = classify_temporal(group, cfg.temporal, window)
        addr = scanner_selection(session_address_label(s, cfg)[0] for s in group)
        netsel = netsel_labels.get(key)
        meta = enrich(key[0], maps) if maps is not None else None
        return ScannerProfile(
            source=key[0],
            telescope=key[1],
            sessions=len(group),
            packets=sum(s.packet_count for s in group),
            temporal=temporal.kind.value,
            period_secs=temporal.period_secs,
            netsel=netsel.value if netsel else "",
            addrsel=addr.value,
            nettype=meta.nettype if meta else "unknown",
            asn=meta.asn if meta else None,
            country=meta.country if meta else None,
            rdns=meta.rdns if meta else None,
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            profiles = list(pool.map(work, keys))
    else:
        profiles = [work(k) for k in keys]
    log.info(f"Profiles: {len(profiles)} scanners classified")
    return profiles, features


def write_profiles(path: str, profiles: Sequence[ScannerProfile]) -> None:
    write_csv(path, PROFILE_HEADER, (profile_row(p) for p in profiles))


# ---------- closed loop ----------
@dataclass
class Scorecard:
    seed: int
    scanners: int
    config_hash: str
    correct: Dict[str, int] = field(default_factory=lambda: {axis: 0 for axis in THRESHOLDS})
    misclassified: List[Dict[str, Any]] = field(default_factory=list)
    period_errors: List[float] = field(default_factory=list)

    def accuracy(self) -> Dict[str, float]:
        return {axis: (self.correct[axis] / self.scanners if self.scanners else 1.0) for axis in THRESHOLDS}

    def failed_axes(self) -> List[str]:
        acc = self.accuracy()
        return [axis for axis, need in THRESHOLDS.items() if acc[axis] < need]

    def as_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "scanners": self.scanners,
            "config_hash": self.config_hash,
            "accuracy": {k: round(v, 6) for k, v in self.accuracy().items()},
            "thresholds": THRESHOLDS,
            "passed": not self.failed_axes(),
            "max_period_error": round(max(self.period_errors), 6) if self.period_errors else None,
            "misclassified": self.misclassified,
        }


def score(
    truth: Sequence[Sequence[Any]],
    profiles: Sequence[ScannerProfile],
    telescope: str,
    seed: int,
    config_hash: str,
) -> Scorecard:
    by_key = {(p.source, p.telescope): p for p in profiles}
    card = Scorecard(seed=seed, scanners=len(truth), config_hash=config_hash)
    for row in truth:
        scanner_id, _, source64, temporal, period, netsel, addrsel, _ = row
        key = (SourceKey.parse(source64), telescope)
        got = by_key.get(key)
        expected = {"temporal": temporal, "netsel": netsel, "addrsel": addrsel}
        for axis, want in expected.items():
            have = getattr(got, axis) if got else ""
            if have == want:
                card.correct[axis] += 1
            else:
                card.misclassified.append({"scanner_id": scanner_id, "axis": axis, "expected": want, "got": have})
        if got and temporal == TemporalKind.PERIODIC.value and got.period_secs and period:
            card.period_errors.append(abs(got.period_secs - period) / period)
    return card


def fingerprint_tables(sessions: Sequence[ScanSession], cfg: RunConfig, rdns=None) -> List[Table]:
    sigs = load_signatures(cfg.signatures) if cfg.signatures and os.path.exists(cfg.signatures) else []
    clusters = [label_cluster(c, sigs, rdns, cfg.fingerprint)
                for c in cluster_payloads(sessions, cfg.fingerprint.clustering, cfg.fingerprint)]
    tools = Table("tools", ["tool", "scanners", "scanners_share", "sessions", "sessions_share"], tool_report(clusters))
    return [tools]


def run_validate(cfg: RunConfig, seed: int, n_scanners: int, out_dir: str, threads: int = 1) -> Scorecard:
    os.makedirs(out_dir, exist_ok=True)
    telescope = cfg.netsel.schedule_telescope
    base = cfg.telescope_prefix(telescope)
    schedule = generate_schedule(base, VALIDATE_CYCLES, VALIDATE_T0, cfg.schedule_cycle_days,
                                 cfg.schedule_dark_days, VALIDATE_BASELINE_DAYS)
    save_json(os.path.join(out_dir, "schedule.json"), schedule_to_json(schedule))

    specs = generate_population(n_scanners, seed, schedule, telescope)
    packets, truth = simulate(specs, schedule, seed, cfg.reaction_delay_secs)
    trace_path = os.path.join(out_dir, "trace.ndjson")
    with open(trace_path, "w", encoding="utf-8") as f:
        write_ndjson(packets, f)
    write_ground_truth(os.path.join(out_dir, "ground_truth.csv"), truth)

    sessions = sessionize(packets, SessionizerConfig(cfg.sessions.timeout_secs, Level.NET64), threads)
    with open(os.path.join(out_dir, "sessions.ndjson"), "w", encoding="utf-8") as f:
        write_sessions(sessions, f)

    profiles, features = build_profiles(sessions, cfg, schedule, threads=threads)
    write_profiles(os.path.join(out_dir, "profiles.csv"), profiles)

    card = score(truth, profiles, telescope, seed, cfg.config_hash())
    save_json(os.path.join(out_dir, "scorecard.json"), card.as_dict())

    sessions128 = sessionize(packets, SessionizerConfig(cfg.sessions.timeout_secs, Level.ADDR128), threads)
    tables = build_bundle(sessions, profiles, schedule, features, None, cfg.report, cfg.netsel, cfg.address.service_ports)
    tables += fingerprint_tables(sessions128, cfg)
    write_bundle(tables, os.path.join(out_dir, "report"), cfg.as_dict(), cfg.config_hash(), [trace_path])

    acc = card.accuracy()
    log.info(f"Validate: temporal={acc['temporal']:.3f} netsel={acc['netsel']:.3f} addrsel={acc['addrsel']:.3f}")
    failed = card.failed_axes()
    if failed:
        raise AcceptanceError(f"accuracy below threshold on {', '.join(failed)}")
    return card
