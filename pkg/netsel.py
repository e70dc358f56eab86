"""
Network-selection classification against a prefix-splitting telescope.

Per announcement cycle each source gets a vector of session counts over the
cycle's announced prefixes. A rule-based classifier labels every cycle; the
per-cycle labels are folded into one label per source. DBSCAN over the
normalized vectors gives archetype clusters as a cross-check.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import spearmanr

from addr6 import Prefix6, SourceKey
from bgp_schedule import AnnouncementSchedule, cycle_at, most_specific_announced
from clustering import ClusteringParams, dbscan
from sessionizer import ScanSession

log = logging.getLogger("netsel")


class NetSelLabel(str, Enum):
    SINGLE_PREFIX = "single_prefix"
    SIZE_INDEPENDENT = "size_independent"
    SIZE_DEPENDENT = "size_dependent"
    INCONSISTENT = "inconsistent"
    UNDETERMINED = "undetermined"  # per-cycle only


@dataclass(frozen=True)
class NetselConfig:
    cv_max: float = 0.25
    rho_min: float = 0.8
    clustering: ClusteringParams = field(default_factory=lambda: ClusteringParams(eps=0.3, min_pts=3))
    schedule_telescope: str = "T1"


@dataclass
class CycleFeature:
    source: SourceKey
    cycle: int
    counts: Dict[Prefix6, int]

    @property
    def prefixes(self) -> List[Prefix6]:
        return sorted(self.counts, key=lambda p: int(p.network_address))

    def vector(self) -> np.ndarray:
        return np.array([self.counts[p] for p in self.prefixes], dtype=np.float64)

    @property
    def normalized(self) -> np.ndarray:
        v = self.vector()
        total = v.sum()
        return v / total if total else v

    @property
    def sessions(self) -> int:
        return int(sum(self.counts.values()))


def build_cycle_features(
    sessions: Iterable[ScanSession],
    schedule: AnnouncementSchedule,
) -> List[CycleFeature]:
    """One feature per (source, split cycle) with at least one hit prefix.

    A session adds 1 to every announced prefix one of its targets falls in.
    Sessions starting in the baseline, on a dark day or outside the schedule
    are ignored.
    """
    counts: Dict[Tuple[SourceKey, int], Dict[Prefix6, int]] = {}
    for s in sessions:
        pos = cycle_at(schedule, s.start_ts)
        if pos is None or pos.index == 0 or pos.dark:
            continue
        hit = {most_specific_announced(schedule, pos.index, t) for t in s.targets}
        hit.discard(None)
        if not hit:
            continue
        key = (s.source, pos.index)
        if key not in counts:
            counts[key] = {p: 0 for p in pos.announced}
        for p in hit:
            counts[key][p] += 1

    keys = sorted(counts, key=lambda k: (k[0].sort_key(), k[1]))
    return [CycleFeature(src, cycle, counts[(src, cycle)]) for src, cycle in keys]


def coefficient_of_variation(v: np.ndarray) -> float:
    mean = float(v.mean()) if v.size else 0.0
    if mean == 0.0:
        return float("inf")
    return float(v.std()) / mean


def size_correlation(counts: Sequence[float], prefixes: Sequence[Prefix6]) -> float:
    # prefix size 2^(128-len) ranks exactly like -len
    rho = spearmanr(np.asarray(counts, dtype=np.float64), [-p.prefixlen for p in prefixes])[0]
    return float(rho) if np.isfinite(rho) else float("nan")


def classify_cycle(
    f: CycleFeature,
    announced: Optional[Sequence[Prefix6]] = None,
    cfg: Optional[NetselConfig] = None,
) -> NetSelLabel:
    cfg = cfg or NetselConfig()
    announced = sorted(announced or f.counts, key=lambda p: int(p.network_address))
    v = np.array([f.counts.get(p, 0) for p in announced], dtype=np.float64)
    hit = [p for p, n in zip(announced, v) if n > 0]

    if len(hit) == 0:
        return NetSelLabel.UNDETERMINED
    if len(hit) == 1:
        return NetSelLabel.SINGLE_PREFIX
    if len(hit) == len(announced) and coefficient_of_variation(v) <= cfg.cv_max:
        return NetSelLabel.SIZE_INDEPENDENT
    if len({p.prefixlen for p in hit}) >= 3:
        rho = size_correlation([f.counts[p] for p in hit], hit)
        if rho >= cfg.rho_min:
            return NetSelLabel.SIZE_DEPENDENT
    return NetSelLabel.UNDETERMINED


def fold_labels(labels: Iterable[NetSelLabel]) -> NetSelLabel:
    seen = {lbl for lbl in labels if lbl is not NetSelLabel.UNDETERMINED}
    if len(seen) == 1:
        return seen.pop()
    return NetSelLabel.INCONSISTENT


def classify_source(features: Sequence[CycleFeature], cfg: Optional[NetselConfig] = None) -> NetSelLabel:
    """Fold per-cycle labels.

    An even split over prefixes of one size is also what a size-dependent
    scanner produces, so those cycles do not contradict size_dependent
    evidence from other cycles.
    """
    if not features:
        raise ValueError("source has no cycle with activity")
    labels = [classify_cycle(f, cfg=cfg) for f in features]
    if NetSelLabel.SIZE_DEPENDENT in labels:
        labels = [
            NetSelLabel.UNDETERMINED
            if lbl is NetSelLabel.SIZE_INDEPENDENT and len({p.prefixlen for p in f.counts}) == 1 else lbl
            for f, lbl in zip(features, labels)
        ]
    return fold_labels(labels)


def classify_sources(
    sessions: Iterable[ScanSession],
    schedule: Optional[AnnouncementSchedule],
    cfg: Optional[NetselConfig] = None,
) -> Tuple[Dict[Tuple[SourceKey, str], NetSelLabel], List[CycleFeature]]:
    """Label every (source, telescope).

    Telescopes other than the scheduled one announce a single prefix, so
    every source there is single_prefix. Scheduled-telescope sources with no
    split-cycle activity are left out.
    """
    cfg = cfg or NetselConfig()
    by_telescope: Dict[str, List[ScanSession]] = defaultdict(list)
    for s in sessions:
        by_telescope[s.telescope].append(s)

    labels: Dict[Tuple[SourceKey, str], NetSelLabel] = {}
    features: List[CycleFeature] = []
    for telescope, group in sorted(by_telescope.items()):
        if schedule is None or telescope != cfg.schedule_telescope:
            for s in group:
                labels[(s.source, telescope)] = NetSelLabel.SINGLE_PREFIX
            continue
        feats = build_cycle_features(group, schedule)
        features.extend(feats)
        per_source: Dict[SourceKey, List[CycleFeature]] = defaultdict(list)
        for f in feats:
            per_source[f.source].append(f)
        for src, fs in per_source.items():
            labels[(src, telescope)] = classify_source(fs, cfg)
    log.info(f"Netsel: {len(labels)} sources labeled, {len(features)} cycle features")
    return labels, features


# ---------- archetype clustering ----------
def centroid_archetype(centroid: np.ndarray, prefixes: Sequence[Prefix6], cfg: NetselConfig) -> NetSelLabel:
    if centroid.size and centroid.max() >= 0.9:
        return NetSelLabel.SINGLE_PREFIX
    if coefficient_of_variation(centroid) <= cfg.cv_max:
        return NetSelLabel.SIZE_INDEPENDENT
    if len({p.prefixlen for p in prefixes}) >= 3 and size_correlation(centroid, prefixes) >= cfg.rho_min:
        return NetSelLabel.SIZE_DEPENDENT
    return NetSelLabel.UNDETERMINED


@dataclass(frozen=True)
class ArchetypeAssignment:
    source: SourceKey
    cycle: int
    cluster: Optional[int]
    archetype: Optional[NetSelLabel]


def cluster_archetypes(
    features: Sequence[CycleFeature],
    params: Optional[ClusteringParams] = None,
    cfg: Optional[NetselConfig] = None,
) -> List[ArchetypeAssignment]:
    """DBSCAN per cycle over normalized vectors; cluster ids are global."""
    cfg = cfg or NetselConfig()
    params = params or cfg.clustering
    by_cycle: Dict[int, List[int]] = defaultdict(list)
    for i, f in enumerate(features):
        by_cycle[f.cycle].append(i)

    out: List[Optional[ArchetypeAssignment]] = [None] * len(features)
    next_id = 0
    for cycle in sorted(by_cycle):
        idx = by_cycle[cycle]
        prefixes = features[idx[0]].prefixes
        X = np.vstack([features[i].normalized for i in idx])
        assigned = dbscan(X, params)
        archetypes: Dict[int, NetSelLabel] = {}
        for cid in sorted({c for c in assigned if c is not None}):
            members = [row for row, c in zip(X, assigned) if c == cid]
            archetypes[cid] = centroid_archetype(np.mean(members, axis=0), prefixes, cfg)
        for i, c in zip(idx, assigned):
            f = features[i]
            if c is None:
                out[i] = ArchetypeAssignment(f.source, f.cycle, None, None)
            else:
                out[i] = ArchetypeAssignment(f.source, f.cycle, next_id + c, archetypes[c])
        next_id += len(archetypes)
    return [a for a in out if a is not None]
