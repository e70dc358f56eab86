"""
Payload fingerprinting.

- one point per session: its first non-empty payload
- DBSCAN over the first 64 bytes with byte-wise Hamming distance
  (missing bytes count as mismatches)
- clusters labeled from the signature DB (file order), then RDNS of the
  member sources, then payload/source characteristics

Signature file, one entry per line:
    tool<TAB>kind<TAB>pattern[<TAB>offset]
kinds: substring (hex), regex (over raw bytes), bytes_at_offset (hex), rdns
(domain suffix). Lines starting with # are comments.
"""

import logging
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from addr6 import Address6, Level, SourceKey, truncate
from clustering import ClusteringParams, DBSCAN
from errors import DataError
from sessionizer import ScanSession

log = logging.getLogger("fingerprint")

UNLABELED = "unlabeled"
SIG_KINDS = ("substring", "regex", "bytes_at_offset", "rdns")
SUBTAGS = ("random_bytes", "address_rotation", "other")


@dataclass(frozen=True)
class FingerprintConfig:
    eps: float = 0.1
    min_pts: int = 2
    random_threshold: float = 0.45
    rotation_min_sources: int = 2
    horizon: int = 64
    max_payloads: int = 16

    @property
    def clustering(self) -> ClusteringParams:
        return ClusteringParams(self.eps, self.min_pts)


# ---------- signatures ----------
@dataclass(frozen=True)
class Signature:
    tool: str
    kind: str
    pattern: str
    offset: Optional[int] = None
    _compiled: Optional[re.Pattern] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in SIG_KINDS:
            raise ValueError(f"unknown signature kind {self.kind!r}")
        if self.kind == "bytes_at_offset" and self.offset is None:
            raise ValueError("bytes_at_offset requires an offset")
        if self.kind in ("substring", "bytes_at_offset"):
            if self.pattern != self.pattern.lower():
                raise ValueError(f"hex pattern must be lowercase: {self.pattern}")
            bytes.fromhex(self.pattern)
        if self.kind == "regex":
            object.__setattr__(self, "_compiled", re.compile(self.pattern.encode("latin-1"), re.DOTALL))

    def matches(self, payload: bytes) -> bool:
        if self.kind == "substring":
            return bytes.fromhex(self.pattern) in payload
        if self.kind == "regex":
            return self._compiled.search(payload) is not None
        if self.kind == "bytes_at_offset":
            pat = bytes.fromhex(self.pattern)
            return payload[self.offset:self.offset + len(pat)] == pat
        return False

    def matches_name(self, name: str) -> bool:
        suffix = self.pattern.lower().strip(".")
        name = name.lower().rstrip(".")
        return self.kind == "rdns" and (name == suffix or name.endswith("." + suffix))


def parse_signatures(lines: Sequence[str], origin: str = "<signatures>") -> List[Signature]:
    sigs: List[Signature] = []
    for line_no, raw in enumerate(lines, 1):
        line = raw.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) not in (3, 4):
            raise DataError(f"{origin}:{line_no}: expected 3 or 4 tab-separated fields")
        try:
            offset = int(parts[3]) if len(parts) == 4 and parts[3].strip() else None
            sigs.append(Signature(parts[0].strip(), parts[1].strip(), parts[2].strip(), offset))
        except (ValueError, re.error) as e:
            raise DataError(f"{origin}:{line_no}: {e}") from e
    return sigs


def load_signatures(path: str) -> List[Signature]:
    with open(path, "r", encoding="utf-8") as f:
        sigs = parse_signatures(f.readlines(), path)
    log.info(f"Loaded {len(sigs)} signatures from {path}")
    return sigs


# ---------- distance ----------
def payload_matrix(payloads: Sequence[bytes], horizon: int = 64) -> np.ndarray:
    """First `horizon` bytes per payload, padded with -1.

    The pad never equals a real byte, so each missing byte costs exactly 1,
    as with zero-padding plus a length penalty of 1 per missing byte.
    """
    m = np.full((len(payloads), horizon), -1, dtype=np.int16)
    for i, p in enumerate(payloads):
        head = np.frombuffer(p[:horizon], dtype=np.uint8)
        m[i, :head.size] = head
    return m


def hamming(block: np.ndarray, points: np.ndarray) -> np.ndarray:
    return (block[:, np.newaxis, :] != points[np.newaxis, :, :]).mean(axis=2)


def payload_distance(a: bytes, b: bytes, horizon: int = 64) -> float:
    m = payload_matrix([a, b], horizon)
    return float(hamming(m[:1], m[1:])[0, 0])


def mean_pairwise_distance(payloads: Sequence[bytes], horizon: int = 64) -> float:
    if len(payloads) < 2:
        return 0.0
    m = payload_matrix(payloads, horizon)
    d = hamming(m, m)
    n = len(payloads)
    return float(d.sum() / (n * (n - 1)))


# ---------- clusters ----------
@dataclass(frozen=True)
class PayloadCluster:
    id: int
    members: Tuple[Tuple[SourceKey, str], ...]
    representative: bytes
    payloads: Tuple[bytes, ...] = field(default=(), repr=False)
    noise: bool = False
    label: str = UNLABELED
    subtag: Optional[str] = None

    @property
    def sources(self) -> List[SourceKey]:
        return sorted({src for src, _ in self.members}, key=lambda k: k.sort_key())

    @property
    def is_tool(self) -> bool:
        return self.label != UNLABELED and not self.label.startswith("rdns:")


def _representative(m: np.ndarray, payloads: Sequence[bytes]) -> bytes:
    if len(payloads) == 1:
        return payloads[0]
    return payloads[int(np.argmin(hamming(m, m).sum(axis=1)))]


def cluster_payloads(
    sessions: Sequence[ScanSession],
    params: Optional[ClusteringParams] = None,
    cfg: Optional[FingerprintConfig] = None,
) -> List[PayloadCluster]:
    """Cluster sessions by first payload; noise points become singleton clusters."""
    cfg = cfg or FingerprintConfig()
    params = params or cfg.clustering
    points = [(s, s.payloads(cfg.max_payloads)) for s in sessions]
    points = [(s, ps) for s, ps in points if ps]
    if not points:
        return []

    firsts = [ps[0] for _, ps in points]
    m = payload_matrix(firsts, cfg.horizon)
    labels = DBSCAN(params, metric=hamming).fit(m).labels

    groups: Dict[int, List[int]] = {}
    noise: List[int] = []
    for i, lbl in enumerate(labels):
        if lbl < 0:
            noise.append(i)
        else:
            groups.setdefault(int(lbl), []).append(i)

    ordered = [(cid, idx, False) for cid, idx in sorted(groups.items())]
    ordered += [(len(groups) + n, [i], True) for n, i in enumerate(noise)]

    clusters = []
    for cid, idx, is_noise in ordered:
        members = tuple((points[i][0].source, points[i][0].session_id) for i in idx)
        payloads = tuple(p for i in idx for p in points[i][1])
        clusters.append(PayloadCluster(
            id=cid,
            members=members,
            representative=_representative(m[idx], [firsts[i] for i in idx]),
            payloads=payloads,
            noise=is_noise,
        ))
    log.info(f"Payload clustering: {len(points)} sessions -> {len(groups)} clusters + {len(noise)} singletons")
    return clusters


def registered_domain(name: str) -> str:
    labels = [x for x in name.lower().rstrip(".").split(".") if x]
    return ".".join(labels[-2:])


def _rdns_names(c: PayloadCluster, rdns: Dict[Address6, str]) -> List[str]:
    names = []
    for src in c.sources:
        if src.level is Level.ADDR128 and src.value in rdns:
            names.append(rdns[src.value])
    return names


def _is_rotation(c: PayloadCluster, min_sources: int) -> bool:
    addrs = {src.value for src in c.sources if src.level is Level.ADDR128}
    if len(addrs) < min_sources:
        return False
    return len({truncate(a, 64) for a in addrs}) == 1


def label_cluster(
    c: PayloadCluster,
    signatures: Sequence[Signature],
    rdns: Optional[Dict[Address6, str]] = None,
    cfg: Optional[FingerprintConfig] = None,
) -> PayloadCluster:
    cfg = cfg or FingerprintConfig()
    rdns = rdns or {}

    for sig in signatures:
        if sig.kind != "rdns" and sig.matches(c.representative):
            return replace(c, label=sig.tool, subtag=None)

    names = _rdns_names(c, rdns)
    if names:
        for sig in signatures:
            if sig.kind == "rdns" and any(sig.matches_name(n) for n in names):
                return replace(c, label=sig.tool, subtag=None)
        counts = Counter(registered_domain(n) for n in names)
        domain = min(counts, key=lambda d: (-counts[d], d))
        return replace(c, label=f"rdns:{domain}", subtag=None)

    if mean_pairwise_distance(c.payloads, cfg.horizon) >= cfg.random_threshold:
        subtag = "random_bytes"
    elif _is_rotation(c, cfg.rotation_min_sources):
        subtag = "address_rotation"
    else:
        subtag = "other"
    return replace(c, label=UNLABELED, subtag=subtag)


def tool_report(clusters: Sequence[PayloadCluster]) -> List[List]:
    """Rows of (tool, scanners, scanner share, sessions, session share)."""
    all_sources = {src for c in clusters for src in c.sources}
    all_sessions = {m for c in clusters for m in c.members}
    tools: Dict[str, Tuple[set, set]] = {}
    for c in clusters:
        if not c.is_tool:
            continue
        srcs, sess = tools.setdefault(c.label, (set(), set()))
        srcs.update(c.sources)
        sess.update(c.members)
    rows = []
    for tool in sorted(tools, key=lambda t: (-len(tools[t][0]), t)):
        srcs, sess = tools[tool]
        rows.append([
            tool,
            len(srcs), len(srcs) / len(all_sources),
            len(sess), len(sess) / len(all_sessions),
        ])
    return rows


def cluster_rows(clusters: Sequence[PayloadCluster]) -> List[List]:
    return [
        [c.id, c.label, c.subtag or "", c.noise, len(c.members), len(c.sources), c.representative[:64].hex()]
        for c in clusters
    ]
