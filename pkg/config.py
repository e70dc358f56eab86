import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Tuple

from dotenv import dotenv_values

from addr6 import Level, Prefix6, PrefixTable, parse_prefix
from address_types import AddressConfig
from clustering import ClusteringParams
from errors import ConfigError
from fingerprint import FingerprintConfig
from ingest import DEFAULT_PAYLOAD_CAP
from netsel import NetselConfig
from randomness import RandomnessConfig
from report import ReportConfig
from sessionizer import SessionizerConfig
from temporal import TemporalConfig

ENV_PREFIX = "V6T_"
DEFAULT_CONFIG_FILE = "v6telescope.env"

_values: Dict[str, Optional[str]] = {}


def _get(name: str, default: str = "") -> str:
    v = os.getenv(ENV_PREFIX + name)
    if v is None:
        v = _values.get(name)
    if v is None:
        v = default
    return str(v).strip()

def _get_bool(name: str, default: str = "false") -> bool:
    return _get(name, default).lower() in ("1","true","yes","y","on")

def _get_int(name: str, default: str) -> int:
    v = _get(name, default)
    try:
        return int(v)
    except ValueError:
        raise ConfigError(f"{name} must be an integer, got {v!r}")

def _get_float(name: str, default: str) -> float:
    v = _get(name, default)
    try:
        return float(v)
    except ValueError:
        raise ConfigError(f"{name} must be a number, got {v!r}")

def _get_list(name: str, default: str = "") -> List[str]:
    return [s.strip() for s in _get(name, default).split(",") if s.strip()]


@dataclass(frozen=True)
class RunConfig:
    sessions: SessionizerConfig
    temporal: TemporalConfig
    address: AddressConfig
    netsel: NetselConfig
    randomness: RandomnessConfig
    fingerprint: FingerprintConfig
    report: ReportConfig
    payload_cap: int = DEFAULT_PAYLOAD_CAP
    exclude: Tuple[Prefix6, ...] = ()
    telescopes: Dict[str, Prefix6] = field(default_factory=dict)
    asn_map: str = ""
    geo_map: str = ""
    nettype_map: str = ""
    rdns_map: str = ""
    signatures: str = "signatures.txt"
    schedule_cycle_days: int = 14
    schedule_dark_days: int = 1
    schedule_baseline_days: int = 84
    reaction_delay_secs: int = 1800
    log_level: str = "INFO"

    def as_dict(self) -> Dict[str, Any]:
        doc = asdict(self)
        doc["exclude"] = [str(p) for p in self.exclude]
        doc["telescopes"] = {k: str(v) for k, v in sorted(self.telescopes.items())}
        doc["sessions"]["level"] = self.sessions.level.value
        doc["address"]["service_ports"] = sorted(self.address.service_ports)
        return doc

    def config_hash(self) -> str:
        canonical = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

    def telescope_prefix(self, telescope: str) -> Prefix6:
        if telescope not in self.telescopes:
            raise ConfigError(f"telescope {telescope!r} has no prefix in TELESCOPES")
        return self.telescopes[telescope]

    def telescope_table(self) -> PrefixTable:
        return PrefixTable((p, name) for name, p in self.telescopes.items())


def _prefixes(name: str, default: str = "") -> Tuple[Prefix6, ...]:
    try:
        return tuple(parse_prefix(p) for p in _get_list(name, default))
    except ValueError as e:
        raise ConfigError(f"{name}: {e}")


def _telescopes(default: str) -> Dict[str, Prefix6]:
    out = {}
    for item in _get_list("TELESCOPES", default):
        name, sep, prefix = item.partition("=")
        if not sep:
            raise ConfigError(f"TELESCOPES entry {item!r} is not NAME=PREFIX")
        try:
            out[name.strip()] = parse_prefix(prefix)
        except ValueError as e:
            raise ConfigError(f"TELESCOPES {name}: {e}")
    return out


def load_config(path: Optional[str] = None, overrides: Optional[Mapping[str, str]] = None) -> RunConfig:
    """Environment (V6T_*) wins over the config file, which wins over defaults."""
    global _values
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        _values = dict(dotenv_values(path))
    elif os.path.exists(DEFAULT_CONFIG_FILE):
        _values = dict(dotenv_values(DEFAULT_CONFIG_FILE))
    else:
        _values = {}
    _values.update(overrides or {})

    try:
        # =============================================================================
        # SESSIONS
        # =============================================================================
        sessions = SessionizerConfig(
            timeout_secs=_get_int("SESSION_TIMEOUT_SECS", "3600"),  # one hour
            level=Level.parse(_get("SESSION_LEVEL", "addr128")),
        )

        # =============================================================================
        # CLASSIFICATION
        # =============================================================================
        temporal = TemporalConfig(
            bin_secs=_get_int("TEMPORAL_BIN_SECS", "3600"),
            min_sessions_periodic=_get_int("TEMPORAL_MIN_SESSIONS", "3"),
            acf_threshold=_get_float("TEMPORAL_ACF_THRESHOLD", "0.5"),
            lag_tolerance_bins=_get_int("TEMPORAL_LAG_TOLERANCE_BINS", "1"),
            lag_tolerance_frac=_get_float("TEMPORAL_LAG_TOLERANCE_FRAC", "0.05"),
            min_gap_support=_get_float("TEMPORAL_MIN_GAP_SUPPORT", "0.6"),
        )
        address = AddressConfig(
            structured_threshold=_get_float("ADDRESS_STRUCTURED_SHARE", "0.8"),
            service_ports=frozenset(int(p) for p in _get_list(
                "ADDRESS_SERVICE_PORTS",
                "21,22,23,25,53,80,110,123,143,161,179,443,445,993,995,3306,3389,5060,8080,8443")),
            monotone_min_targets=_get_int("ADDRESS_MONOTONE_MIN_TARGETS", "10"),
        )
        netsel = NetselConfig(
            cv_max=_get_float("NETSEL_CV_MAX", "0.25"),
            rho_min=_get_float("NETSEL_RHO_MIN", "0.8"),
            clustering=ClusteringParams(
                eps=_get_float("NETSEL_EPS", "0.3"),
                min_pts=_get_int("NETSEL_MIN_PTS", "3"),
            ),
            schedule_telescope=_get("NETSEL_SCHEDULE_TELESCOPE", "T1"),
        )
        randomness = RandomnessConfig(
            alpha=_get_float("RANDOMNESS_ALPHA", "0.01"),
            min_packets=_get_int("RANDOMNESS_MIN_PACKETS", "100"),
            min_bits=_get_int("RANDOMNESS_MIN_BITS", "100"),
        )

        # =============================================================================
        # FINGERPRINTING
        # =============================================================================
        fingerprint = FingerprintConfig(
            eps=_get_float("FINGERPRINT_EPS", "0.1"),
            min_pts=_get_int("FINGERPRINT_MIN_PTS", "2"),
            random_threshold=_get_float("FINGERPRINT_RANDOM_THRESHOLD", "0.45"),
            rotation_min_sources=_get_int("FINGERPRINT_ROTATION_MIN_SOURCES", "2"),
            horizon=_get_int("FINGERPRINT_HORIZON", "64"),
        )

        # =============================================================================
        # REPORT
        # =============================================================================
        report = ReportConfig(
            heavy_hitter_share=_get_float("REPORT_HEAVY_HITTER_SHARE", "0.10"),  # strict >
            top_k=_get_int("REPORT_TOP_K", "5"),
            discovery_prefix_len=_get_int("REPORT_DISCOVERY_PREFIX_LEN", "48"),
            reactive_max_delay_secs=_get_int("REPORT_REACTIVE_MAX_DELAY_SECS", "3600"),
            reactive_min_cycles=_get_int("REPORT_REACTIVE_MIN_CYCLES", "2"),
        )

        return RunConfig(
            sessions=sessions,
            temporal=temporal,
            address=address,
            netsel=netsel,
            randomness=randomness,
            fingerprint=fingerprint,
            report=report,
            # =============================================================================
            # INGEST / TELESCOPES / ENRICHMENT
            # =============================================================================
            payload_cap=_get_int("INGEST_PAYLOAD_CAP", str(DEFAULT_PAYLOAD_CAP)),
            exclude=_prefixes("INGEST_EXCLUDE"),  # e.g. our own measurement hosts
            telescopes=_telescopes("T1=2001:db8::/32"),
            asn_map=_get("ENRICH_ASN_MAP"),
            geo_map=_get("ENRICH_GEO_MAP"),
            nettype_map=_get("ENRICH_NETTYPE_MAP"),
            rdns_map=_get("ENRICH_RDNS_MAP"),
            signatures=_get("FINGERPRINT_SIGNATURES", "signatures.txt"),
            # =============================================================================
            # SCHEDULE / SIMULATOR
            # =============================================================================
            schedule_cycle_days=_get_int("SIM_CYCLE_DAYS", "14"),
            schedule_dark_days=_get_int("SIM_DARK_DAYS", "1"),
            schedule_baseline_days=_get_int("SIM_BASELINE_DAYS", "84"),
            reaction_delay_secs=_get_int("SIM_REACTION_DELAY_SECS", "1800"),  # 30 min
            log_level=_get("LOG_LEVEL", "INFO").upper(),
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e
