import pytest

from addr6 import Level, SourceKey, parse_address, parse_prefix
from artifacts import US
from bgp_schedule import generate_schedule
from config import load_config
from pipeline import THRESHOLDS, build_profiles, score
from report import ScannerProfile
from sessionizer import SessionizerConfig, sessionize
from simulator import ScannerSpec, TemporalSpec, simulate

T0 = 1_704_067_200 * US
SCHEDULE = generate_schedule(parse_prefix("2001:db8::/32"), 3, T0, baseline_days=7)

TRUTH = [
    ["a", "3fff:0:0:1::10", "3fff:0:0:1::/64", "periodic", 86_400, "size_independent", "structured", ""],
    ["b", "3fff:0:0:2::10", "3fff:0:0:2::/64", "one_off", None, "single_prefix", "random", ""],
]


def _profile(src, temporal, period, netsel, addrsel):
    return ScannerProfile(SourceKey.parse(src), "T1", 1, 1, temporal, period, netsel, addrsel)


@pytest.fixture
def cfg(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return load_config()


def test_score_counts_axes():
    profiles = [
        _profile("3fff:0:0:1::/64", "periodic", 90_000, "size_independent", "structured"),
        _profile("3fff:0:0:2::/64", "one_off", None, "inconsistent", "random"),
    ]
    card = score(TRUTH, profiles, "T1", 7, "abcd")
    assert card.accuracy() == {"temporal": 1.0, "netsel": 0.5, "addrsel": 1.0}
    assert card.failed_axes() == ["netsel"]
    assert card.misclassified == [
        {"scanner_id": "b", "axis": "netsel", "expected": "single_prefix", "got": "inconsistent"},
    ]
    doc = card.as_dict()
    assert doc["passed"] is False
    assert doc["max_period_error"] == pytest.approx(3600 / 86_400, abs=1e-6)
    assert doc["thresholds"] == THRESHOLDS


def test_score_missing_scanner_misses_every_axis():
    card = score(TRUTH[:1], [], "T1", 7, "abcd")
    assert card.accuracy() == {"temporal": 0.0, "netsel": 0.0, "addrsel": 0.0}
    assert [m["got"] for m in card.misclassified] == ["", "", ""]


def test_score_empty_truth_passes():
    assert score([], [], "T1", 0, "abcd").failed_axes() == []


def test_build_profiles_recovers_planted_scanner(cfg):
    spec = ScannerSpec(id="a", home=parse_address("3fff:0:0:1::10"), temporal=TemporalSpec("periodic", period_secs=86_400),
                       netsel="size_independent", addrsel="low_byte_iteration", rate=16)
    packets, truth = simulate([spec], SCHEDULE, 3)
    sessions = sessionize(packets, SessionizerConfig(3600, Level.NET64))
    profiles, features = build_profiles(sessions, cfg, SCHEDULE)
    (p,) = profiles
    assert p.source == SourceKey.parse("3fff:0:0:1::/64")
    assert p.sessions == len(sessions)
    assert features
    assert score(truth, profiles, "T1", 3, cfg.config_hash()).failed_axes() == []


def test_build_profiles_threads_agree(cfg):
    spec = ScannerSpec(id="a", home=parse_address("3fff:0:0:1::10"), temporal=TemporalSpec("one_off"))
    other = ScannerSpec(id="b", home=parse_address("3fff:0:0:2::10"), temporal=TemporalSpec("one_off"))
    packets, _ = simulate([spec, other], SCHEDULE, 1)
    sessions = sessionize(packets, SessionizerConfig(3600, Level.NET64))
    assert build_profiles(sessions, cfg, SCHEDULE, threads=1) == build_profiles(sessions, cfg, SCHEDULE, threads=4)


def test_build_profiles_empty(cfg):
    assert build_profiles([], cfg) == ([], [])
