"""
Randomness tests over target-address bit sections.

Four tests of the NIST SP 800-22 battery that work on short inputs:
- frequency (monobit)
- runs
- discrete Fourier transform (spectral)
- cumulative sums, forward (cusum0) and backward (cusum1)

A session's address selection counts as random for a section when the
frequency test passes; the others are reported alongside.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import erfc
from scipy.stats import norm

from addr6 import Prefix6, contains
from errors import DataError, NotEnoughBits
from sessionizer import ScanSession

log = logging.getLogger("nist")

TESTS = ("frequency", "runs", "fft", "cusum0", "cusum1")
DEFAULT_MIN_BITS = 100

BitsLike = Union[str, Sequence[int], np.ndarray]


class Section(str, Enum):
    SUBNET32 = "subnet32"
    IID64 = "iid64"

    @property
    def bit_range(self) -> Tuple[int, int]:
        return (32, 64) if self is Section.SUBNET32 else (64, 128)


@dataclass(frozen=True)
class RandomnessConfig:
    alpha: float = 0.01
    min_packets: int = 100
    min_bits: int = DEFAULT_MIN_BITS

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")


@dataclass(frozen=True)
class TestResult:
    test: str
    p_value: float
    passed: bool
    n_bits: int
    prerequisite_failed: bool = False


def _result(test: str, p: float, n: int, alpha: float, prerequisite_failed: bool = False) -> TestResult:
    p = float(min(1.0, max(0.0, p)))
    return TestResult(test, p, p >= alpha, n, prerequisite_failed)


def as_bits(bits: BitsLike) -> np.ndarray:
    if isinstance(bits, str):
        arr = np.frombuffer(bits.strip().encode("ascii"), dtype=np.uint8) - ord("0")
    else:
        arr = np.asarray(bits, dtype=np.uint8)
    if arr.ndim != 1 or np.any(arr > 1):
        raise ValueError("bit string must be a flat sequence of 0/1")
    return arr


def _prepare(bits: BitsLike, min_bits: int) -> np.ndarray:
    arr = as_bits(bits)
    if arr.size < min_bits:
        raise NotEnoughBits(f"need at least {min_bits} bits, got {arr.size}")
    return arr


# ---------- bit extraction ----------
def section_bits(targets: Iterable, section: Section) -> np.ndarray:
    lo, hi = section.bit_range
    width = hi - lo
    value_mask = (1 << width) - 1
    buf = b"".join(((int(t) >> (128 - hi)) & value_mask).to_bytes(width // 8, "big") for t in targets)
    return np.unpackbits(np.frombuffer(buf, dtype=np.uint8))


def extract_bits(session: ScanSession, section: Section, telescope_prefix: Prefix6) -> np.ndarray:
    """Concatenate one section of every target, in arrival order, MSB first."""
    for t in session.targets:
        if not contains(telescope_prefix, t):
            raise DataError(f"target {t} of session {session.session_id} is outside {telescope_prefix}")
    return section_bits(session.targets, section)


# ---------- tests ----------
def frequency_test(bits: BitsLike, alpha: float = 0.01, min_bits: int = DEFAULT_MIN_BITS) -> TestResult:
    x = _prepare(bits, min_bits)
    n = x.size
    s = int(2 * int(x.sum()) - n)
    s_obs = abs(s) / np.sqrt(n)
    return _result("frequency", erfc(s_obs / np.sqrt(2.0)), n, alpha)


def runs_test(bits: BitsLike, alpha: float = 0.01, min_bits: int = DEFAULT_MIN_BITS) -> TestResult:
    x = _prepare(bits, min_bits)
    n = x.size
    pi = float(x.mean())
    if abs(pi - 0.5) >= 2.0 / np.sqrt(n):
        return _result("runs", 0.0, n, alpha, prerequisite_failed=True)
    v_obs = 1 + int(np.count_nonzero(x[1:] != x[:-1]))
    num = abs(v_obs - 2.0 * n * pi * (1.0 - pi))
    den = 2.0 * np.sqrt(2.0 * n) * pi * (1.0 - pi)
    return _result("runs", erfc(num / den), n, alpha)


def fft_test(bits: BitsLike, alpha: float = 0.01, min_bits: int = DEFAULT_MIN_BITS) -> TestResult:
    x = _prepare(bits, min_bits)
    n = x.size
    spectrum = np.abs(np.fft.fft(2.0 * x - 1.0)[: n // 2])
    threshold = np.sqrt(np.log(1.0 / 0.05) * n)
    n0 = 0.95 * n / 2.0
    n1 = float(np.count_nonzero(spectrum < threshold))
    d = (n1 - n0) / np.sqrt(n * 0.95 * 0.05 / 4.0)
    return _result("fft", erfc(abs(d) / np.sqrt(2.0)), n, alpha)


def cusum_test(
    bits: BitsLike,
    direction: str = "forward",
    alpha: float = 0.01,
    min_bits: int = DEFAULT_MIN_BITS,
) -> TestResult:
    if direction not in ("forward", "backward"):
        raise ValueError(f"unknown cusum direction {direction!r}")
    x = _prepare(bits, min_bits)
    n = x.size
    steps = 2 * x.astype(np.int64) - 1
    if direction == "backward":
        steps = steps[::-1]
    z = int(np.max(np.abs(np.cumsum(steps))))
    sq = np.sqrt(n)

    k1 = np.arange(np.floor((-n / z + 1) / 4), np.floor((n / z - 1) / 4) + 1)
    k2 = np.arange(np.floor((-n / z - 3) / 4), np.floor((n / z - 1) / 4) + 1)
    sum1 = np.sum(norm.cdf((4 * k1 + 1) * z / sq) - norm.cdf((4 * k1 - 1) * z / sq))
    sum2 = np.sum(norm.cdf((4 * k2 + 3) * z / sq) - norm.cdf((4 * k2 + 1) * z / sq))
    name = "cusum0" if direction == "forward" else "cusum1"
    return _result(name, 1.0 - sum1 + sum2, n, alpha)


def run_tests(bits: BitsLike, alpha: float = 0.01, min_bits: int = DEFAULT_MIN_BITS) -> Dict[str, TestResult]:
    x = _prepare(bits, min_bits)
    return {
        "frequency": frequency_test(x, alpha, min_bits),
        "runs": runs_test(x, alpha, min_bits),
        "fft": fft_test(x, alpha, min_bits),
        "cusum0": cusum_test(x, "forward", alpha, min_bits),
        "cusum1": cusum_test(x, "backward", alpha, min_bits),
    }


# ---------- per session ----------
@dataclass
class SessionRandomness:
    session_id: str
    applicable: bool
    results: Dict[Section, Dict[str, TestResult]] = field(default_factory=dict)
    verdicts: Dict[Section, bool] = field(default_factory=dict)

    def is_random(self, section: Section = Section.IID64) -> Optional[bool]:
        if not self.applicable:
            return None
        return self.verdicts.get(section)


def session_randomness(
    session: ScanSession,
    telescope_prefix: Prefix6,
    cfg: Optional[RandomnessConfig] = None,
) -> SessionRandomness:
    cfg = cfg or RandomnessConfig()
    if len(session.targets) < cfg.min_packets:
        return SessionRandomness(session.session_id, applicable=False)

    out = SessionRandomness(session.session_id, applicable=True)
    for section in Section:
        bits = extract_bits(session, section, telescope_prefix)
        results = run_tests(bits, cfg.alpha, cfg.min_bits)
        out.results[section] = results
        out.verdicts[section] = results["frequency"].passed
    return out


def result_rows(source: str, sr: SessionRandomness) -> List[List]:
    rows = []
    for section in Section:
        for name in TESTS:
            r = sr.results.get(section, {}).get(name)
            if r is not None:
                rows.append([source, sr.session_id, section.value, name, r.n_bits, r.p_value, r.passed])
    return rows
