"""
Temporal scanner classification: one-off, periodic or intermittent.

Session start times are binned into a binary activity series over the
observation window; the period is read off the autocorrelation function.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import correlate

from artifacts import US
from sessionizer import ScanSession

log = logging.getLogger("temporal")


class TemporalKind(str, Enum):
    ONE_OFF = "one_off"
    PERIODIC = "periodic"
    INTERMITTENT = "intermittent"


@dataclass(frozen=True)
class TemporalLabel:
    kind: TemporalKind
    period_secs: Optional[int] = None
    acf_peak: Optional[float] = None

    def __post_init__(self):
        if (self.period_secs is not None) != (self.kind is TemporalKind.PERIODIC):
            raise ValueError("period is set exactly for periodic labels")


@dataclass(frozen=True)
class TemporalConfig:
    bin_secs: int = 3600
    min_sessions_periodic: int = 3
    acf_threshold: float = 0.5
    lag_tolerance_bins: int = 1
    lag_tolerance_frac: float = 0.05
    min_gap_support: float = 0.6

    def __post_init__(self):
        if self.bin_secs <= 0:
            raise ValueError(f"bin width must be positive, got {self.bin_secs}")
        if not 0.0 < self.min_gap_support <= 1.0:
            raise ValueError(f"gap support must be in (0, 1], got {self.min_gap_support}")
        if self.min_sessions_periodic < 3:
            raise ValueError("a periodic scanner needs at least 3 sessions")


def activity_series(starts: Sequence[int], window: Tuple[int, int], bin_us: int) -> np.ndarray:
    lo, hi = window
    n_bins = max(1, -(-(hi - lo) // bin_us))
    series = np.zeros(n_bins, dtype=np.float64)
    for ts in starts:
        if ts < lo or ts > hi:
            raise ValueError(f"session start {ts} outside window {window}")
        series[min((ts - lo) // bin_us, n_bins - 1)] = 1.0
    return series


def autocorrelation(series: np.ndarray) -> np.ndarray:
    """Normalized, mean-subtracted ACF for lags 0..len-1 (acf[0] == 1)."""
    d = series - series.mean()
    denom = float(np.dot(d, d))
    if denom == 0.0:
        return np.zeros(series.size)
    full = correlate(d, d, mode="full", method="fft")
    return full[series.size - 1:] / denom


def tolerance(lag: int, cfg: TemporalConfig) -> int:
    return max(cfg.lag_tolerance_bins, int(math.floor(cfg.lag_tolerance_frac * lag)))


def detect_period(acf: np.ndarray, cfg: TemporalConfig) -> Optional[Tuple[int, float]]:
    """First run of lags whose tolerance-window score clears the threshold.

    Returns (lag, acf at lag) for the strongest lag inside that run.
    """
    max_lag = (acf.size) // 2
    run: List[int] = []
    for k in range(1, max_lag + 1):
        w = tolerance(k, cfg)
        score = float(acf[max(1, k - w): min(acf.size, k + w + 1)].sum())
        if score >= cfg.acf_threshold:
            run.append(k)
        elif run:
            break
    if not run:
        return None
    best = max(run, key=lambda k: (acf[k], -k))
    return best, float(acf[best])


def period_support(starts: Sequence[int], period_us: int, cfg: TemporalConfig) -> Tuple[int, int]:
    """(gaps landing on a multiple of the period, all gaps) between consecutive starts.

    A gap of m periods matches within max(bin, 2 * lag_tolerance_frac * m * period),
    capped at a quarter period. Missed visits show up as m > 1.
    """
    gaps = np.diff(np.asarray(sorted(starts), dtype=np.int64)).astype(np.float64)
    if gaps.size == 0 or period_us <= 0:
        return 0, int(gaps.size)
    m = np.rint(gaps / period_us)
    tol = np.minimum(np.maximum(cfg.bin_secs * US, 2 * cfg.lag_tolerance_frac * m * period_us), period_us / 4)
    hits = (m >= 1) & (np.abs(gaps - m * period_us) <= tol)
    return int(hits.sum()), int(gaps.size)


def classify_temporal(
    sessions: Sequence[ScanSession],
    cfg: Optional[TemporalConfig] = None,
    window: Optional[Tuple[int, int]] = None,
) -> TemporalLabel:
    cfg = cfg or TemporalConfig()
    if not sessions:
        raise ValueError("cannot classify a source without sessions")
    if len(sessions) == 1:
        return TemporalLabel(TemporalKind.ONE_OFF)

    starts = sorted(s.start_ts for s in sessions)
    bin_us = cfg.bin_secs * US
    if window is None:
        window = (starts[0], starts[-1] + bin_us)

    series = activity_series(starts, window, bin_us)
    if series.size >= 2 and series.min() == 1.0:
        # active in every bin
        if len(sessions) >= cfg.min_sessions_periodic:
            return TemporalLabel(TemporalKind.PERIODIC, cfg.bin_secs, 1.0)
        return TemporalLabel(TemporalKind.INTERMITTENT)

    found = detect_period(autocorrelation(series), cfg)
    if found is None or len(sessions) < cfg.min_sessions_periodic:
        return TemporalLabel(TemporalKind.INTERMITTENT)
    lag, peak = found
    hits, n_gaps = period_support(starts, lag * bin_us, cfg)
    if hits >= cfg.min_sessions_periodic - 1 and hits >= cfg.min_gap_support * n_gaps:
        return TemporalLabel(TemporalKind.PERIODIC, lag * cfg.bin_secs, peak)
    log.debug(f"{sessions[0].source}: lag {lag} backed by {hits}/{n_gaps} gaps only")
    return TemporalLabel(TemporalKind.INTERMITTENT)
