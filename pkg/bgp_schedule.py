"""
Announcement schedule for a telescope that splits its covering prefix.

Timeline (all bounds half-open, integer microseconds):
- baseline: the base prefix alone
- cycle k = 1..n: `dark_days` with nothing announced, then the announce window
  with k+1 disjoint prefixes whose union is the base

Each cycle withdraws one victim prefix and announces its two halves. The
victim is the base for cycle 1 and afterwards the upper half created by the
previous split, so every new lower half has a fresh low-byte address.
"""

import bisect
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

from addr6 import Address6, Prefix6, PrefixTable, parse_prefix, split
from artifacts import DAY_US
from errors import PrefixError, ScheduleError

log = logging.getLogger("schedule")

Window = Tuple[int, int]


@dataclass(frozen=True)
class AnnouncementCycle:
    index: int
    dark: Window
    window: Window
    announced: Tuple[Prefix6, ...]
    victim: Prefix6
    new_pair: Tuple[Prefix6, Prefix6]

    @property
    def start(self) -> int:
        return self.dark[0]

    @property
    def end(self) -> int:
        return self.window[1]


@dataclass(frozen=True)
class CyclePosition:
    index: int
    announced: Tuple[Prefix6, ...]
    dark: bool


@dataclass
class AnnouncementSchedule:
    base: Prefix6
    baseline: Window
    cycles: Tuple[AnnouncementCycle, ...]
    _tables: Dict[int, PrefixTable] = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        self._starts = [c.start for c in self.cycles]

    def cycle(self, index: int) -> AnnouncementCycle:
        if not 1 <= index <= len(self.cycles):
            raise ScheduleError(f"no cycle {index} (schedule has {len(self.cycles)})")
        return self.cycles[index - 1]

    def announced(self, index: int) -> Tuple[Prefix6, ...]:
        if index == 0:
            return (self.base,)
        return self.cycle(index).announced

    def table(self, index: int) -> PrefixTable:
        if index not in self._tables:
            self._tables[index] = PrefixTable((p, p) for p in self.announced(index))
        return self._tables[index]

    @property
    def cycle_secs(self) -> Optional[int]:
        if not self.cycles:
            return None
        c = self.cycles[0]
        return (c.end - c.start) // 1_000_000


def generate_schedule(
    base: Prefix6,
    n_cycles: int,
    t0: int,
    cycle_days: int = 14,
    dark_days: int = 1,
    baseline_days: int = 84,
) -> AnnouncementSchedule:
    if n_cycles < 0:
        raise ScheduleError(f"negative cycle count {n_cycles}")
    if base.prefixlen + n_cycles > 128:
        raise ScheduleError(f"cannot split {base} {n_cycles} times")
    if not 0 <= dark_days < cycle_days:
        raise ScheduleError(f"dark days ({dark_days}) must be shorter than a cycle ({cycle_days})")

    baseline = (t0, t0 + baseline_days * DAY_US)
    cycle_us = cycle_days * DAY_US
    announced: List[Prefix6] = [base]
    victim = base
    cycles: List[AnnouncementCycle] = []
    for k in range(1, n_cycles + 1):
        try:
            lower, upper = split(victim)
        except PrefixError as e:
            raise ScheduleError(str(e)) from e
        announced = sorted([p for p in announced if p != victim] + [lower, upper],
                           key=lambda p: int(p.network_address))
        start = baseline[1] + (k - 1) * cycle_us
        cycles.append(AnnouncementCycle(
            index=k,
            dark=(start, start + dark_days * DAY_US),
            window=(start + dark_days * DAY_US, start + cycle_us),
            announced=tuple(announced),
            victim=victim,
            new_pair=(lower, upper),
        ))
        victim = upper

    log.info(f"Schedule: {base}, {n_cycles} cycles of {cycle_days} days, baseline {baseline_days} days")
    return AnnouncementSchedule(base, baseline, tuple(cycles))


def span(schedule: AnnouncementSchedule) -> Window:
    end = schedule.cycles[-1].end if schedule.cycles else schedule.baseline[1]
    return schedule.baseline[0], end


def cycle_at(schedule: AnnouncementSchedule, ts: int) -> Optional[CyclePosition]:
    lo, hi = span(schedule)
    if ts < lo or ts >= hi:
        return None
    if ts < schedule.baseline[1]:
        return CyclePosition(0, (schedule.base,), False)
    i = bisect.bisect_right(schedule._starts, ts) - 1
    if i < 0:
        return None
    c = schedule.cycles[i]
    if ts >= c.end:
        return None
    return CyclePosition(c.index, c.announced, ts < c.dark[1])


def most_specific_announced(schedule: AnnouncementSchedule, cycle: int, dst: Address6) -> Optional[Prefix6]:
    return schedule.table(cycle).lookup_prefix(dst)


# ---------- JSON ----------
def schedule_to_json(schedule: AnnouncementSchedule) -> Dict[str, Any]:
    return {
        "base": str(schedule.base),
        "baseline": {"start": schedule.baseline[0], "end": schedule.baseline[1]},
        "cycles": [
            {
                "index": c.index,
                "dark": {"start": c.dark[0], "end": c.dark[1]},
                "window": {"start": c.window[0], "end": c.window[1]},
                "announced": [str(p) for p in c.announced],
                "victim": str(c.victim),
                "new_pair": [str(p) for p in c.new_pair],
            }
            for c in schedule.cycles
        ],
    }


def _check_partition(base: Prefix6, announced: Tuple[Prefix6, ...], index: int) -> None:
    if sum(p.num_addresses for p in announced) != base.num_addresses:
        raise ScheduleError(f"cycle {index}: announced prefixes do not cover {base}")
    for a, b in zip(announced, announced[1:]):
        if not a.subnet_of(base) or a.overlaps(b):
            raise ScheduleError(f"cycle {index}: {a} overlaps {b} or lies outside {base}")
    if announced and not announced[-1].subnet_of(base):
        raise ScheduleError(f"cycle {index}: {announced[-1]} lies outside {base}")


def schedule_from_json(doc: Dict[str, Any]) -> AnnouncementSchedule:
    try:
        base = parse_prefix(doc["base"])
        baseline = (int(doc["baseline"]["start"]), int(doc["baseline"]["end"]))
        cycles = []
        for c in doc["cycles"]:
            announced = tuple(sorted((parse_prefix(p) for p in c["announced"]),
                                     key=lambda p: int(p.network_address)))
            pair = tuple(parse_prefix(p) for p in c["new_pair"])
            cycles.append(AnnouncementCycle(
                index=int(c["index"]),
                dark=(int(c["dark"]["start"]), int(c["dark"]["end"])),
                window=(int(c["window"]["start"]), int(c["window"]["end"])),
                announced=announced,
                victim=parse_prefix(c["victim"]),
                new_pair=(pair[0], pair[1]),
            ))
    except (KeyError, TypeError, ValueError, IndexError) as e:
        raise ScheduleError(f"malformed schedule document: {e}") from e

    prev_end = baseline[1]
    prev_announced: Tuple[Prefix6, ...] = (base,)
    for i, c in enumerate(cycles, 1):
        if c.index != i or c.start < prev_end:
            raise ScheduleError(f"cycle {c.index} is out of order")
        _check_partition(base, c.announced, c.index)
        if c.victim not in prev_announced:
            raise ScheduleError(f"cycle {c.index}: split prefix {c.victim} was not announced before")
        if c.victim.prefixlen >= 128 or c.new_pair != split(c.victim):
            raise ScheduleError(f"cycle {c.index}: new pair {[str(p) for p in c.new_pair]} is not the split of {c.victim}")
        if not set(c.new_pair) <= set(c.announced):
            raise ScheduleError(f"cycle {c.index}: new pair is not announced")
        prev_end = c.end
        prev_announced = c.announced
    return AnnouncementSchedule(base, baseline, tuple(cycles))
