import pytest

from addr6 import contains, low_byte_address, parse_address, parse_prefix
from artifacts import DAY_US, US
from bgp_schedule import (
    cycle_at, generate_schedule, most_specific_announced, schedule_from_json, schedule_to_json, span,
)
from errors import ScheduleError

BASE = parse_prefix("2001:db8::/32")
T0 = 1_704_067_200 * US

FINAL_17 = [
    "2001:db8::/33", "2001:db8:8000::/34", "2001:db8:c000::/35", "2001:db8:e000::/36",
    "2001:db8:f000::/37", "2001:db8:f800::/38", "2001:db8:fc00::/39", "2001:db8:fe00::/40",
    "2001:db8:ff00::/41", "2001:db8:ff80::/42", "2001:db8:ffc0::/43", "2001:db8:ffe0::/44",
    "2001:db8:fff0::/45", "2001:db8:fff8::/46", "2001:db8:fffc::/47", "2001:db8:fffe::/48",
    "2001:db8:ffff::/48",
]


@pytest.fixture
def schedule():
    return generate_schedule(BASE, 16, T0)


def _brute_force_split(base_int, base_len, n):
    """Victim is the base, then always the half that does not hold the previous low-byte address."""
    announced = [(base_int, base_len)]
    victim = (base_int, base_len)
    for _ in range(n):
        net, length = victim
        lower, upper = (net, length + 1), (net | (1 << (127 - length)), length + 1)
        announced.remove(victim)
        announced += [lower, upper]
        victim = upper
    return sorted(announced)


def test_first_cycle(schedule):
    assert [str(p) for p in schedule.announced(1)] == ["2001:db8::/33", "2001:db8:8000::/33"]


def test_second_cycle(schedule):
    assert [str(p) for p in schedule.announced(2)] == [
        "2001:db8::/33", "2001:db8:8000::/34", "2001:db8:c000::/34",
    ]
    assert str(schedule.cycle(2).victim) == "2001:db8:8000::/33"


def test_final_cycle_17_prefixes(schedule):
    assert [str(p) for p in schedule.announced(16)] == FINAL_17
    assert sorted(p.prefixlen for p in schedule.announced(16)) == list(range(33, 49)) + [48]


@pytest.mark.parametrize("k", [1, 5, 11, 16])
def test_matches_brute_force(schedule, k):
    expected = _brute_force_split(int(BASE.network_address), 32, k)
    got = sorted((int(p.network_address), p.prefixlen) for p in schedule.announced(k))
    assert got == expected


def test_partition_at_48_granularity(schedule):
    for k in range(1, 17):
        announced = schedule.announced(k)
        assert len(announced) == k + 1
        cursor = 0
        for p in announced:
            start = (int(p.network_address) - int(BASE.network_address)) >> 80
            assert start == cursor
            cursor += 1 << (48 - p.prefixlen)
        assert cursor == 1 << 16


def test_monotone_refinement(schedule):
    for k in range(1, 16):
        nxt = set(schedule.announced(k + 1))
        for p in schedule.announced(k):
            assert p in nxt or p == schedule.cycle(k + 1).victim


def test_victim_holds_no_earlier_low_byte_address(schedule):
    for k in range(2, 17):
        victim = schedule.cycle(k).victim
        earlier = [low_byte_address(schedule.cycle(j).new_pair[0]) for j in range(1, k)]
        assert not any(contains(victim, a) for a in earlier)


def test_timeline(schedule):
    c1 = schedule.cycle(1)
    assert c1.dark == (T0 + 84 * DAY_US, T0 + 85 * DAY_US)
    assert c1.window == (T0 + 85 * DAY_US, T0 + 98 * DAY_US)
    assert span(schedule) == (T0, T0 + (84 + 16 * 14) * DAY_US)
    assert schedule.cycle_secs == 14 * 86_400


def test_cycle_at(schedule):
    assert cycle_at(schedule, T0).index == 0
    assert cycle_at(schedule, T0).announced == (BASE,)
    c3 = schedule.cycle(3)
    pos = cycle_at(schedule, c3.dark[0] + 5 * US)
    assert (pos.index, pos.dark, pos.announced) == (3, True, c3.announced)
    assert cycle_at(schedule, c3.window[0]).dark is False
    assert cycle_at(schedule, span(schedule)[1]) is None
    assert cycle_at(schedule, T0 - 1) is None


def test_most_specific_announced(schedule):
    assert str(most_specific_announced(schedule, 2, parse_address("2001:db8:c000::1"))) == "2001:db8:c000::/34"
    assert str(most_specific_announced(schedule, 1, parse_address("2001:db8::1"))) == "2001:db8::/33"
    assert most_specific_announced(schedule, 1, parse_address("2002::1")) is None


def test_split_past_128_fails():
    with pytest.raises(ScheduleError):
        generate_schedule(parse_prefix("2001:db8::/120"), 9, T0)


def test_dark_days_must_fit():
    with pytest.raises(ScheduleError):
        generate_schedule(BASE, 2, T0, cycle_days=1, dark_days=1)


def test_json_round_trip(schedule):
    again = schedule_from_json(schedule_to_json(schedule))
    assert again.base == schedule.base
    assert again.cycles == schedule.cycles


def test_json_rejects_broken_partition(schedule):
    doc = schedule_to_json(schedule)
    doc["cycles"][0]["announced"] = ["2001:db8::/33"]
    with pytest.raises(ScheduleError):
        schedule_from_json(doc)


def test_json_rejects_garbage():
    with pytest.raises(ScheduleError):
        schedule_from_json({"base": "2001:db8::/32"})


def test_json_rejects_pair_that_is_not_the_split(schedule):
    doc = schedule_to_json(schedule)
    victim = doc["cycles"][1]["victim"]
    assert victim == "2001:db8:8000::/33"
    doc["cycles"][1]["new_pair"] = ["2001:db8::/34", "2001:db8:4000::/34"]
    with pytest.raises(ScheduleError, match="not the split"):
        schedule_from_json(doc)


def test_json_rejects_pair_missing_from_announcements(schedule):
    doc = schedule_to_json(schedule)
    doc["cycles"][1]["victim"] = "2001:db8::/33"
    doc["cycles"][1]["new_pair"] = ["2001:db8::/34", "2001:db8:4000::/34"]
    with pytest.raises(ScheduleError):
        schedule_from_json(doc)
