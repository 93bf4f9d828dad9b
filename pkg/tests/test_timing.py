import random

import pytest

from hmsim.geometry import DeviceGeometry, Rank
from hmsim.timing import (
    DRAM_TIMING,
    SCM_MLC_TIMING,
    SCM_SLC_TIMING,
    SCM_TLC_TIMING,
    ChannelState,
    ThrottleFlags,
    TimingParams,
    apply_throttle,
    closed_row_latency,
    row_conflict_latency,
    row_hit_latency,
)

GEO = DeviceGeometry()


def make_channel(**kwargs):
    return ChannelState(GEO, DRAM_TIMING, SCM_MLC_TIMING, **kwargs)


def test_timing_table_values():
    assert (DRAM_TIMING.tCL, DRAM_TIMING.tRCD, DRAM_TIMING.tRAS) == (14, 14, 33)
    assert (DRAM_TIMING.tWR, DRAM_TIMING.tRP, DRAM_TIMING.tBL) == (16, 14, 1)
    assert (SCM_MLC_TIMING.tRCD, SCM_MLC_TIMING.tRAS, SCM_MLC_TIMING.tWR) == (120, 120, 1000)
    assert (SCM_SLC_TIMING.tRCD, SCM_SLC_TIMING.tWR) == (60, 150)
    assert (SCM_TLC_TIMING.tRCD, SCM_TLC_TIMING.tWR) == (250, 2350)


def test_latency_helper_values():
    assert row_hit_latency(DRAM_TIMING) == 15
    assert closed_row_latency(DRAM_TIMING) == 29
    assert row_conflict_latency(DRAM_TIMING) == 43
    assert row_conflict_latency(SCM_MLC_TIMING) == 149


def test_dram_conflict_and_hit_anchor_cycles():
    ch = make_channel()
    # open row 1, long idle, then conflict to row 2: pre+act+cas = 43 cycles
    ch.service_parts(Rank.DRAM, 0, 1, 0, False, 0)
    done, _, _ = ch.service_parts(Rank.DRAM, 0, 2, 0, False, 500)
    assert done - 500 == 43
    # row-hit follow-up: cas+burst only
    done, _, _ = ch.service_parts(Rank.DRAM, 0, 2, 1, False, 600)
    assert done - 600 == 15


def test_scm_mlc_conflict_anchor_cycles():
    ch = make_channel()
    ch.service_parts(Rank.SCM, 0, 1, 0, False, 0)
    done, _, _ = ch.service_parts(Rank.SCM, 0, 2, 0, False, 500)
    assert done - 500 == 149
    done, _, _ = ch.service_parts(Rank.SCM, 0, 2, 1, False, 700)
    assert done - 700 == 15


def test_fresh_bank_pays_no_precharge():
    ch = make_channel()
    done, _, events = ch.service_parts(Rank.DRAM, 3, 9, 0, False, 0)
    assert done == 29
    assert [kind for _, kind, _, _ in events] == ["act", "rd"]


def test_write_recovery_delays_conflict():
    ch = make_channel()
    ch.service_parts(Rank.SCM, 0, 1, 0, True, 0)  # write completes at 135
    done, _, _ = ch.service_parts(Rank.SCM, 0, 2, 0, False, 140)
    # precharge waits for write recovery: 135 + 1000, then 14 + 120 + 15
    assert done == 135 + 1000 + 149


def test_act_charges_row_and_scm_pre_charges_dirty_columns():
    ch = make_channel()
    _, _, events = ch.service_parts(Rank.SCM, 0, 1, 5, True, 0)
    assert (events[0][1], events[0][3]) == ("act", 2048 * 8)
    _, _, events = ch.service_parts(Rank.SCM, 0, 1, 6, True, 2000)
    assert [kind for _, kind, _, _ in events] == ["wr"]
    _, _, events = ch.service_parts(Rank.SCM, 0, 2, 0, False, 4000)
    pre = [e for e in events if e[1] == "pre"]
    assert len(pre) == 1
    assert pre[0][3] == 2 * 32 * 8  # two dirty columns, not the whole row


def test_dram_pre_charges_full_row():
    ch = make_channel()
    ch.service_parts(Rank.DRAM, 0, 1, 0, False, 0)
    _, _, events = ch.service_parts(Rank.DRAM, 0, 2, 0, False, 200)
    pre = [e for e in events if e[1] == "pre"]
    assert pre[0][3] == 2048 * 8


def test_throttle_doubles_scm_act_and_write_recovery():
    flags = ThrottleFlags(act=True, wr=True)
    slowed = apply_throttle(SCM_MLC_TIMING, flags)
    assert slowed.tRCD == 240
    assert slowed.tWR == 2000
    assert slowed.tCL == SCM_MLC_TIMING.tCL
    ch = make_channel()
    ch.set_throttle(Rank.SCM, flags)
    ch.service_parts(Rank.SCM, 0, 1, 0, False, 0)
    done, _, _ = ch.service_parts(Rank.SCM, 0, 2, 0, False, 500)
    assert done - 500 == 14 + 240 + 15
    with pytest.raises(ValueError):
        ch.set_throttle(Rank.DRAM, flags)


def test_frfcfs_prefers_row_hit_in_window():
    from hmsim.timing import ColumnRequest

    ch = make_channel()
    ch.banks[Rank.DRAM][0].open_row = 5
    ch.enqueue(ColumnRequest(1, 0, Rank.DRAM, 0, 3, 0, False, "x"))
    ch.enqueue(ColumnRequest(2, 0, Rank.DRAM, 0, 5, 0, False, "x"))
    assert ch.schedule_frfcfs(10).seq == 2
    assert ch.schedule_frfcfs(10).seq == 1
    assert ch.schedule_frfcfs(10) is None


def test_frfcfs_starvation_overrides_row_hit():
    from hmsim.timing import ColumnRequest

    ch = make_channel()
    ch.banks[Rank.DRAM][0].open_row = 5
    ch.enqueue(ColumnRequest(1, 0, Rank.DRAM, 0, 3, 0, False, "x"))
    ch.enqueue(ColumnRequest(2, 9000, Rank.DRAM, 0, 5, 0, False, "x"))
    assert ch.schedule_frfcfs(10_050).seq == 1


def test_frfcfs_hit_outside_reorder_window_ignored():
    from hmsim.timing import ColumnRequest

    ch = make_channel(reorder_window=2)
    ch.banks[Rank.DRAM][0].open_row = 5
    ch.enqueue(ColumnRequest(1, 0, Rank.DRAM, 0, 1, 0, False, "x"))
    ch.enqueue(ColumnRequest(2, 0, Rank.DRAM, 0, 2, 0, False, "x"))
    ch.enqueue(ColumnRequest(3, 0, Rank.DRAM, 0, 5, 0, False, "x"))
    assert ch.schedule_frfcfs(10).seq == 1  # the hit at position 2 is not seen


def test_bus_slots_never_collide():
    ch = make_channel()
    rng = random.Random(7)
    slots = []
    now = 0
    for _ in range(400):
        rank = Rank.DRAM if rng.random() < 0.5 else Rank.SCM
        _, slot, _ = ch.service_parts(
            rank, rng.randrange(16), rng.randrange(16), rng.randrange(64),
            rng.random() < 0.3, now,
        )
        slots.append(slot)
        now += rng.randrange(3)
    assert len(slots) == len(set(slots))


def test_refresh_blackout_pushes_dram_ops():
    ch = make_channel()
    done, _, _ = ch.service_parts(Rank.DRAM, 0, 1, 0, False, 3900)
    assert done == 4250 + 29  # waits out the 350-cycle blackout
    ch2 = make_channel()
    done, _, _ = ch2.service_parts(Rank.SCM, 0, 1, 0, False, 3900)
    assert done == 3900 + 135  # SCM rank ignores DRAM refresh


def test_refresh_closes_open_rows():
    ch = make_channel()
    ch.service_parts(Rank.DRAM, 0, 1, 0, False, 0)
    done, _, events = ch.service_parts(Rank.DRAM, 0, 1, 1, False, 5000)
    # same row, but the refresh between touches closed it: activate again
    assert any(kind == "act" for _, kind, _, _ in events)
    assert done == 5000 + 29


def test_refresh_window_count():
    ch = make_channel()
    assert ch.refresh_windows_until(3899) == 0
    assert ch.refresh_windows_until(3900) == 1
    assert ch.refresh_windows_until(11700) == 3
    quiet = ChannelState(GEO, TimingParams(
        tCL=14, tRCD=14, tRAS=33, tWR=16, tRP=14, tBL=1,
        refresh_interval=0, refresh_duration=0,
    ), SCM_MLC_TIMING)
    assert quiet.refresh_windows_until(100_000) == 0


def test_timing_params_validation():
    with pytest.raises(ValueError):
        TimingParams(tCL=0, tRCD=1, tRAS=1, tWR=1, tRP=1, tBL=1)
    with pytest.raises(ValueError):
        TimingParams(tCL=1, tRCD=1, tRAS=1, tWR=1, tRP=1, tBL=1,
                     refresh_interval=100, refresh_duration=100)
