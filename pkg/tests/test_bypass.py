import math
import random

import numpy as np
import pytest

from hmsim.bypass import (
    BypassPolicy,
    DecisionOutcome,
    FillDecision,
    PageActivationTable,
    PolicyKind,
    ScorePipelineState,
    average_level,
    decide_fill,
    discretize,
    dram_affinity_level,
    note_decision,
    observe_penalty,
    penalty_level,
    scm_penalty_score,
    update_moving_average,
)
from hmsim.dram_cache import LineMeta
from hmsim.timing import DRAM_TIMING, SCM_MLC_TIMING


def make_state(**kwargs):
    return ScorePipelineState.from_timing(DRAM_TIMING, SCM_MLC_TIMING, **kwargs)


def test_numerators_from_timing_tables():
    st = make_state()
    assert st.numerator_read == 106.0  # 120 - 14
    assert st.numerator_write == 1090.0  # 106 + (1000 - 16)


def test_penalty_score_unit_values():
    st = make_state()
    assert scm_penalty_score(8, False, st) == pytest.approx(13.25)
    assert scm_penalty_score(1, True, st) == pytest.approx(1090.0)
    assert scm_penalty_score(0, False, st) == 0.0
    equal = ScorePipelineState.from_timing(DRAM_TIMING, DRAM_TIMING)
    assert scm_penalty_score(4, False, equal) == 0.0
    assert scm_penalty_score(1, True, equal) == 0.0


def test_discretize_half_open_intervals():
    assert discretize(0.0, 100.0, 4) == 0
    assert discretize(24.9, 100.0, 4) == 0
    assert discretize(25.0, 100.0, 4) == 1
    assert discretize(99.9, 100.0, 4) == 3
    assert discretize(100.0, 100.0, 4) == 3  # at or past the max clips high
    assert discretize(500.0, 100.0, 4) == 3
    assert discretize(50.0, 0.0, 4) == 0  # nothing observed yet


def test_moving_average_arithmetic():
    st = make_state(avg_weight=0.01)
    update_moving_average(st, 100.0)
    assert st.moving_avg == pytest.approx(1.0)
    update_moving_average(st, 100.0)
    assert st.moving_avg == pytest.approx(0.99 * 1.0 + 1.0)
    # hit samples also stretch the penalty scale
    assert st.max_penalty_seen == 100.0


def test_window_maxima_refresh_after_update_period():
    st = make_state(update_period=3)
    observe_penalty(st, 80.0)
    assert penalty_level(st, 80.0) == 3
    for _ in range(3):
        note_decision(st)
    # stale maximum swapped for the window maximum, window reset
    assert st.max_penalty_seen == 80.0
    observe_penalty(st, 10.0)
    for _ in range(3):
        note_decision(st)
    assert st.max_penalty_seen == 10.0
    assert st.decisions_since_refresh == 0


def test_affinity_level_uses_page_counter():
    st = make_state()
    lvl_cold = dram_affinity_level(50.0, None, st)
    assert lvl_cold == 3  # first observation defines the scale
    lvl_hot = dram_affinity_level(50.0, 4, st)
    assert lvl_hot == 3
    # the earlier plain-50 score is now a quarter of the 200 maximum
    assert dram_affinity_level(50.0, 1, st) == 1


DECISION_TABLE = [
    # p_level, avg_level, a_level, victim(valid, affinity), expected
    (0, 0, 3, (True, 0), FillDecision.BYPASS_FIRST_LEVEL),
    (1, 2, 3, (True, 0), FillDecision.BYPASS_FIRST_LEVEL),
    (2, 1, 3, (False, 0), FillDecision.FILL_INVALID),
    (2, 1, 2, (True, 1), FillDecision.FILL_REPLACE),
    (2, 1, 1, (True, 1), FillDecision.NO_REPLACE),
    (3, 0, 0, (True, 3), FillDecision.NO_REPLACE),
]


@pytest.mark.parametrize("p,avg,a,victim,expected", DECISION_TABLE)
def test_decide_fill_table(p, avg, a, victim, expected):
    valid, affinity = victim
    meta = LineMeta(tag=0, valid=valid, dirty=False, affinity=affinity)
    rng = np.random.default_rng(0)
    outcome = decide_fill(p, avg, a, meta, 0.0, rng)
    assert outcome.decision is expected


def test_losing_request_decrements_with_probability():
    # binomial check: with p_dec = 0.3 over 4000 losses the decrement count
    # stays within 3 sigma of the mean (sigma = sqrt(n p (1-p)) ~ 29)
    rng = np.random.default_rng(42)
    n, p = 4000, 0.3
    hits = 0
    for _ in range(n):
        meta = LineMeta(tag=0, valid=True, dirty=False, affinity=2)
        outcome = decide_fill(2, 1, 1, meta, p, rng)
        assert outcome.decision is FillDecision.NO_REPLACE
        if outcome.decremented:
            hits += 1
            assert meta.affinity == 1
        else:
            assert meta.affinity == 2
    sigma = math.sqrt(n * p * (1 - p))
    assert abs(hits - n * p) <= 3 * sigma


def test_decrement_skips_zero_affinity():
    rng = np.random.default_rng(1)
    meta = LineMeta(tag=0, valid=True, dirty=False, affinity=0)
    for _ in range(50):
        outcome = decide_fill(2, 1, 0, meta, 1.0, rng)
        assert outcome.decision is FillDecision.NO_REPLACE
        assert not outcome.decremented
    assert meta.affinity == 0


def test_repeated_losers_eventually_dislodge():
    rng = np.random.default_rng(2)
    meta = LineMeta(tag=0, valid=True, dirty=False, affinity=3)
    decisions = []
    for _ in range(10):
        decisions.append(decide_fill(2, 1, 1, meta, 1.0, rng).decision)
    assert decisions[:2] == [FillDecision.NO_REPLACE, FillDecision.NO_REPLACE]
    assert FillDecision.FILL_REPLACE in decisions
    first_fill = decisions.index(FillDecision.FILL_REPLACE)
    assert all(d is FillDecision.NO_REPLACE for d in decisions[:first_fill])


def test_page_table_disabled_returns_neutral_values():
    pat = PageActivationTable(enabled=False)
    pat.bump(3)
    assert pat.counter(3) is None
    assert pat.p_dec(3) == 1.0


def test_page_table_counts_and_saturates():
    pat = PageActivationTable(enabled=True)
    for _ in range(10):
        pat.bump(1)
    pat.bump(2)
    assert pat.counter(1) == 10
    assert pat.counter(2) == 1
    assert pat.p_dec(1) == 1.0
    assert pat.p_dec(2) == pytest.approx(0.1)
    assert pat.p_dec(99) == 0.0
    for _ in range(245):
        pat.bump(1)
    assert pat.counter(1) == 255
    pat.bump(1)  # saturation halves every counter, then counts this bump
    assert pat.counter(1) == 128
    assert pat.counter(2) == 0
    assert pat.msb_shift == 1
    assert pat.max_counter == 128


def test_page_table_shift_register_caps_at_seven():
    pat = PageActivationTable(enabled=True)
    for _ in range(9):
        pat.counters[0] = 255
        pat.bump(0)
    assert pat.msb_shift == 7


def test_threshold_policy_counts_only_for_its_kind():
    pol = BypassPolicy(kind=PolicyKind.ACCESS_COUNT_THRESHOLD, access_threshold=2)
    assert not pol.threshold_should_fill(0)
    pol.note_access(0)
    assert not pol.threshold_should_fill(0)
    pol.note_access(0)
    assert pol.threshold_should_fill(0)
    other = BypassPolicy(kind=PolicyKind.ALWAYS_FILL)
    other.note_access(0)
    assert not other.threshold_should_fill(0)
