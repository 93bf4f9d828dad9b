"""Fill/bypass policy for the DRAM cache.

The SCM-aware policy scores each miss by the extra latency SCM would cost
versus DRAM, normalized by how many columns of the line were actually
requested. Scores are discretized against a windowed running maximum into
a small number of levels; a miss whose level does not beat the moving
average of recent hit scores is not worth caching and bypasses. Misses
that pass compete with the victim line's stored affinity level, which
decays probabilistically when it wins, so stale lines eventually yield.
"""

from dataclasses import dataclass, field
from enum import Enum

from .dram_cache import LineMeta
from .timing import TimingParams


class FillDecision(Enum):
    BYPASS_FIRST_LEVEL = "bypass_first_level"
    FILL_INVALID = "fill_invalid"
    FILL_REPLACE = "fill_replace"
    NO_REPLACE = "no_replace"


class PolicyKind(Enum):
    SCM_AWARE = "scm_aware"
    ALWAYS_FILL = "always_fill"
    ALWAYS_BYPASS = "always_bypass"
    PROBABILISTIC_FILL = "probabilistic_fill"
    ACCESS_COUNT_THRESHOLD = "access_count_threshold"


@dataclass
class ScorePipelineState:
    """Per-channel running state of the score pipeline.

    numerator_read/write are fixed at construction from the timing tables:
    the activation-latency gap, plus the write-recovery gap when the miss
    contains a write. Maxima refresh every update_period decisions to the
    maximum seen inside the elapsed window, so levels track the workload.
    """

    numerator_read: float
    numerator_write: float
    n_levels: int = 4
    avg_weight: float = 0.01
    update_period: int = 100
    moving_avg: float = 0.0
    max_penalty_seen: float = 0.0
    max_affinity_seen: float = 0.0
    window_max_penalty: float = 0.0
    window_max_affinity: float = 0.0
    decisions_since_refresh: int = 0

    @classmethod
    def from_timing(
        cls,
        dram: TimingParams,
        scm: TimingParams,
        n_levels: int = 4,
        avg_weight: float = 0.01,
        update_period: int = 100,
    ) -> "ScorePipelineState":
        num_read = float(scm.tRCD - dram.tRCD)
        num_write = num_read + float(scm.tWR - dram.tWR)
        return cls(
            numerator_read=num_read,
            numerator_write=num_write,
            n_levels=n_levels,
            avg_weight=avg_weight,
            update_period=update_period,
        )


def scm_penalty_score(num_columns: int, has_write: bool, state: ScorePipelineState) -> float:
    """Extra SCM latency per requested column; 0 when nothing was requested."""
    if num_columns <= 0:
        return 0.0
    numerator = state.numerator_write if has_write else state.numerator_read
    return numerator / num_columns


def discretize(value: float, max_seen: float, n_levels: int) -> int:
    """Map value onto equal half-open intervals of [0, max_seen)."""
    if max_seen <= 0.0:
        return 0
    if value >= max_seen:
        return n_levels - 1
    level = int(value * n_levels / max_seen)
    return min(level, n_levels - 1)


def observe_penalty(state: ScorePipelineState, score: float) -> None:
    state.max_penalty_seen = max(state.max_penalty_seen, score)
    state.window_max_penalty = max(state.window_max_penalty, score)


def observe_affinity(state: ScorePipelineState, score: float) -> None:
    state.max_affinity_seen = max(state.max_affinity_seen, score)
    state.window_max_affinity = max(state.window_max_affinity, score)


def update_moving_average(state: ScorePipelineState, sample: float) -> None:
    """Hit-side update; the average drifts toward recent hit scores."""
    w = state.avg_weight
    state.moving_avg = (1.0 - w) * state.moving_avg + w * sample
    observe_penalty(state, sample)


def note_decision(state: ScorePipelineState) -> None:
    """Count a bypass decision; refresh maxima at the window boundary."""
    state.decisions_since_refresh += 1
    if state.decisions_since_refresh >= state.update_period:
        state.max_penalty_seen = state.window_max_penalty
        state.max_affinity_seen = state.window_max_affinity
        state.window_max_penalty = 0.0
        state.window_max_affinity = 0.0
        state.decisions_since_refresh = 0


def penalty_level(state: ScorePipelineState, score: float) -> int:
    return discretize(score, state.max_penalty_seen, state.n_levels)


def average_level(state: ScorePipelineState) -> int:
    return discretize(state.moving_avg, state.max_penalty_seen, state.n_levels)


def dram_affinity_level(penalty: float, page_counter: int | None, state: ScorePipelineState) -> int:
    """Affinity combines penalty with page activation pressure when enabled."""
    score = penalty * (page_counter if page_counter is not None else 1)
    observe_affinity(state, score)
    return discretize(score, state.max_affinity_seen, state.n_levels)


@dataclass
class DecisionOutcome:
    decision: FillDecision
    decremented: bool = False


def decide_fill(
    request_penalty_level: int,
    avg_level: int,
    request_affinity_level: int,
    victim: LineMeta,
    p_dec: float,
    rng,
) -> DecisionOutcome:
    """Two-stage fill decision for one miss.

    Stage one compares the request's penalty level against the moving
    average; stage two compares its affinity level against the victim's
    stored level. A losing request decrements the victim's affinity with
    probability p_dec so repeated losers eventually dislodge the line.
    """
    if request_penalty_level <= avg_level:
        return DecisionOutcome(FillDecision.BYPASS_FIRST_LEVEL)
    if not victim.valid:
        return DecisionOutcome(FillDecision.FILL_INVALID)
    if request_affinity_level > victim.affinity:
        return DecisionOutcome(FillDecision.FILL_REPLACE)
    decremented = False
    if victim.affinity > 0 and rng.random() < p_dec:
        victim.affinity -= 1
        decremented = True
    return DecisionOutcome(FillDecision.NO_REPLACE, decremented=decremented)


class PageActivationTable:
    """Saturating 8-bit activation counters per memory page.

    Saturation triggers a global right shift (recorded in a 3-bit shift
    register) so relative magnitudes survive while headroom returns.
    """

    COUNTER_MAX = 255
    SHIFT_MAX = 7

    def __init__(self, page_bytes: int = 2 << 20, enabled: bool = False):
        if page_bytes <= 0 or (page_bytes & (page_bytes - 1)) != 0:
            raise ValueError("page_bytes must be a power of two")
        self.page_bytes = page_bytes
        self.enabled = enabled
        self.counters: dict[int, int] = {}
        self.msb_shift = 0
        self.max_counter = 0

    def bump(self, page: int) -> None:
        if not self.enabled:
            return
        count = self.counters.get(page, 0)
        if count >= self.COUNTER_MAX:
            for key in self.counters:
                self.counters[key] >>= 1
            self.max_counter >>= 1
            self.msb_shift = min(self.msb_shift + 1, self.SHIFT_MAX)
            count = self.counters[page]
        count += 1
        self.counters[page] = count
        self.max_counter = max(self.max_counter, count)

    def counter(self, page: int) -> int | None:
        if not self.enabled:
            return None
        return self.counters.get(page, 0)

    def p_dec(self, page: int) -> float:
        """Decrement probability for stage-two losers on this page."""
        if not self.enabled or self.max_counter == 0:
            return 1.0
        return self.counters.get(page, 0) / self.max_counter


@dataclass
class BypassPolicy:
    """Policy selector plus the knobs of the simple baselines."""

    kind: PolicyKind = PolicyKind.SCM_AWARE
    fill_probability: float = 0.9
    access_threshold: int = 2
    page_bytes: int = 2 << 20
    counters_enabled: bool = False
    _page_access_counts: dict[int, int] = field(default_factory=dict, repr=False)

    def threshold_should_fill(self, page: int) -> bool:
        return self._page_access_counts.get(page, 0) >= self.access_threshold

    def note_access(self, page: int) -> None:
        if self.kind is PolicyKind.ACCESS_COUNT_THRESHOLD:
            self._page_access_counts[page] = self._page_access_counts.get(page, 0) + 1
