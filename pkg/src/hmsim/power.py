"""Energy accounting and budget-driven SCM throttling.

Energy is charged per bit moved: activations on the full row, reads and
writes on the 32 B burst, DRAM precharge on the full row, and the SCM
precharge only on the columns actually dirtied (its storage cell write is
the expensive step). Windowed power above budget engages both throttle
flags, doubling SCM activation and write-recovery times; the flags release
once power falls below budget by the hysteresis margin.
"""

from dataclasses import dataclass

from .geometry import Rank
from .timing import ThrottleFlags

EVENT_KINDS = ("act", "pre", "rd", "wr")

DEFAULT_WINDOW_CYCLES = 10_000
DEFAULT_HYSTERESIS = 0.1


@dataclass(frozen=True)
class EnergyParams:
    """pJ per bit for each command, per rank."""

    dram_act: float = 1.17
    dram_pre: float = 0.39
    dram_rd: float = 0.93
    dram_wr: float = 1.02
    scm_act: float = 2.47
    scm_pre_wr: float = 16.82
    scm_rd: float = 0.93
    scm_wr: float = 1.02

    def per_bit(self, kind: str, rank: Rank) -> float:
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown energy event {kind!r}")
        if rank is Rank.DRAM:
            return {
                "act": self.dram_act,
                "pre": self.dram_pre,
                "rd": self.dram_rd,
                "wr": self.dram_wr,
            }[kind]
        return {
            "act": self.scm_act,
            "pre": self.scm_pre_wr,
            "rd": self.scm_rd,
            "wr": self.scm_wr,
        }[kind]


def ledger_key(kind: str, rank: Rank) -> str:
    if rank is Rank.SCM and kind == "pre":
        return "scm_pre_wr"
    return f"{rank.value}_{kind}"


class EnergyLedger:
    """Per-channel energy totals plus per-window buckets for the monitor."""

    def __init__(self, params: EnergyParams, window_cycles: int = DEFAULT_WINDOW_CYCLES):
        self.params = params
        self.window_cycles = window_cycles
        self.totals = {ledger_key(kind, rank): 0.0 for rank in Rank for kind in EVENT_KINDS}
        self.totals["refresh"] = 0.0
        self.window_pj: dict[int, float] = {}
        self.total_pj = 0.0

    def record_energy(self, kind: str, rank: Rank, bits: int, at_cycle: int = 0) -> None:
        if bits < 0:
            raise ValueError("bits must be non-negative")
        if bits == 0:
            return
        pj = self.params.per_bit(kind, rank) * bits
        self.totals[ledger_key(kind, rank)] += pj
        self.total_pj += pj
        idx = at_cycle // self.window_cycles
        self.window_pj[idx] = self.window_pj.get(idx, 0.0) + pj

    def record_refresh(self, windows: int, banks: int, row_bits: int) -> None:
        """End-of-run charge: one activate+precharge pair per bank per window."""
        if windows <= 0:
            return
        per_window = banks * row_bits * (self.params.dram_act + self.params.dram_pre)
        self.totals["refresh"] += windows * per_window
        self.total_pj += windows * per_window

    def window_energy(self, window_index: int) -> float:
        return self.window_pj.get(window_index, 0.0)


def window_power_watts(energy_pj: float, window_cycles: int, cycle_ns: float = 1.0) -> float:
    # pJ per ns is a milliwatt
    return energy_pj / (window_cycles * cycle_ns) * 1e-3


class PowerMonitor:
    """Tracks windowed power against a budget and owns the throttle flags."""

    def __init__(
        self,
        window_cycles: int = DEFAULT_WINDOW_CYCLES,
        budget_watts: float | None = None,
        hysteresis: float = DEFAULT_HYSTERESIS,
        cycle_ns: float = 1.0,
    ):
        if not 0.0 <= hysteresis < 1.0:
            raise ValueError("hysteresis must be in [0, 1)")
        self.window_cycles = window_cycles
        self.budget_watts = budget_watts
        self.hysteresis = hysteresis
        self.cycle_ns = cycle_ns
        self.flags = ThrottleFlags()
        self.throttled_windows = 0
        self.timeline: list[tuple[int, float, float, bool, bool]] = []

    def evaluate_window(self, window_index: int, ledger: EnergyLedger) -> ThrottleFlags:
        """Close out one window: record power, update the throttle flags."""
        energy = ledger.window_energy(window_index)
        power = window_power_watts(energy, self.window_cycles, self.cycle_ns)
        if self.budget_watts is not None:
            if power > self.budget_watts:
                self.flags = ThrottleFlags(act=True, wr=True)
            elif self.flags.engaged() and power < self.budget_watts * (1.0 - self.hysteresis):
                self.flags = ThrottleFlags()
        if self.flags.engaged():
            self.throttled_windows += 1
        self.timeline.append(
            (window_index * self.window_cycles, energy, power, self.flags.act, self.flags.wr)
        )
        return self.flags


def windowed_power_and_throttle(monitor: PowerMonitor, ledger: EnergyLedger, now: int) -> ThrottleFlags:
    """Evaluate the window that ends at `now` (a window boundary)."""
    if now % monitor.window_cycles != 0 or now <= 0:
        raise ValueError("now must be a positive window boundary")
    return monitor.evaluate_window(now // monitor.window_cycles - 1, ledger)
