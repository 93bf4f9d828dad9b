"""Bank and channel timing for the two ranks sharing each channel bus.

Times are in bus cycles (1 GHz bus, so one cycle is one nanosecond). The
bus moves one 32 B column per cycle (128-bit DDR interface, burst length
2), which caps a channel at 32 GB/s. Column accesses to an open row
pipeline at bus rate; row changes pay precharge and activation, gated by
tRAS since activation and tWR since the last write burst landed.

The channel scheduler prefers row-buffer hits over older requests but
promotes anything waiting past the starvation bound. Scheduling commits
bank and bus state forward analytically instead of stepping every cycle,
which keeps long runs fast while preserving latency anchors.
"""

from dataclasses import dataclass, replace
from enum import Enum

from .geometry import AddressDecomposition, DeviceGeometry, Rank

STARVATION_CYCLES = 10_000
REORDER_WINDOW = 8
_FAR_PAST = -1 << 40


@dataclass(frozen=True)
class TimingParams:
    tCL: int = 14
    tRCD: int = 14
    tRAS: int = 33
    tWR: int = 16
    tRP: int = 14
    tBL: int = 1
    refresh_interval: int = 0
    refresh_duration: int = 0
    # activation-window cap not modeled; kept so configs can carry it
    tFAW: int = 0

    def __post_init__(self):
        for name in ("tCL", "tRCD", "tRAS", "tWR", "tRP", "tBL"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.refresh_interval < 0 or self.refresh_duration < 0:
            raise ValueError("refresh parameters must be non-negative")
        if self.refresh_interval and self.refresh_duration >= self.refresh_interval:
            raise ValueError("refresh_duration must be below refresh_interval")


DRAM_TIMING = TimingParams(
    tCL=14, tRCD=14, tRAS=33, tWR=16, tRP=14, tBL=1,
    refresh_interval=3900, refresh_duration=350,
)

SCM_MLC_TIMING = TimingParams(tCL=14, tRCD=120, tRAS=120, tWR=1000, tRP=14, tBL=1)
SCM_SLC_TIMING = TimingParams(tCL=14, tRCD=60, tRAS=60, tWR=150, tRP=14, tBL=1)
SCM_TLC_TIMING = TimingParams(tCL=14, tRCD=250, tRAS=250, tWR=2350, tRP=14, tBL=1)


class ScmMode(Enum):
    SLC = "slc"
    MLC = "mlc"
    TLC = "tlc"


SCM_TIMING_BY_MODE = {
    ScmMode.SLC: SCM_SLC_TIMING,
    ScmMode.MLC: SCM_MLC_TIMING,
    ScmMode.TLC: SCM_TLC_TIMING,
}


def scm_timing(mode: ScmMode) -> TimingParams:
    return SCM_TIMING_BY_MODE[mode]


@dataclass(frozen=True)
class ThrottleFlags:
    act: bool = False
    wr: bool = False

    def engaged(self) -> bool:
        return self.act or self.wr


def apply_throttle(base: TimingParams, flags: ThrottleFlags) -> TimingParams:
    """Doubled activation and/or write recovery; always derived from base."""
    if not flags.engaged():
        return base
    return replace(
        base,
        tRCD=base.tRCD * 2 if flags.act else base.tRCD,
        tWR=base.tWR * 2 if flags.wr else base.tWR,
    )


def row_hit_latency(params: TimingParams) -> int:
    return params.tCL + params.tBL

def closed_row_latency(params: TimingParams) -> int:
    return params.tRCD + params.tCL + params.tBL

def row_conflict_latency(params: TimingParams) -> int:
    return params.tRP + params.tRCD + params.tCL + params.tBL


class BankState:
    __slots__ = ("open_row", "act_at", "cas_free_at", "wr_end", "dirty_mask", "last_touch")

    def __init__(self):
        self.open_row: int | None = None
        self.act_at = _FAR_PAST
        self.cas_free_at = 0
        self.wr_end = _FAR_PAST
        self.dirty_mask = 0
        self.last_touch = 0


class ColumnRequest:
    """One 32 B column access queued at a channel."""

    __slots__ = ("seq", "arrival", "rank", "bank_idx", "row", "column", "is_write", "category", "payload")

    def __init__(self, seq, arrival, rank, bank_idx, row, column, is_write, category, payload=None):
        self.seq = seq
        self.arrival = arrival
        self.rank = rank
        self.bank_idx = bank_idx
        self.row = row
        self.column = column
        self.is_write = is_write
        self.category = category
        self.payload = payload


class ChannelState:
    """Banks, request queues, and the shared data bus of one channel."""

    def __init__(
        self,
        geo: DeviceGeometry,
        dram_params: TimingParams = DRAM_TIMING,
        scm_params: TimingParams = SCM_MLC_TIMING,
        starvation_cycles: int = STARVATION_CYCLES,
        reorder_window: int = REORDER_WINDOW,
    ):
        self.geo = geo
        self.dram_params = dram_params
        self.scm_params_base = scm_params
        self.throttle = ThrottleFlags()
        n = geo.banks_per_channel
        self.banks = {Rank.DRAM: [BankState() for _ in range(n)], Rank.SCM: [BankState() for _ in range(n)]}
        self.queues = {Rank.DRAM: [[] for _ in range(n)], Rank.SCM: [[] for _ in range(n)]}
        self.pending = 0
        self.bus_tail = 0
        self.bus_gaps: list[tuple[int, int]] = []
        self.starvation_cycles = starvation_cycles
        self.reorder_window = reorder_window
        self._row_bits = geo.row_bytes * 8
        self._col_bits = geo.column_bytes * 8

    # -- configuration -----------------------------------------------------

    def params_for(self, rank: Rank) -> TimingParams:
        if rank is Rank.DRAM:
            return self.dram_params
        return apply_throttle(self.scm_params_base, self.throttle)

    def set_throttle(self, rank: Rank, flags: ThrottleFlags) -> None:
        if rank is Rank.DRAM:
            raise ValueError("throttling applies to the SCM rank only")
        self.throttle = flags

    # -- queueing ----------------------------------------------------------

    def enqueue(self, request: ColumnRequest) -> None:
        self.queues[request.rank][request.bank_idx].append(request)
        self.pending += 1

    def schedule_frfcfs(self, now: int) -> ColumnRequest | None:
        """Pick the next request: row hits first, oldest otherwise.

        Hits are searched within a small per-bank reorder window. A request
        older than the starvation bound wins unconditionally.
        """
        if self.pending == 0:
            return None
        best_hit = None
        best_hit_pos = -1
        oldest = None
        oldest_pos = -1
        for rank in (Rank.DRAM, Rank.SCM):
            banks = self.banks[rank]
            for bank_idx, queue in enumerate(self.queues[rank]):
                if not queue:
                    continue
                head = queue[0]
                if oldest is None or head.seq < oldest.seq:
                    oldest = head
                    oldest_pos = 0
                open_row = banks[bank_idx].open_row
                if open_row is None:
                    continue
                limit = min(len(queue), self.reorder_window)
                for pos in range(limit):
                    req = queue[pos]
                    if req.row == open_row:
                        if best_hit is None or req.seq < best_hit.seq:
                            best_hit = req
                            best_hit_pos = pos
                        break
        if oldest is not None and now - oldest.arrival > self.starvation_cycles:
            chosen, pos = oldest, oldest_pos
        elif best_hit is not None:
            chosen, pos = best_hit, best_hit_pos
        else:
            chosen, pos = oldest, oldest_pos
        if chosen is None:
            return None
        del self.queues[chosen.rank][chosen.bank_idx][pos]
        self.pending -= 1
        return chosen

    # -- refresh -----------------------------------------------------------

    def _refresh_adjust(self, t: int) -> int:
        interval = self.dram_params.refresh_interval
        if interval <= 0:
            return t
        k = t // interval
        if k >= 1 and t < k * interval + self.dram_params.refresh_duration:
            return k * interval + self.dram_params.refresh_duration
        return t

    def _refresh_crossed(self, last: int, now: int) -> bool:
        interval = self.dram_params.refresh_interval
        if interval <= 0:
            return False
        return (now // interval) > (last // interval)

    def refresh_windows_until(self, runtime: int) -> int:
        """Refresh windows started by `runtime`; rank-wide blackouts at k*interval."""
        interval = self.dram_params.refresh_interval
        if interval <= 0 or runtime <= 0:
            return 0
        return runtime // interval

    # -- bus ---------------------------------------------------------------

    def _alloc_bus_slot(self, earliest: int, avoid_refresh: bool) -> int:
        tBL = 1  # both ranks share tBL; validated below in service_column
        for i, (start, end) in enumerate(self.bus_gaps):
            c = max(start, earliest)
            if avoid_refresh:
                c = self._refresh_adjust(c)
            if c + tBL <= end:
                del self.bus_gaps[i]
                if c > start:
                    self.bus_gaps.insert(i, (start, c))
                    i += 1
                if c + tBL < end:
                    self.bus_gaps.insert(i, (c + tBL, end))
                return c
        c = max(earliest, self.bus_tail)
        if avoid_refresh:
            c = self._refresh_adjust(c)
        if c > self.bus_tail:
            self.bus_gaps.append((self.bus_tail, c))
            if len(self.bus_gaps) > 32:
                self.bus_gaps = self.bus_gaps[-32:]
        self.bus_tail = c + tBL
        return c

    # -- command timing ----------------------------------------------------

    def service_parts(
        self,
        rank: Rank,
        bank_idx: int,
        row: int,
        column: int,
        is_write: bool,
        now: int,
    ) -> tuple[int, int, list[tuple[int, str, Rank, int]]]:
        """Run one column access through the bank and bus state machines.

        Returns (completion_cycle, data_slot_cycle, energy_events). Energy
        events are (time, kind, rank, bits) with activation charged on the
        full row and the SCM precharge charged only on dirty columns.
        """
        params = self.params_for(rank)
        if params.tBL != 1:
            raise ValueError("bus model assumes tBL == 1")
        bank = self.banks[rank][bank_idx]
        is_dram = rank is Rank.DRAM
        events: list[tuple[int, str, Rank, int]] = []

        if is_dram and self._refresh_crossed(bank.last_touch, now):
            bank.open_row = None

        if bank.open_row == row:
            t_cas = max(now, bank.cas_free_at)
        else:
            t_act = now
            if bank.open_row is not None:
                t_pre = max(now, bank.act_at + params.tRAS, bank.wr_end + params.tWR, bank.cas_free_at)
                if is_dram:
                    t_pre = self._refresh_adjust(t_pre)
                    events.append((t_pre, "pre", rank, self._row_bits))
                elif bank.dirty_mask:
                    dirty = bin(bank.dirty_mask).count("1")
                    events.append((t_pre, "pre", rank, dirty * self._col_bits))
                bank.dirty_mask = 0
                t_act = t_pre + params.tRP
            if is_dram:
                t_act = self._refresh_adjust(t_act)
            events.append((t_act, "act", rank, self._row_bits))
            bank.act_at = t_act
            bank.open_row = row
            t_cas = max(t_act + params.tRCD, bank.cas_free_at)

        slot = self._alloc_bus_slot(t_cas + params.tCL, is_dram)
        completion = slot + params.tBL
        bank.cas_free_at = slot - params.tCL + params.tBL
        bank.last_touch = completion
        if is_write:
            bank.wr_end = completion
            bank.dirty_mask |= 1 << (column & (self.geo.columns_per_row - 1))
            events.append((slot, "wr", rank, self._col_bits))
        else:
            events.append((slot, "rd", rank, self._col_bits))
        return completion, slot, events

    def service_column(
        self,
        target: AddressDecomposition,
        rank: Rank,
        is_write: bool,
        now: int,
    ) -> tuple[int, int, list[tuple[int, str, Rank, int]]]:
        bank_idx = target.bank_group * self.geo.banks_per_group + target.bank
        return self.service_parts(rank, bank_idx, target.row, target.column, is_write, now)


def peak_bytes_per_cycle(geo: DeviceGeometry) -> int:
    return geo.column_bytes  # one column per bus cycle per channel
