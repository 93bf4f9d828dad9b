"""Event-driven simulation core.

One heap drives two event kinds: per-channel scheduler turns (at most one
column command issues per channel per cycle) and column completions.
Functional state -- the cache directory, value tokens, the shadow map --
advances synchronously while requests are processed, so hit/miss outcomes
are deterministic in injection order; the bank and bus state machines only
decide when things finish. Read values are sampled at completion from the
authoritative copy chain and checked against the shadow map, which catches
lost writebacks.
"""

import heapq
from collections import deque
from dataclasses import dataclass
from enum import Enum, IntEnum

import numpy as np

from . import bypass as bp
from .config import ConfigError, ExperimentConfig
from .dram_cache import (
    AFFINITY_MAX,
    LineMeta,
    MetadataLayout,
    MshrOutcome,
    MshrTable,
    encode_line_meta,
    evict_plan,
    fill_plan,
    probe_columns,
)
from .geometry import (
    Rank,
    cache_index_to_scm_address,
    decompose_address,
    dram_cache_index,
    global_row_index,
    is_metadata_column,
    line_in_row_of_set,
    page_index,
    set_to_dram_address,
)
from .l2cache import L2Cache, TagCache
from .power import EnergyLedger, EnergyParams, PowerMonitor
from .stats import TRAFFIC_CATEGORIES, StatsReport
from .timing import ChannelState, ColumnRequest
from .workload import Trace, generate, load_trace

_TURN = 0
_COMPLETE = 1

_DECISION_KEY = {
    bp.FillDecision.BYPASS_FIRST_LEVEL: "first_level",
    bp.FillDecision.FILL_INVALID: "fill_invalid",
    bp.FillDecision.FILL_REPLACE: "fill_replace",
    bp.FillDecision.NO_REPLACE: "no_replace",
}


class SimMode(Enum):
    CACHE = "cache"
    FLAT = "flat"


class RequestStage(IntEnum):
    L2 = 0
    CTC = 1
    PROBE = 2
    DEMAND_DRAM = 3
    DEMAND_SCM = 4
    FILL_DECISION = 5
    DONE = 6


@dataclass
class RequestState:
    """Lifecycle of one injected 32 B sector request."""

    stream: int
    address: int
    is_write: bool
    stage: RequestStage = RequestStage.L2
    issue_cycle: int = 0
    complete_cycle: int | None = None

    def advance(self, stage: RequestStage) -> None:
        if stage < self.stage:
            raise ValueError(f"stage moved backwards: {self.stage} -> {stage}")
        self.stage = stage


class _MemOp:
    """A sector heading for memory: an L2 read miss or an L2 writeback."""

    __slots__ = ("req", "stream", "address", "is_write")

    def __init__(self, req: RequestState | None, stream: int, address: int, is_write: bool):
        self.req = req
        self.stream = stream
        self.address = address
        self.is_write = is_write


class _LineCtx:
    """In-flight state of one cacheline lookup, shared by merged sectors."""

    __slots__ = (
        "line",
        "entry",
        "set_index",
        "tag",
        "channel",
        "bank_idx",
        "dram_row",
        "row_index",
        "probes_left",
        "resolved",
        "is_hit",
        "from_ctc",
        "fill_pending",
        "demand_left",
        "dispatched_mask",
        "sector_ops",
        "pending",
    )

    def __init__(self, line, entry, set_index, tag, channel, bank_idx, dram_row, row_index):
        self.line = line
        self.entry = entry
        self.set_index = set_index
        self.tag = tag
        self.channel = channel
        self.bank_idx = bank_idx
        self.dram_row = dram_row
        self.row_index = row_index
        self.probes_left = 0
        self.resolved = False
        self.is_hit = False
        self.from_ctc = False
        self.fill_pending = False
        self.demand_left = 0
        self.dispatched_mask = 0
        self.sector_ops: dict[int, list[_MemOp]] = {}
        self.pending: list[_MemOp] = []


class _Chan:
    """Everything owned by one channel: timing, MSHRs, energy, policy state."""

    __slots__ = (
        "index",
        "state",
        "mshr",
        "ctxs",
        "retry",
        "ledger",
        "monitor",
        "score",
        "windows_done",
        "turn_armed",
        "next_turn",
        "window_columns",
        "columns",
    )

    def __init__(self, index, state, mshr, ledger, monitor, score):
        self.index = index
        self.state = state
        self.mshr = mshr
        self.ctxs: dict[int, _LineCtx] = {}
        self.retry: deque[_MemOp] = deque()
        self.ledger = ledger
        self.monitor = monitor
        self.score = score
        self.windows_done = 0
        self.turn_armed = False
        self.next_turn = 0
        self.window_columns: dict[int, int] = {}
        self.columns = 0


def resolved_workload_capacity(config: ExperimentConfig) -> int:
    if config.workload.capacity_bytes is not None:
        return config.workload.capacity_bytes
    geo = config.geometry.build()
    if config.sim.mode == "flat":
        return geo.dram_capacity_bytes + geo.scm_capacity_bytes
    return geo.scm_capacity_bytes


def build_trace(config: ExperimentConfig) -> Trace:
    """Trace from file when configured, else the synthetic generator."""
    wl = config.workload
    if wl.trace_path is not None:
        return load_trace(wl.trace_path)
    if wl.seed is not None:
        seed = wl.seed
    else:
        seed = np.random.SeedSequence(config.sim.seed).spawn(2)[0]
    return generate(
        wl.spec(),
        seed=seed,
        length=wl.length,
        capacity_bytes=resolved_workload_capacity(config),
        offset=wl.offset,
        line_bytes=config.geometry.cacheline_bytes,
    )


class Simulator:
    def __init__(self, config: ExperimentConfig, trace: Trace):
        config.validate()
        self.cfg = config
        self.geo = config.geometry.build()
        self.mode = SimMode(config.sim.mode)
        flat = self.mode is SimMode.FLAT
        if not flat and self.geo.capacity_ratio > AFFINITY_MAX + 1:
            raise ConfigError("capacity ratio exceeds the 2-bit metadata tag")
        self.dram_params, self.scm_params, self.scm_mode = config.timing.resolve(flat)
        self.layout = MetadataLayout(config.cache.metadata_layout)
        self.trace = trace
        self.stream_window = config.sim.stream_window
        self.shadow_check = config.sim.shadow_check

        l2cfg = config.l2.build(flat)
        self.l2 = L2Cache(l2cfg)
        self.ctc = TagCache(l2cfg.sets, l2cfg.ctc_l2_ways)

        self.policy_kind = bp.PolicyKind(config.policy.kind)
        self.policy = bp.BypassPolicy(
            kind=self.policy_kind,
            fill_probability=config.policy.fill_probability,
            access_threshold=config.policy.access_threshold,
            page_bytes=config.policy.page_bytes,
            counters_enabled=config.policy.counters_enabled,
        )
        self.pat = bp.PageActivationTable(
            page_bytes=config.policy.page_bytes,
            enabled=config.policy.counters_enabled,
        )
        self.page_bytes = config.policy.page_bytes
        self.rng = np.random.default_rng(np.random.SeedSequence(config.sim.seed).spawn(2)[1])

        energy = EnergyParams()
        wc = config.power.window_cycles
        self.window_cycles = wc
        self.channels = []
        for i in range(self.geo.channels):
            state = ChannelState(self.geo, self.dram_params, self.scm_params)
            self.channels.append(
                _Chan(
                    index=i,
                    state=state,
                    mshr=MshrTable(config.cache.mshr_entries),
                    ledger=EnergyLedger(energy, window_cycles=wc),
                    monitor=PowerMonitor(
                        window_cycles=wc,
                        budget_watts=config.power.budget_watts,
                        hysteresis=config.power.hysteresis,
                    ),
                    score=bp.ScorePipelineState.from_timing(
                        self.dram_params,
                        self.scm_params,
                        n_levels=config.policy.n_levels,
                        avg_weight=config.policy.avg_weight,
                        update_period=config.policy.update_period,
                    ),
                )
            )

        # functional state
        self.meta_store: dict[int, LineMeta] = {}
        self.dram_tokens: dict[tuple[int, int], int] = {}
        self.scm_tokens: dict[int, int] = {}
        self.shadow: dict[int, int] = {}
        self._token = 0

        # event loop
        self.heap: list = []
        self.now = 0
        self._seq = 0
        self._col_seq = 0
        self.last_cycle = 0
        self._cursor = 0
        self._sector_off = 0
        self.outstanding: dict[int, int] = {}
        # plain lists beat numpy scalar extraction in the per-sector pump
        self._tr_streams = trace.streams.tolist()
        self._tr_writes = trace.writes.tolist()
        self._tr_addresses = trace.addresses.tolist()
        self._tr_sizes = trace.sizes.tolist()

        # statistics
        self.traffic = {cat: 0 for cat in TRAFFIC_CATEGORIES}
        self.traffic["refresh"] = 0
        self.columns_issued = 0
        self.lookups = {
            "read_hits": 0,
            "read_misses": 0,
            "write_hits": 0,
            "write_misses": 0,
            "l2_hits": 0,
            "l2_accesses": 0,
            "ctc_hits": 0,
            "ctc_lookups": 0,
        }
        self.bypass_counts = {
            "first_level": 0,
            "fill_invalid": 0,
            "fill_replace": 0,
            "no_replace": 0,
        }
        self.injected = 0
        self.completed = 0

    # -- event plumbing ------------------------------------------------------

    def _push(self, time: int, kind: int, payload) -> None:
        self._seq += 1
        heapq.heappush(self.heap, (time, self._seq, kind, payload))

    def _arm_turn(self, chan: _Chan, earliest: int) -> None:
        if chan.turn_armed or chan.state.pending == 0:
            return
        t = max(earliest, chan.next_turn)
        chan.turn_armed = True
        self._push(t, _TURN, chan)

    def _issue(self, channel: int, rank: Rank, bank_idx: int, row: int, column: int,
               is_write: bool, category: str, payload) -> None:
        chan = self.channels[channel]
        self._col_seq += 1
        chan.state.enqueue(
            ColumnRequest(self._col_seq, self.now, rank, bank_idx, row, column,
                          is_write, category, payload)
        )
        self._arm_turn(chan, self.now)

    def _catch_up_windows(self, chan: _Chan, now: int) -> None:
        target = now // self.window_cycles
        while chan.windows_done < target:
            flags = chan.monitor.evaluate_window(chan.windows_done, chan.ledger)
            chan.state.set_throttle(Rank.SCM, flags)
            chan.windows_done += 1

    def _turn(self, chan: _Chan) -> None:
        chan.turn_armed = False
        now = self.now
        chan.next_turn = now + 1
        self._catch_up_windows(chan, now)
        req = chan.state.schedule_frfcfs(now)
        if req is not None:
            completion, slot, events = chan.state.service_parts(
                req.rank, req.bank_idx, req.row, req.column, req.is_write, now
            )
            bump = self.mode is SimMode.FLAT or req.rank is Rank.SCM
            for t, kind, rank, bits in events:
                chan.ledger.record_energy(kind, rank, bits, at_cycle=t)
                if bump and kind == "act":
                    self.pat.bump(page_index(req.payload[1], self.page_bytes))
            w = slot // self.window_cycles
            chan.window_columns[w] = chan.window_columns.get(w, 0) + 1
            chan.columns += 1
            self.columns_issued += 1
            self.traffic[req.category] += 1
            if completion > self.last_cycle:
                self.last_cycle = completion
            self._push(completion, _COMPLETE, req)
        self._arm_turn(chan, now + 1)

    # -- functional memory -----------------------------------------------------

    def _next_token(self) -> int:
        self._token += 1
        return self._token

    def _value_of(self, addr: int) -> int:
        if self.mode is SimMode.FLAT:
            return self.scm_tokens.get(addr, 0)
        idx = dram_cache_index(addr, self.geo)
        if is_metadata_column(idx, self.geo):
            return self.scm_tokens.get(addr, 0)
        meta = self.meta_store.get(idx.set)
        if meta is not None and meta.valid and meta.tag == idx.tag:
            return self.dram_tokens.get((idx.set, idx.sector), self.scm_tokens.get(addr, 0))
        return self.scm_tokens.get(addr, 0)

    def _apply_write(self, addr: int, token: int) -> None:
        if self.mode is SimMode.FLAT:
            self.scm_tokens[addr] = token
            return
        idx = dram_cache_index(addr, self.geo)
        if is_metadata_column(idx, self.geo):
            self.scm_tokens[addr] = token
            return
        meta = self.meta_store.get(idx.set)
        if meta is not None and meta.valid and meta.tag == idx.tag:
            self.dram_tokens[(idx.set, idx.sector)] = token
            if not meta.dirty:
                meta.dirty = True
                self._ctc_sync(idx.set)
        else:
            self.scm_tokens[addr] = token

    # -- tag cache bookkeeping -------------------------------------------------

    def _row_of_set(self, set_index: int):
        """(channel, bank_idx, dram_row, global_row_index) of a set's row."""
        dec = decompose_address(set_to_dram_address(set_index, 0, self.geo), self.geo, Rank.DRAM)
        bank_idx = dec.bank_group * self.geo.banks_per_group + dec.bank
        return dec.channel, bank_idx, dec.row, global_row_index(dec, self.geo)

    def _row_word(self, set_index: int) -> int:
        """Compressed tag/valid/dirty word covering the set's whole DRAM row."""
        shift = self.geo.line_in_row_shift - (self.geo.cacheline_bytes.bit_length() - 1)
        base = set_index & ~((self.geo.lines_per_row - 1) << shift)
        word = 0
        for lir in range(self.geo.lines_per_row):
            meta = self.meta_store.get(base | (lir << shift))
            if meta is not None:
                word |= (encode_line_meta(meta) & 0xF) << (4 * lir)
        return word

    def _metadata_write(self, set_index: int) -> None:
        """One column write updating the row's metadata in place."""
        channel, bank_idx, row, _ = self._row_of_set(set_index)
        col = self.geo.columns_per_row - 1
        if self.layout is MetadataLayout.TAD:
            col = line_in_row_of_set(set_index, self.geo) * self.geo.columns_per_line
        addr = set_to_dram_address(set_index, 0, self.geo)
        self._issue(channel, Rank.DRAM, bank_idx, row, col, True,
                    "metadata_writeback", ("fire", addr))

    def _ctc_sync(self, set_index: int) -> None:
        """Push a directory change through the tag cache; miss costs a write."""
        _, _, _, row_index = self._row_of_set(set_index)
        if not self.ctc.update(row_index, self._row_word(set_index), dirty=True):
            if self.layout is MetadataLayout.AMIL:
                self._metadata_write(set_index)
            # TAD tags travel with the data columns already being written

    def _ctc_drain(self, drains) -> None:
        """Write evicted dirty tag words back to their home rows."""
        total_banks = self.geo.total_banks
        banks_per_channel = self.geo.banks_per_channel
        for row_index, _word in drains:
            row, bank_id = divmod(row_index, total_banks)
            channel, bank_idx = divmod(bank_id, banks_per_channel)
            base = ("fire", 0)
            if self.layout is MetadataLayout.AMIL:
                col = self.geo.columns_per_row - 1
                self._issue(channel, Rank.DRAM, bank_idx, row, col, False,
                            "metadata_writeback", base)
                self._issue(channel, Rank.DRAM, bank_idx, row, col, True,
                            "metadata_writeback", base)
            else:
                for col in probe_columns(self.layout, self.geo):
                    self._issue(channel, Rank.DRAM, bank_idx, row, col, True,
                                "metadata_writeback", base)

    # -- injection ---------------------------------------------------------------

    def _pump_injection(self) -> None:
        n = len(self._tr_addresses)
        sector_bytes = self.geo.column_bytes
        outstanding = self.outstanding
        window = self.stream_window
        while self._cursor < n:
            cursor = self._cursor
            stream = self._tr_streams[cursor]
            if outstanding.get(stream, 0) >= window:
                return
            sectors = self._tr_sizes[cursor] // sector_bytes
            addr = self._tr_addresses[cursor] + self._sector_off * sector_bytes
            self._sector_off += 1
            if self._sector_off >= sectors:
                self._sector_off = 0
                self._cursor += 1
            self._inject(
                RequestState(stream, addr, self._tr_writes[cursor], issue_cycle=self.now)
            )

    def _inject(self, req: RequestState) -> None:
        self.injected += 1
        self.outstanding[req.stream] = self.outstanding.get(req.stream, 0) + 1
        addr = req.address
        self.lookups["l2_accesses"] += 1
        if req.is_write:
            token = self._next_token()
            self.shadow[addr] = token
            hit, writebacks = self.l2.write(addr, token)
            if hit:
                self.lookups["l2_hits"] += 1
            for wb_addr, wb_token in writebacks:
                self._spawn_writeback(req.stream, wb_addr, wb_token)
            self._retire(req)
            return
        token, _present = self.l2.lookup_read(addr)
        if token is not None:
            self.lookups["l2_hits"] += 1
            self._check_value(addr, token)
            self._retire(req)
            return
        self._enter_memory(_MemOp(req, req.stream, addr, False))

    def _spawn_writeback(self, stream: int, addr: int, token: int) -> None:
        self._apply_write(addr, token)
        self.outstanding[stream] = self.outstanding.get(stream, 0) + 1
        self._enter_memory(_MemOp(None, stream, addr, True))

    def _retire(self, req: RequestState) -> None:
        req.advance(RequestStage.DONE)
        req.complete_cycle = self.now
        self.completed += 1
        self.outstanding[req.stream] -= 1

    def _check_value(self, addr: int, value: int) -> None:
        if not self.shadow_check:
            return
        expected = self.shadow.get(addr, 0)
        if value != expected:
            raise RuntimeError(
                f"value mismatch at {addr:#x}: got {value}, shadow holds {expected}"
            )

    # -- memory side -------------------------------------------------------------

    def _enter_memory(self, op: _MemOp, from_retry: bool = False) -> None:
        if self.mode is SimMode.FLAT:
            self._flat_demand(op)
            return
        addr = op.address
        idx = dram_cache_index(addr, self.geo)
        if is_metadata_column(idx, self.geo):
            self._scm_demand_column(op, addr)
            return
        channel = (addr >> self.geo.channel_shift) & (self.geo.channels - 1)
        chan = self.channels[channel]
        if chan.retry and not from_retry:
            chan.retry.append(op)
            return
        line = addr >> (self.geo.cacheline_bytes.bit_length() - 1)
        outcome, entry = chan.mshr.insert_or_merge(line, idx.sector, op.is_write)
        if outcome is MshrOutcome.FULL:
            if from_retry:
                chan.retry.appendleft(op)
            else:
                chan.retry.append(op)
            return
        if outcome is MshrOutcome.MERGED:
            ctx = chan.ctxs[line]
            if ctx.resolved:
                self._join_resolved(chan, ctx, op, idx.sector)
            else:
                if op.req is not None:
                    op.req.advance(RequestStage.PROBE if ctx.probes_left else RequestStage.CTC)
                ctx.pending.append(op)
            return
        ch2, bank_idx, dram_row, row_index = self._row_of_set(idx.set)
        ctx = _LineCtx(line, entry, idx.set, idx.tag, channel, bank_idx, dram_row, row_index)
        chan.ctxs[line] = ctx
        ctx.pending.append(op)
        if op.req is not None:
            op.req.advance(RequestStage.CTC)
        self._tag_check(chan, ctx)

    def _flat_demand(self, op: _MemOp) -> None:
        addr = op.address
        dram_cap = self.geo.dram_capacity_bytes
        if addr < dram_cap:
            dec = decompose_address(addr, self.geo, Rank.DRAM)
            rank = Rank.DRAM
            category = "demand_dram_wr" if op.is_write else "demand_dram_rd"
        else:
            dec = decompose_address(addr - dram_cap, self.geo, Rank.SCM)
            rank = Rank.SCM
            category = "demand_scm_wr" if op.is_write else "demand_scm_rd"
        if op.req is not None:
            op.req.advance(RequestStage.DEMAND_DRAM if rank is Rank.DRAM else RequestStage.DEMAND_SCM)
        bank_idx = dec.bank_group * self.geo.banks_per_group + dec.bank
        self._issue(dec.channel, rank, bank_idx, dec.row, dec.column, op.is_write,
                    category, ("flat", addr, op))

    def _scm_demand_column(self, op: _MemOp, addr: int) -> None:
        dec = decompose_address(addr, self.geo, Rank.SCM)
        bank_idx = dec.bank_group * self.geo.banks_per_group + dec.bank
        category = "demand_scm_wr" if op.is_write else "demand_scm_rd"
        if op.req is not None:
            op.req.advance(RequestStage.DEMAND_SCM)
        self._issue(dec.channel, Rank.SCM, bank_idx, dec.row, dec.column, op.is_write,
                    category, ("flat", addr, op))

    def _tag_check(self, chan: _Chan, ctx: _LineCtx) -> None:
        self.lookups["ctc_lookups"] += 1
        word = self.ctc.lookup(ctx.row_index)
        if word is not None:
            self.lookups["ctc_hits"] += 1
            ctx.from_ctc = True
            ctx.entry.ctc_valid = True
            lir = line_in_row_of_set(ctx.set_index, self.geo)
            ctx.entry.ctc_dirty = bool((word >> (4 * lir)) & 0x8)
            self._resolve(chan, ctx)
            return
        cols = probe_columns(self.layout, self.geo)
        ctx.probes_left = len(cols)
        probe_addr = set_to_dram_address(ctx.set_index, 0, self.geo)
        for req_op in ctx.pending:
            if req_op.req is not None:
                req_op.req.advance(RequestStage.PROBE)
        for col in cols:
            self._issue(ctx.channel, Rank.DRAM, ctx.bank_idx, ctx.dram_row, col, False,
                        "probe", ("probe", probe_addr, ctx))

    def _probe_resolved(self, chan: _Chan, ctx: _LineCtx) -> None:
        drains = self.ctc.fill(ctx.row_index, self._row_word(ctx.set_index))
        if drains:
            self._ctc_drain(drains)
        self._resolve(chan, ctx)

    def _resolve(self, chan: _Chan, ctx: _LineCtx) -> None:
        meta = self.meta_store.get(ctx.set_index)
        ctx.resolved = True
        ctx.is_hit = meta is not None and meta.valid and meta.tag == ctx.tag
        if not ctx.is_hit:
            ctx.fill_pending = True
        by_sector: dict[int, bool] = {}
        for op in ctx.pending:
            self._count_lookup(op, ctx.is_hit)
            sector = (op.address >> self.geo.byte_bits) & (self.geo.columns_per_line - 1)
            by_sector[sector] = by_sector.get(sector, False) or op.is_write
            ctx.sector_ops.setdefault(sector, []).append(op)
        ctx.pending = []
        for sector, is_write in by_sector.items():
            self._dispatch_demand(ctx, sector, is_write)

    def _count_lookup(self, op: _MemOp, is_hit: bool) -> None:
        if op.is_write:
            key = "write_hits" if is_hit else "write_misses"
        else:
            key = "read_hits" if is_hit else "read_misses"
        self.lookups[key] += 1

    def _dispatch_demand(self, ctx: _LineCtx, sector: int, is_write: bool) -> None:
        ctx.dispatched_mask |= 1 << sector
        ctx.demand_left += 1
        for op in ctx.sector_ops.get(sector, ()):
            if op.req is not None:
                op.req.advance(
                    RequestStage.DEMAND_DRAM if ctx.is_hit else RequestStage.DEMAND_SCM
                )
        if ctx.is_hit:
            lir = line_in_row_of_set(ctx.set_index, self.geo)
            col = lir * self.geo.columns_per_line + sector
            category = "demand_dram_wr" if is_write else "demand_dram_rd"
            payload = ("demand", set_to_dram_address(ctx.set_index, sector, self.geo), ctx, sector)
            self._issue(ctx.channel, Rank.DRAM, ctx.bank_idx, ctx.dram_row, col, is_write,
                        category, payload)
        else:
            addr = (ctx.line << (self.geo.cacheline_bytes.bit_length() - 1)) \
                | (sector << self.geo.byte_bits)
            dec = decompose_address(addr, self.geo, Rank.SCM)
            bank_idx = dec.bank_group * self.geo.banks_per_group + dec.bank
            category = "demand_scm_wr" if is_write else "demand_scm_rd"
            self._issue(dec.channel, Rank.SCM, bank_idx, dec.row, dec.column, is_write,
                        category, ("demand", addr, ctx, sector))

    def _join_resolved(self, chan: _Chan, ctx: _LineCtx, op: _MemOp, sector: int) -> None:
        self._count_lookup(op, ctx.is_hit)
        if ctx.dispatched_mask & (1 << sector):
            ops = ctx.sector_ops.get(sector)
            if ops is not None:
                ops.append(op)  # rides the in-flight column
            else:
                self._complete_op(op)  # column already returned; data is buffered
            return
        ctx.sector_ops[sector] = [op]
        self._dispatch_demand(ctx, sector, op.is_write)

    # -- fill / bypass ------------------------------------------------------------

    def _resolve_fill(self, chan: _Chan, ctx: _LineCtx) -> None:
        ctx.fill_pending = False
        for ops in ctx.sector_ops.values():
            for op in ops:
                if op.req is not None and op.req.stage < RequestStage.FILL_DECISION:
                    op.req.advance(RequestStage.FILL_DECISION)
        set_index = ctx.set_index
        victim = self.meta_store.get(set_index)
        if victim is None:
            victim = LineMeta()
        line_addr = ctx.line << (self.geo.cacheline_bytes.bit_length() - 1)
        page = page_index(line_addr, self.page_bytes)
        kind = self.policy_kind
        decremented = False

        if kind is bp.PolicyKind.SCM_AWARE:
            score = bp.scm_penalty_score(ctx.entry.num_columns(), ctx.entry.is_write, chan.score)
            bp.observe_penalty(chan.score, score)
            p_level = bp.penalty_level(chan.score, score)
            a_level = bp.dram_affinity_level(score, self.pat.counter(page), chan.score)
            avg_level = bp.average_level(chan.score)
            if ctx.from_ctc and p_level > avg_level and victim.valid:
                # affinity of the victim is not in the tag cache word
                self._affinity_probe(ctx)
            outcome = bp.decide_fill(p_level, avg_level, a_level, victim,
                                     self.pat.p_dec(page), self.rng)
            bp.note_decision(chan.score)
            decision = outcome.decision
            decremented = outcome.decremented
            ctx.entry.affinity_level = min(a_level, AFFINITY_MAX)
        elif kind is bp.PolicyKind.ALWAYS_FILL:
            decision = bp.FillDecision.FILL_REPLACE if victim.valid else bp.FillDecision.FILL_INVALID
        elif kind is bp.PolicyKind.ALWAYS_BYPASS:
            decision = bp.FillDecision.BYPASS_FIRST_LEVEL
        elif kind is bp.PolicyKind.PROBABILISTIC_FILL:
            if self.rng.random() < self.policy.fill_probability:
                decision = bp.FillDecision.FILL_REPLACE if victim.valid else bp.FillDecision.FILL_INVALID
            else:
                decision = bp.FillDecision.BYPASS_FIRST_LEVEL
        else:  # ACCESS_COUNT_THRESHOLD
            self.policy.note_access(page)
            if self.policy.threshold_should_fill(page):
                decision = bp.FillDecision.FILL_REPLACE if victim.valid else bp.FillDecision.FILL_INVALID
            else:
                decision = bp.FillDecision.BYPASS_FIRST_LEVEL

        if decision in (bp.FillDecision.FILL_REPLACE, bp.FillDecision.FILL_INVALID):
            if victim.valid:
                victim_line = victim.tag * self.geo.num_dram_cache_lines + set_index
                if chan.mshr.lookup(victim_line) is not None:
                    # replacing a line with requests in flight would strand them
                    decision = bp.FillDecision.NO_REPLACE
        if decision in (bp.FillDecision.FILL_REPLACE, bp.FillDecision.FILL_INVALID):
            self._apply_fill(ctx, victim)
        self.bypass_counts[_DECISION_KEY[decision]] += 1
        if decremented:
            self._metadata_write(set_index)

    def _affinity_probe(self, ctx: _LineCtx) -> None:
        col = self.geo.columns_per_row - 1
        if self.layout is MetadataLayout.TAD:
            col = line_in_row_of_set(ctx.set_index, self.geo) * self.geo.columns_per_line
        addr = set_to_dram_address(ctx.set_index, 0, self.geo)
        self._issue(ctx.channel, Rank.DRAM, ctx.bank_idx, ctx.dram_row, col, False,
                    "probe", ("fire", addr))

    def _apply_fill(self, ctx: _LineCtx, victim: LineMeta) -> None:
        geo = self.geo
        set_index = ctx.set_index
        line_bits = geo.cacheline_bytes.bit_length() - 1
        if victim.valid and victim.dirty:
            rd_sectors, wr_sectors = evict_plan(set_index, geo)
            for sector in rd_sectors:
                key = (set_index, sector)
                if key in self.dram_tokens:
                    home = cache_index_to_scm_address(set_index, victim.tag, sector, geo)
                    self.scm_tokens[home] = self.dram_tokens[key]
                lir = line_in_row_of_set(set_index, geo)
                self._issue(ctx.channel, Rank.DRAM, ctx.bank_idx, ctx.dram_row,
                            lir * geo.columns_per_line + sector, False,
                            "evict_dram_rd", ("fire", 0))
            for sector in wr_sectors:
                home = cache_index_to_scm_address(set_index, victim.tag, sector, geo)
                dec = decompose_address(home, geo, Rank.SCM)
                bank_idx = dec.bank_group * geo.banks_per_group + dec.bank
                self._issue(dec.channel, Rank.SCM, bank_idx, dec.row, dec.column, True,
                            "evict_scm_wr", ("fire", home))
        if victim.valid:
            for sector in range(geo.columns_per_line):
                self.dram_tokens.pop((set_index, sector), None)

        self.meta_store[set_index] = LineMeta(
            tag=ctx.tag, valid=True, dirty=False,
            affinity=min(ctx.entry.affinity_level, AFFINITY_MAX),
        )
        rd_sectors, wr_sectors = fill_plan(set_index, geo)
        line_base = ctx.line << line_bits
        for sector in rd_sectors:
            addr = line_base | (sector << geo.byte_bits)
            if addr in self.scm_tokens:
                self.dram_tokens[(set_index, sector)] = self.scm_tokens[addr]
            dec = decompose_address(addr, geo, Rank.SCM)
            bank_idx = dec.bank_group * geo.banks_per_group + dec.bank
            self._issue(dec.channel, Rank.SCM, bank_idx, dec.row, dec.column, False,
                        "fill_scm_rd", ("fire", addr))
        lir = line_in_row_of_set(set_index, geo)
        for sector in wr_sectors:
            self._issue(ctx.channel, Rank.DRAM, ctx.bank_idx, ctx.dram_row,
                        lir * geo.columns_per_line + sector, True,
                        "fill_dram_wr", ("fire", 0))
        self._ctc_sync(set_index)

    # -- completion ---------------------------------------------------------------

    def _complete(self, colreq: ColumnRequest) -> None:
        payload = colreq.payload
        tag = payload[0]
        if tag == "demand":
            _, _, ctx, sector = payload
            chan = self.channels[ctx.channel]
            ctx.demand_left -= 1
            for op in ctx.sector_ops.pop(sector, ()):
                self._complete_op(op)
            if ctx.fill_pending:
                self._resolve_fill(chan, ctx)
            self._maybe_release(chan, ctx)
        elif tag == "probe":
            ctx = payload[2]
            chan = self.channels[ctx.channel]
            ctx.probes_left -= 1
            if ctx.probes_left == 0:
                self._probe_resolved(chan, ctx)
                self._maybe_release(chan, ctx)
        elif tag == "flat":
            self._complete_op(payload[2])
        # "fire" completions carry no waiters
        self._pump_injection()

    def _complete_op(self, op: _MemOp) -> None:
        if op.is_write:
            self.outstanding[op.stream] -= 1
            return
        addr = op.address
        value = self.l2.peek(addr)
        if value is None:
            value = self._value_of(addr)
        self._check_value(addr, value)
        for wb_addr, wb_token in self.l2.install_read(addr, value):
            self._spawn_writeback(op.stream, wb_addr, wb_token)
        self._retire(op.req)

    def _maybe_release(self, chan: _Chan, ctx: _LineCtx) -> None:
        if not ctx.resolved or ctx.fill_pending or ctx.probes_left or ctx.demand_left:
            return
        if ctx.is_hit:
            sample = bp.scm_penalty_score(ctx.entry.num_columns(), ctx.entry.is_write, chan.score)
            bp.update_moving_average(chan.score, sample)
        chan.mshr.release(ctx.line)
        del chan.ctxs[ctx.line]
        while chan.retry:
            op = chan.retry.popleft()
            before = len(chan.retry)
            self._enter_memory(op, from_retry=True)
            if len(chan.retry) > before:
                break  # table is full again

    # -- run ------------------------------------------------------------------------

    def run(self) -> StatsReport:
        self._pump_injection()
        heap = self.heap
        while heap:
            time_, _, kind, payload = heapq.heappop(heap)
            self.now = time_
            if kind == _TURN:
                self._turn(payload)
            else:
                self._complete(payload)
        if self._cursor < len(self.trace) or any(self.outstanding.values()):
            raise RuntimeError(
                f"stalled: cursor {self._cursor}/{len(self.trace)}, "
                f"outstanding {dict(self.outstanding)}"
            )
        return self._finalize()

    def _finalize(self) -> StatsReport:
        runtime = self.last_cycle
        wc = self.window_cycles
        total_windows = -(-runtime // wc) if runtime else 0
        refresh_windows = 0
        row_bits = self.geo.row_bytes * 8
        for chan in self.channels:
            while chan.windows_done < total_windows:
                flags = chan.monitor.evaluate_window(chan.windows_done, chan.ledger)
                chan.state.set_throttle(Rank.SCM, flags)
                chan.windows_done += 1
            windows = chan.state.refresh_windows_until(runtime)
            refresh_windows += windows
            chan.ledger.record_refresh(windows, self.geo.banks_per_channel, row_bits)
        self.traffic["refresh"] = refresh_windows

        if self.injected != self.completed:
            raise RuntimeError(f"lost requests: {self.injected} in, {self.completed} out")
        column_total = sum(self.traffic[cat] for cat in TRAFFIC_CATEGORIES)
        if column_total != self.columns_issued:
            raise RuntimeError("traffic categories do not cover all issued columns")

        per_channel = []
        for chan in self.channels:
            util = chan.columns / runtime if runtime else 0.0
            if util > 1.0:
                raise RuntimeError(f"channel {chan.index} over unity utilization")
            per_channel.append(util)
        total_bytes = self.columns_issued * self.geo.column_bytes
        bandwidth = {
            "per_channel": per_channel,
            "mean_utilization": sum(per_channel) / len(per_channel) if per_channel else 0.0,
            "total_gbps": total_bytes / runtime if runtime else 0.0,
        }

        energy = {}
        total_pj = 0.0
        for chan in self.channels:
            for key, val in chan.ledger.totals.items():
                energy[key] = energy.get(key, 0.0) + val
            total_pj += chan.ledger.total_pj
        energy["total"] = total_pj

        peak_w = 0.0
        throttled = 0
        timeline = []
        for chan in self.channels:
            throttled += chan.monitor.throttled_windows
            for wstart, e_pj, p_w, t_act, t_wr in chan.monitor.timeline:
                if p_w > peak_w:
                    peak_w = p_w
                cols = chan.window_columns.get(wstart // wc, 0)
                timeline.append(
                    (wstart, chan.index, cols, cols / wc, e_pj, p_w, int(t_act), int(t_wr))
                )
        timeline.sort(key=lambda row: (row[0], row[1]))
        power = {
            "peak_w": peak_w,
            "throttled_windows": throttled,
            "budget_watts": self.cfg.power.budget_watts,
        }

        traffic = dict(self.traffic)
        traffic["total"] = column_total
        mshr = {
            "full_events": sum(c.mshr.full_events for c in self.channels),
            "peak_occupancy": max(c.mshr.peak_occupancy for c in self.channels),
        }

        cfg_dict = self.cfg.to_dict()
        cfg_dict["timing"]["scm_mode"] = self.scm_mode
        cfg_dict["workload"]["capacity_bytes"] = resolved_workload_capacity(self.cfg)
        return StatsReport(
            config=cfg_dict,
            runtime_cycles=runtime,
            requests_injected=self.injected,
            requests_completed=self.completed,
            traffic=traffic,
            lookups=dict(self.lookups),
            bypass=dict(self.bypass_counts),
            bandwidth=bandwidth,
            energy_pj=energy,
            power=power,
            mshr=mshr,
            timeline=timeline,
        )


def run_simulation(config: ExperimentConfig, trace: Trace | None = None) -> StatsReport:
    if trace is None:
        trace = build_trace(config)
    return Simulator(config, trace).run()
