"""Whole-system acceptance checks.

Each numbered test pins one behavior end to end and prints a single
PASS line on success (pytest -v adds the FAILED line otherwise). The
heavyweight simulation points are cached so tests can share runs.
"""

import math
import random

import numpy as np

from hmsim import run_simulation
from hmsim.bypass import (
    FillDecision,
    ScorePipelineState,
    decide_fill,
    scm_penalty_score,
)
from hmsim.config import ExperimentConfig
from hmsim.dram_cache import (
    LineMeta,
    MetadataLayout,
    MshrEntry,
    MshrOutcome,
    MshrTable,
    amil_decode,
    amil_encode,
    amil_word_bits,
    pack_mshr_entry,
    probe_columns,
    unpack_mshr_entry,
)
from hmsim.geometry import DeviceGeometry, DramCacheIndex, is_metadata_column
from hmsim.power import EnergyLedger, EnergyParams
from hmsim.timing import DRAM_TIMING, SCM_MLC_TIMING, ChannelState, Rank
from hmsim.workload import Trace

GEO = DeviceGeometry()
MIB = 1 << 20

_CACHE = {}


def run_point(_trace=None, _trace_key=None, **overrides):
    key = (_trace_key, tuple(sorted(overrides.items())))
    if key not in _CACHE:
        cfg = ExperimentConfig()
        cfg.apply_overrides([f"{k}={v}" for k, v in overrides.items()])
        _CACHE[key] = run_simulation(cfg, trace=_trace)
    return _CACHE[key]


def stats(report):
    return report.to_dict()["stats"]


def ok(line):
    print(f"PASS  {line}")


# 1 ---------------------------------------------------------------------------

def test_c01_latency_anchors():
    ch = ChannelState(GEO, DRAM_TIMING, SCM_MLC_TIMING)
    ch.service_parts(Rank.DRAM, 0, 1, 0, False, 0)
    done, _, _ = ch.service_parts(Rank.DRAM, 0, 2, 0, False, 500)
    assert done - 500 == 43
    done, _, _ = ch.service_parts(Rank.DRAM, 0, 2, 1, False, 600)
    assert done - 600 == 15
    ch2 = ChannelState(GEO, DRAM_TIMING, SCM_MLC_TIMING)
    ch2.service_parts(Rank.SCM, 0, 1, 0, False, 0)
    done, _, _ = ch2.service_parts(Rank.SCM, 0, 2, 0, False, 500)
    assert done - 500 == 149
    ok("latency anchors: conflict 43 (DRAM) / 149 (SCM-MLC), row hit 15")


# 2 ---------------------------------------------------------------------------

def test_c02_peak_streaming_bandwidth():
    st = stats(run_point(**{
        "sim.mode": "flat",
        "sim.stream_window": 2048,
        "timing.refresh_enabled": "false",
        "workload.pattern": "streaming_read",
        "workload.length": 1_000_000,
        "workload.capacity_bytes": 16 * MIB,
    }))
    for util in st["bandwidth"]["per_channel"]:
        assert 0.95 <= util <= 1.0
    assert st["bandwidth"]["total_gbps"] <= 256.0
    ok(f"peak streaming bandwidth: {st['bandwidth']['total_gbps']:.2f} GB/s, "
       f"min channel {min(st['bandwidth']['per_channel']):.4f} of bus")


# 3 ---------------------------------------------------------------------------

def _util_point(pattern, device):
    overrides = {
        "sim.mode": "flat",
        "sim.stream_window": 2048,
        "workload.pattern": pattern,
        "workload.length": 1_000_000,
        "workload.capacity_bytes": 16 * MIB,
    }
    if device != "dram":
        overrides["workload.offset"] = 16 * MIB
        overrides["timing.scm_mode"] = device
    return stats(run_point(**overrides))["bandwidth"]["mean_utilization"]


def test_c03_device_utilization_ordering():
    dram_sr = _util_point("streaming_read", "dram")
    slc_sr = _util_point("streaming_read", "slc")
    mlc_sr = _util_point("streaming_read", "mlc")
    dram_sw = _util_point("streaming_write", "dram")
    mlc_sw = _util_point("streaming_write", "mlc")
    dram_rr = _util_point("random_read", "dram")
    mlc_rr = _util_point("random_read", "mlc")

    assert slc_sr >= dram_sr
    assert mlc_sr >= 0.85 * dram_sr
    assert mlc_sw < mlc_sr
    assert mlc_sw < dram_sw
    assert dram_rr < dram_sr
    assert mlc_rr < mlc_sr
    ok("device utilization ordering: "
       f"reads dram/slc/mlc {dram_sr:.3f}/{slc_sr:.3f}/{mlc_sr:.3f}, "
       f"writes dram/mlc {dram_sw:.3f}/{mlc_sw:.3f}, "
       f"random dram/mlc {dram_rr:.3f}/{mlc_rr:.3f}")


# 4 ---------------------------------------------------------------------------

def test_c04_penalty_score_units():
    st = ScorePipelineState.from_timing(DRAM_TIMING, SCM_MLC_TIMING)
    assert scm_penalty_score(8, False, st) == 13.25
    assert scm_penalty_score(1, True, st) == 1090.0
    equal = ScorePipelineState.from_timing(DRAM_TIMING, DRAM_TIMING)
    assert scm_penalty_score(8, False, equal) == 0.0
    assert scm_penalty_score(1, True, equal) == 0.0
    ok("penalty score units: 13.25 / 1090.0 / 0.0 exact")


# 5 ---------------------------------------------------------------------------

def test_c05_metadata_word_layout():
    assert amil_word_bits(GEO.lines_per_row) == 48
    rng = random.Random(7)
    for _ in range(100_000):
        word = rng.getrandbits(48)
        assert amil_encode(amil_decode(word)) == word
    uncacheable = [
        (lir, sector)
        for lir in range(GEO.lines_per_row)
        for sector in range(GEO.columns_per_line)
        if is_metadata_column(DramCacheIndex(set=lir << 7, tag=0, sector=sector), GEO)
    ]
    assert uncacheable == [(7, 7)]
    assert len(probe_columns(MetadataLayout.AMIL, GEO)) == 1
    assert len(probe_columns(MetadataLayout.TAD, GEO)) == 8
    ok("metadata word layout: 48-bit word roundtrips, 1/64 uncacheable, "
       "probe cost 1 vs 8 columns")


# 6 ---------------------------------------------------------------------------

class _FixedDraw:
    def __init__(self, value):
        self.value = value

    def random(self):
        return self.value


def _reference_decision(p, avg, a, victim_valid, victim_aff, p_dec, draw):
    """Independent restatement of the two-stage rule."""
    if p <= avg:
        return "bypass_first_level", False
    if not victim_valid:
        return "fill_invalid", False
    if a > victim_aff:
        return "fill_replace", False
    if victim_aff > 0 and draw < p_dec:
        return "no_replace", True
    return "no_replace", False


def test_c06_fill_decision_properties():
    # constructed corner cases
    v = LineMeta(tag=1, valid=True, dirty=False, affinity=2)
    assert decide_fill(1, 2, 3, v, 1.0, _FixedDraw(0.0)).decision is \
        FillDecision.BYPASS_FIRST_LEVEL
    assert decide_fill(3, 0, 0, LineMeta(), 1.0, _FixedDraw(0.0)).decision is \
        FillDecision.FILL_INVALID
    assert decide_fill(3, 0, 3, v, 1.0, _FixedDraw(0.99)).decision is \
        FillDecision.FILL_REPLACE

    # randomized agreement with the reference oracle
    rng = random.Random(11)
    for _ in range(10_000):
        p, avg, a = rng.randrange(4), rng.randrange(4), rng.randrange(4)
        valid = rng.random() < 0.5
        aff = rng.randrange(4)
        p_dec = rng.choice([0.0, 0.25, 0.5, 0.75, 1.0])
        draw = rng.random()
        victim = LineMeta(tag=0, valid=valid, dirty=False, affinity=aff)
        got = decide_fill(p, avg, a, victim, p_dec, _FixedDraw(draw))
        want_decision, want_dec = _reference_decision(
            p, avg, a, valid, aff, p_dec, draw)
        assert got.decision.value == want_decision
        assert got.decremented == want_dec
        assert victim.affinity == aff - (1 if want_dec else 0)

    # decrement frequency within 3 sigma of p_dec
    n, p_dec = 10_000, 0.3
    nprng = np.random.default_rng(5)
    hits = 0
    for _ in range(n):
        victim = LineMeta(tag=0, valid=True, dirty=False, affinity=2)
        if decide_fill(3, 0, 1, victim, p_dec, nprng).decremented:
            hits += 1
    sigma = math.sqrt(n * p_dec * (1 - p_dec))
    assert abs(hits - n * p_dec) <= 3 * sigma
    ok(f"fill decision properties: oracle agreement x10^4, "
       f"decrements {hits}/{n} within 3 sigma of 0.3")


# 7 ---------------------------------------------------------------------------

def test_c07_write_filtering():
    # write-majority mix; read hits keep the moving average below the top
    # level so hot write misses pass the first-level filter and fill. The
    # small L2 keeps writebacks single-sector, so first-touch bursts stay
    # short and the steady state dominates.
    common = {
        "workload.pattern": "zipf_hot_cold",
        "workload.length": 600_000,
        "workload.write_fraction": 0.6,
        "workload.hot_fraction": 0.1,
        "workload.alpha": 1.4,
        "l2.capacity_bytes": 8 << 10,
    }
    aware = stats(run_point(**common))
    bypass = stats(run_point(**common, **{"policy.kind": "always_bypass"}))

    lk = aware["lookups"]
    hit_rate = lk["write_hits"] / (lk["write_hits"] + lk["write_misses"])
    assert hit_rate >= 0.90

    def scm_writes(st):
        tc = st["traffic_columns"]
        return tc["demand_scm_wr"] + tc["evict_scm_wr"]

    assert scm_writes(aware) <= 0.5 * scm_writes(bypass)
    ok(f"write filtering: write hit rate {hit_rate:.3f}, "
       f"SCM write columns {scm_writes(aware)} vs {scm_writes(bypass)} bypassed")


# 8 ---------------------------------------------------------------------------

def _coverage_trace(passes):
    addrs = [line * 256 for line in range(4096)] * passes
    n = len(addrs)
    return Trace([0] * n, [False] * n, addrs, [32] * n)


def test_c08_tag_cache_effectiveness():
    single = stats(run_point(_trace=_coverage_trace(1), _trace_key="cover1"))
    double = stats(run_point(_trace=_coverage_trace(2), _trace_key="cover2"))
    assert single["traffic_columns"]["probe"] > 0
    assert double["traffic_columns"]["probe"] == single["traffic_columns"]["probe"]

    pressured = {
        "l2.capacity_bytes": 128 << 10,
        "workload.pattern": "random_read",
        "workload.length": 100_000,
        "workload.capacity_bytes": 16 * MIB,
        "sim.seed": 21,
    }
    rates = []
    for ways in (4, 3, 2, 1):
        st = stats(run_point(**pressured, **{"l2.ctc_l2_ways": ways}))
        rates.append(st["lookups"]["ctc_hits"] / st["lookups"]["ctc_lookups"])
    assert all(hi >= lo for hi, lo in zip(rates, rates[1:]))

    amil = stats(run_point(**pressured, **{"l2.ctc_l2_ways": 1}))
    tad = stats(run_point(**pressured, **{
        "l2.ctc_l2_ways": 1, "cache.metadata_layout": "tad"}))
    assert tad["traffic_columns"]["probe"] > amil["traffic_columns"]["probe"]
    ok("tag cache effectiveness: zero probes after warmup, hit rate "
       f"{' >= '.join(f'{r:.3f}' for r in rates)} over 4..1 ways, "
       f"probes tad {tad['traffic_columns']['probe']} > "
       f"amil {amil['traffic_columns']['probe']}")


# 9 ---------------------------------------------------------------------------

def test_c09_energy_arithmetic():
    ledger = EnergyLedger(EnergyParams())
    ledger.record_energy("act", Rank.SCM, 2048 * 8)
    ledger.record_energy("rd", Rank.SCM, 256)
    ledger.record_energy("rd", Rank.SCM, 256)
    ledger.record_energy("pre", Rank.SCM, 256)
    expected = 2.47 * 16384
    expected += 0.93 * 256
    expected += 0.93 * 256
    expected += 16.82 * 256
    assert ledger.total_pj == expected
    ok(f"energy arithmetic: activate + 2 reads + dirty precharge = "
       f"{expected} pJ exact")


# 10 --------------------------------------------------------------------------

# Long enough that the eviction phase spans ~12 full feedback windows;
# anything much shorter finishes before the throttle loop can settle.
_THROTTLE_BASE = {
    "sim.mode": "flat",
    "sim.stream_window": 2048,
    "timing.refresh_enabled": "false",
    "workload.pattern": "streaming_write",
    "workload.length": 1_200_000,
    "workload.offset": 16 * MIB,
    "workload.capacity_bytes": 16 * MIB,
}


def _window_powers(report, throttled):
    """Per-channel window powers, keeping only windows whose predecessor
    already carried the requested throttle state. A row's flags are the
    outcome of the evaluation that closed it, so the predecessor's flags
    are what governed scheduling inside the current window; requiring
    both rows settles out the transition. The last window of each channel
    is dropped: it is cut short by the end of the run but still divided
    by the full window length."""
    rows = {}
    for wstart, channel, _cols, _util, _epj, power, act, _wr in report.timeline:
        rows.setdefault(channel, []).append((wstart, power, bool(act)))
    kept = []
    for series in rows.values():
        series.sort()
        series = series[:-1]
        for prev, cur in zip(series, series[1:]):
            if prev[2] == throttled and cur[2] == throttled:
                kept.append(cur[1])
    return kept


def test_c10_power_throttle_response():
    free = run_point(**_THROTTLE_BASE)
    free_powers = _window_powers(free, throttled=False)
    assert free_powers
    p0 = sum(free_powers) / len(free_powers)

    probe_run = run_point(**_THROTTLE_BASE,
                          **{"power.budget_watts": round(0.7 * p0, 6)})
    throttled_powers = _window_powers(probe_run, throttled=True)
    assert probe_run.power["throttled_windows"] > 0
    assert throttled_powers
    p_th = sum(throttled_powers) / len(throttled_powers)
    assert p_th < 0.97 * p0

    budget = round(1.02 * p_th, 6)
    steady_run = run_point(**_THROTTLE_BASE, **{"power.budget_watts": budget})
    steady = _window_powers(steady_run, throttled=True)
    assert steady_run.power["throttled_windows"] > 0
    assert steady
    assert all(p < p0 for p in steady)
    assert all(p <= budget * 1.1 for p in steady)
    ok(f"power throttle response: engages below {0.7 * p0:.3f} W, "
       f"power {p0:.3f} -> {p_th:.3f} W, steady within 1.1x budget")


# 11 --------------------------------------------------------------------------

def test_c11_miss_table_packing():
    rng = random.Random(3)
    for _ in range(2000):
        entry = MshrEntry(
            line_address=rng.getrandbits(37),
            column_mask=rng.getrandbits(8),
            entry_valid=bool(rng.getrandbits(1)),
            is_write=bool(rng.getrandbits(1)),
            affinity_level=rng.getrandbits(2),
            ctc_valid=bool(rng.getrandbits(1)),
            ctc_dirty=bool(rng.getrandbits(1)),
        )
        packed = pack_mshr_entry(entry)
        assert 0 <= packed < (1 << 51)
        assert unpack_mshr_entry(packed) == entry

    table = MshrTable(capacity=128)
    for line in range(128):
        outcome, _ = table.insert_or_merge(line, 0, False)
        assert outcome is MshrOutcome.NEW_MISS
    outcome, entry = table.insert_or_merge(999, 0, False)
    assert outcome is MshrOutcome.FULL and entry is None
    ok("miss table packing: 51-bit roundtrip x2000, 129th line reports full")


# 12 --------------------------------------------------------------------------

def test_c12_deterministic_reports():
    cfg = {
        "workload.pattern": "zipf_hot_cold",
        "workload.length": 50_000,
        "workload.write_fraction": 0.6,
        "sim.seed": 42,
    }

    def one_run():
        config = ExperimentConfig()
        config.apply_overrides([f"{k}={v}" for k, v in cfg.items()])
        return run_simulation(config).to_json()

    first, second = one_run(), one_run()
    assert first == second
    ok(f"deterministic reports: rerun JSON byte-identical ({len(first)} bytes)")
