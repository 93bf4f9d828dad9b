"""Run statistics, report serialization, and the per-window time series.

The JSON report embeds the resolved configuration and is byte-identical
across reruns of the same (config, seed): keys are sorted, no timestamps
or host details are recorded. Column counts in `traffic` cover every data
bus slot exactly once; `refresh` counts rank blackout windows, not
columns, and is excluded from the column total.
"""

import json
from dataclasses import dataclass, field

SCHEMA_VERSION = 1

TRAFFIC_CATEGORIES = (
    "demand_dram_rd",
    "demand_dram_wr",
    "demand_scm_rd",
    "demand_scm_wr",
    "probe",
    "metadata_writeback",
    "fill_scm_rd",
    "fill_dram_wr",
    "evict_dram_rd",
    "evict_scm_wr",
)

TIMESERIES_COLUMNS = (
    "window_start",
    "channel",
    "columns",
    "utilization",
    "energy_pj",
    "power_w",
    "throttle_act",
    "throttle_wr",
)


def _rate(hits: int, total: int) -> float | None:
    return hits / total if total else None


@dataclass
class StatsReport:
    config: dict
    runtime_cycles: int
    requests_injected: int
    requests_completed: int
    traffic: dict
    lookups: dict
    bypass: dict
    bandwidth: dict
    energy_pj: dict
    power: dict
    mshr: dict
    timeline: list = field(default_factory=list, repr=False)
    schema_version: int = SCHEMA_VERSION

    @property
    def hit_rates(self) -> dict:
        lk = self.lookups
        read_total = lk["read_hits"] + lk["read_misses"]
        write_total = lk["write_hits"] + lk["write_misses"]
        return {
            "dram_cache": _rate(lk["read_hits"] + lk["write_hits"], read_total + write_total),
            "dram_cache_read": _rate(lk["read_hits"], read_total),
            "dram_cache_write": _rate(lk["write_hits"], write_total),
            "l2": _rate(lk["l2_hits"], lk["l2_accesses"]),
            "ctc": _rate(lk["ctc_hits"], lk["ctc_lookups"]),
        }

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "config": self.config,
            "stats": {
                "runtime_cycles": self.runtime_cycles,
                "requests": {
                    "injected": self.requests_injected,
                    "completed": self.requests_completed,
                },
                "traffic_columns": self.traffic,
                "lookups": self.lookups,
                "hit_rates": self.hit_rates,
                "bypass": self.bypass,
                "bandwidth": self.bandwidth,
                "energy_pj": self.energy_pj,
                "power": self.power,
                "mshr": self.mshr,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def write_json(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(self.to_json())

    def write_timeseries(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="") as handle:
            handle.write(",".join(TIMESERIES_COLUMNS) + "\n")
            for row in self.timeline:
                handle.write(",".join(str(v) for v in row) + "\n")


def load_report(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as handle:
        data = json.load(handle)
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"{path}: schema_version {version!r} unsupported (want {SCHEMA_VERSION})")
    return data


def headline_metrics(report: dict) -> dict:
    """Flat metric dict used by the comparison table and sweep CSV."""
    stats = report["stats"]
    traffic = stats["traffic_columns"]
    rates = stats["hit_rates"]
    return {
        "runtime_cycles": stats["runtime_cycles"],
        "total_columns": traffic["total"],
        "demand_scm_wr": traffic["demand_scm_wr"],
        "evict_scm_wr": traffic["evict_scm_wr"],
        "probe": traffic["probe"],
        "dram_hit_rate": rates["dram_cache"],
        "dram_write_hit_rate": rates["dram_cache_write"],
        "l2_hit_rate": rates["l2"],
        "ctc_hit_rate": rates["ctc"],
        "mean_utilization": stats["bandwidth"]["mean_utilization"],
        "total_gbps": stats["bandwidth"]["total_gbps"],
        "total_energy_pj": stats["energy_pj"]["total"],
        "peak_power_w": stats["power"]["peak_w"],
    }
