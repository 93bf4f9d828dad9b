"""Experiment configuration: sections, strict validation, dotted overrides.

Config files are JSON with one object per section. Unknown sections or
keys are rejected by name so typos fail loudly before cycle 0. Command
line overrides use dotted paths ("timing.scm_mode=slc"); values parse as
JSON first and fall back to bare strings.
"""

import dataclasses
import json
from dataclasses import dataclass, field, fields

from .geometry import DeviceGeometry
from .l2cache import L2Config
from .power import DEFAULT_HYSTERESIS, DEFAULT_WINDOW_CYCLES
from .timing import DRAM_TIMING, ScmMode, TimingParams, scm_timing
from .workload import PATTERN_KINDS, PatternSpec

SIM_MODES = ("cache", "flat")
POLICY_KINDS = ("scm_aware", "always_fill", "always_bypass", "probabilistic_fill", "access_count_threshold")
METADATA_LAYOUTS = ("amil", "tad")
SCM_MODES = ("auto", "slc", "mlc", "tlc")

_TIMING_KEYS = ("tCL", "tRCD", "tRAS", "tWR", "tRP", "tBL")


class ConfigError(ValueError):
    pass


@dataclass
class GeometrySection:
    channels: int = 8
    bank_groups_per_channel: int = 4
    banks_per_group: int = 4
    row_bytes: int = 2048
    column_bytes: int = 32
    cacheline_bytes: int = 256
    rows_per_bank_dram: int = 64
    rows_per_bank_scm: int = 256

    def build(self) -> DeviceGeometry:
        return DeviceGeometry(**dataclasses.asdict(self))


@dataclass
class TimingSection:
    scm_mode: str = "auto"
    refresh_enabled: bool = True
    refresh_interval: int = 3900
    refresh_duration: int = 350
    dram_overrides: dict = field(default_factory=dict)
    scm_overrides: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.scm_mode not in SCM_MODES:
            raise ConfigError(f"timing.scm_mode must be one of {SCM_MODES}, got {self.scm_mode!r}")
        for name, overrides in (("dram_overrides", self.dram_overrides), ("scm_overrides", self.scm_overrides)):
            for key in overrides:
                if key not in _TIMING_KEYS:
                    raise ConfigError(f"timing.{name}: unknown parameter {key!r}")

    def resolve(self, flat_mode: bool) -> tuple[TimingParams, TimingParams, str]:
        """(dram params, scm params, resolved scm mode name)."""
        interval = self.refresh_interval if self.refresh_enabled else 0
        duration = self.refresh_duration if self.refresh_enabled else 0
        dram = dataclasses.replace(
            DRAM_TIMING,
            refresh_interval=interval,
            refresh_duration=duration,
            **self.dram_overrides,
        )
        mode = self.scm_mode
        if mode == "auto":
            # the flat organization runs the SCM rank in its fast mode
            mode = "slc" if flat_mode else "mlc"
        scm = dataclasses.replace(scm_timing(ScmMode(mode)), **self.scm_overrides)
        return dram, scm, mode


@dataclass
class CacheSection:
    metadata_layout: str = "amil"
    mshr_entries: int = 128

    def validate(self) -> None:
        if self.metadata_layout not in METADATA_LAYOUTS:
            raise ConfigError(f"cache.metadata_layout must be one of {METADATA_LAYOUTS}")
        if self.mshr_entries < 1:
            raise ConfigError("cache.mshr_entries must be at least 1")


@dataclass
class PolicySection:
    kind: str = "scm_aware"
    n_levels: int = 4
    update_period: int = 100
    avg_weight: float = 0.01
    fill_probability: float = 0.9
    access_threshold: int = 2
    counters_enabled: bool = False
    page_bytes: int = 2 << 20

    def validate(self) -> None:
        if self.kind not in POLICY_KINDS:
            raise ConfigError(f"policy.kind must be one of {POLICY_KINDS}, got {self.kind!r}")
        if self.n_levels < 2:
            raise ConfigError("policy.n_levels must be at least 2")
        if self.n_levels > 4:
            raise ConfigError("policy.n_levels above 4 overflows the stored affinity")
        if self.update_period < 1:
            raise ConfigError("policy.update_period must be positive")
        if not 0.0 < self.avg_weight <= 1.0:
            raise ConfigError("policy.avg_weight must be in (0, 1]")
        if not 0.0 <= self.fill_probability <= 1.0:
            raise ConfigError("policy.fill_probability must be in [0, 1]")
        if self.access_threshold < 0:
            raise ConfigError("policy.access_threshold must be non-negative")


@dataclass
class L2Section:
    capacity_bytes: int = 8 << 20
    total_ways: int = 16
    ctc_l2_ways: int = 4
    line_bytes: int = 128
    sector_bytes: int = 32

    def build(self, flat_mode: bool) -> L2Config:
        ways = 0 if flat_mode else self.ctc_l2_ways
        return L2Config(
            capacity_bytes=self.capacity_bytes,
            total_ways=self.total_ways,
            ctc_l2_ways=ways,
            line_bytes=self.line_bytes,
            sector_bytes=self.sector_bytes,
        )


@dataclass
class PowerSection:
    budget_watts: float | None = None
    window_cycles: int = DEFAULT_WINDOW_CYCLES
    hysteresis: float = DEFAULT_HYSTERESIS

    def validate(self) -> None:
        if self.window_cycles < 1:
            raise ConfigError("power.window_cycles must be positive")
        if not 0.0 <= self.hysteresis < 1.0:
            raise ConfigError("power.hysteresis must be in [0, 1)")
        if self.budget_watts is not None and self.budget_watts <= 0:
            raise ConfigError("power.budget_watts must be positive when set")


@dataclass
class WorkloadSection:
    pattern: str = "streaming_read"
    length: int = 100_000
    seed: int | None = None
    capacity_bytes: int | None = None
    offset: int = 0
    write_fraction: float = 0.5
    alpha: float = 1.2
    stride: int = 256
    hot_fraction: float = 0.25
    trace_path: str | None = None

    def validate(self) -> None:
        if self.trace_path is None and self.pattern not in PATTERN_KINDS:
            raise ConfigError(f"workload.pattern must be one of {PATTERN_KINDS}, got {self.pattern!r}")
        if self.length < 1:
            raise ConfigError("workload.length must be positive")
        if self.offset < 0:
            raise ConfigError("workload.offset must be non-negative")

    def spec(self) -> PatternSpec:
        return PatternSpec(
            kind=self.pattern,
            write_fraction=self.write_fraction,
            alpha=self.alpha,
            stride=self.stride,
            hot_fraction=self.hot_fraction,
        )


@dataclass
class SimSection:
    mode: str = "cache"
    seed: int = 1234
    stream_window: int = 64
    shadow_check: bool = True

    def validate(self) -> None:
        if self.mode not in SIM_MODES:
            raise ConfigError(f"sim.mode must be one of {SIM_MODES}, got {self.mode!r}")
        if self.stream_window < 1:
            raise ConfigError("sim.stream_window must be positive")


_SECTIONS = {
    "geometry": GeometrySection,
    "timing": TimingSection,
    "cache": CacheSection,
    "policy": PolicySection,
    "l2": L2Section,
    "power": PowerSection,
    "workload": WorkloadSection,
    "sim": SimSection,
}


@dataclass
class ExperimentConfig:
    geometry: GeometrySection = field(default_factory=GeometrySection)
    timing: TimingSection = field(default_factory=TimingSection)
    cache: CacheSection = field(default_factory=CacheSection)
    policy: PolicySection = field(default_factory=PolicySection)
    l2: L2Section = field(default_factory=L2Section)
    power: PowerSection = field(default_factory=PowerSection)
    workload: WorkloadSection = field(default_factory=WorkloadSection)
    sim: SimSection = field(default_factory=SimSection)

    def validate(self) -> "ExperimentConfig":
        self.timing.validate()
        self.cache.validate()
        self.policy.validate()
        self.power.validate()
        self.workload.validate()
        self.sim.validate()
        self.geometry.build()
        self.l2.build(self.sim.mode == "flat")
        return self

    def to_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in _SECTIONS}

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config root must be an object")
        cfg = cls()
        for section, values in data.items():
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section {section!r}")
            if not isinstance(values, dict):
                raise ConfigError(f"section {section!r} must be an object")
            target = getattr(cfg, section)
            known = {f.name for f in fields(target)}
            for key, value in values.items():
                if key not in known:
                    raise ConfigError(f"unknown key {section}.{key}")
                setattr(target, key, value)
        return cfg.validate()

    def apply_overrides(self, overrides: list[str]) -> "ExperimentConfig":
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} must look like section.key=value")
            path, raw = item.split("=", 1)
            parts = path.split(".")
            if len(parts) != 2:
                raise ConfigError(f"override path {path!r} must be section.key")
            section, key = parts
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section {section!r}")
            target = getattr(self, section)
            if key not in {f.name for f in fields(target)}:
                raise ConfigError(f"unknown key {section}.{key}")
            setattr(target, key, _parse_value(raw))
        return self.validate()


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        lowered = raw.strip().lower()
        if lowered in ("true", "false"):
            return lowered == "true"
        if lowered in ("none", "null"):
            return None
        return raw


def load_config(path: str | None, overrides: list[str] | None = None) -> ExperimentConfig:
    if path is None:
        cfg = ExperimentConfig().validate()
    else:
        with open(path, "r", encoding="utf-8") as handle:
            try:
                data = json.load(handle)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        cfg = ExperimentConfig.from_dict(data)
    if overrides:
        cfg.apply_overrides(overrides)
    return cfg
