"""Trace-driven simulator of a DRAM-cached storage-class memory stack."""

from .config import ConfigError, ExperimentConfig, load_config
from .engine import RequestStage, SimMode, Simulator, build_trace, run_simulation
from .stats import StatsReport, headline_metrics, load_report

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "RequestStage",
    "SimMode",
    "Simulator",
    "StatsReport",
    "build_trace",
    "headline_metrics",
    "load_config",
    "load_report",
    "run_simulation",
    "__version__",
]
