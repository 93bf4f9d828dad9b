"""Command-line entry points: run, sweep, report, validate-trace, gen-trace."""

import argparse
import itertools
import multiprocessing
import os
import sys

from .config import ConfigError, ExperimentConfig, load_config
from .engine import run_simulation
from .stats import headline_metrics, load_report
from .workload import PATTERN_KINDS, generate, load_trace, serialize_trace

CONFIG_DIR_ENV = "HMSIM_CONFIG_DIR"


def _resolve_config_path(path: str | None) -> str | None:
    """Fall back to $HMSIM_CONFIG_DIR for bare relative names."""
    if path is None or os.path.exists(path) or os.path.isabs(path):
        return path
    base = os.environ.get(CONFIG_DIR_ENV)
    if base:
        candidate = os.path.join(base, path)
        if os.path.exists(candidate):
            return candidate
    return path


def _load(args) -> ExperimentConfig:
    return load_config(_resolve_config_path(args.config), args.set or [])


def _fmt(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def cmd_run(args) -> int:
    config = _load(args)
    report = run_simulation(config)
    os.makedirs(args.out_dir, exist_ok=True)
    json_path = os.path.join(args.out_dir, "report.json")
    csv_path = os.path.join(args.out_dir, "timeseries.csv")
    report.write_json(json_path)
    report.write_timeseries(csv_path)
    for key, value in headline_metrics(report.to_dict()).items():
        print(f"{key}: {_fmt(value)}")
    print(f"wrote {json_path} and {csv_path}")
    return 0


def _parse_axis(text: str) -> tuple[str, list[str]]:
    key, sep, values = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"axis {text!r} is not key=v1,v2,...")
    parts = [v for v in values.split(",") if v != ""]
    if not parts:
        raise ConfigError(f"axis {key!r} has no values")
    return key, parts


def _sweep_point(job):
    base, assignment, json_path = job
    config = ExperimentConfig.from_dict(base)
    config.apply_overrides([f"{k}={v}" for k, v in assignment])
    report = run_simulation(config)
    report.write_json(json_path)
    return headline_metrics(report.to_dict())


def cmd_sweep(args) -> int:
    config = _load(args)
    axes = [_parse_axis(text) for text in args.axis]
    keys = [key for key, _ in axes]
    if len(set(keys)) != len(keys):
        raise ConfigError("duplicate sweep axes")
    base = config.to_dict()
    os.makedirs(args.out_dir, exist_ok=True)

    jobs = []
    assignments = []
    for point, combo in enumerate(itertools.product(*(vals for _, vals in axes))):
        assignment = list(zip(keys, combo))
        # fail fast on a bad axis key before any worker starts
        ExperimentConfig.from_dict(base).apply_overrides(
            [f"{k}={v}" for k, v in assignment]
        )
        json_path = os.path.join(args.out_dir, f"point_{point:03d}.json")
        jobs.append((base, assignment, json_path))
        assignments.append(assignment)

    if args.jobs > 1 and len(jobs) > 1:
        with multiprocessing.Pool(processes=args.jobs) as pool:
            results = pool.map(_sweep_point, jobs)
    else:
        results = [_sweep_point(job) for job in jobs]

    csv_path = os.path.join(args.out_dir, "sweep.csv")
    metric_keys = list(results[0].keys())
    with open(csv_path, "w", encoding="utf-8", newline="") as handle:
        handle.write(",".join(["point", *keys, *metric_keys]) + "\n")
        for point, (assignment, metrics) in enumerate(zip(assignments, results)):
            row = [f"point_{point:03d}", *(v for _, v in assignment)]
            row.extend(_fmt(metrics[k]) for k in metric_keys)
            handle.write(",".join(row) + "\n")
    print(f"{len(jobs)} points -> {csv_path}")
    return 0


def cmd_report(args) -> int:
    reports = [load_report(path) for path in args.report]
    names = [os.path.basename(path) for path in args.report]
    rows: list[tuple[str, list]] = []
    metrics = [headline_metrics(r) for r in reports]
    for key in metrics[0]:
        rows.append((key, [m[key] for m in metrics]))
    for section, label in (("traffic_columns", "traffic"), ("bypass", "bypass")):
        seen = sorted({k for r in reports for k in r["stats"][section]})
        for key in seen:
            rows.append((f"{label}.{key}", [r["stats"][section].get(key) for r in reports]))

    headers = ["metric", *names]
    if len(reports) == 2:
        headers.append("delta")
        for i, (key, values) in enumerate(rows):
            a, b = values
            delta = b - a if isinstance(a, (int, float)) and isinstance(b, (int, float)) else None
            rows[i] = (key, [*values, delta])

    table = [headers] + [[key, *map(_fmt, values)] for key, values in rows]
    widths = [max(len(row[col]) for row in table) for col in range(len(headers))]
    for row in table:
        line = "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row))
        print(line.rstrip())
    return 0


def cmd_validate_trace(args) -> int:
    trace = load_trace(args.trace)
    print(f"{args.trace}: {len(trace)} requests ok")
    return 0


def cmd_gen_trace(args) -> int:
    from .workload import PatternSpec

    spec = PatternSpec(
        kind=args.pattern,
        write_fraction=args.write_fraction,
        alpha=args.alpha,
        stride=args.stride,
        hot_fraction=args.hot_fraction,
    )
    trace = generate(
        spec,
        seed=args.seed,
        length=args.length,
        capacity_bytes=args.capacity_bytes,
        offset=args.offset,
    )
    serialize_trace(trace, args.out)
    print(f"wrote {len(trace)} requests to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hmsim")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one simulation")
    run.add_argument("-c", "--config", help="config JSON (searched in $%s)" % CONFIG_DIR_ENV)
    run.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    run.add_argument("-o", "--out-dir", default=".")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run a Cartesian parameter sweep")
    sweep.add_argument("-c", "--config", help="base config JSON")
    sweep.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    sweep.add_argument("--axis", action="append", required=True,
                       metavar="SECTION.KEY=V1,V2,...")
    sweep.add_argument("-o", "--out-dir", default="sweep_out")
    sweep.add_argument("-j", "--jobs", type=int, default=os.cpu_count() or 1)
    sweep.set_defaults(func=cmd_sweep)

    rep = sub.add_parser("report", help="tabulate one or more report files")
    rep.add_argument("report", nargs="+")
    rep.set_defaults(func=cmd_report)

    val = sub.add_parser("validate-trace", help="parse a trace file and report errors")
    val.add_argument("trace")
    val.set_defaults(func=cmd_validate_trace)

    gen = sub.add_parser("gen-trace", help="write a synthetic trace file")
    gen.add_argument("--pattern", choices=PATTERN_KINDS, default="streaming_read")
    gen.add_argument("--length", type=int, default=100_000)
    gen.add_argument("--seed", type=int, default=1234)
    gen.add_argument("--capacity-bytes", type=int, default=64 << 20)
    gen.add_argument("--offset", type=int, default=0)
    gen.add_argument("--write-fraction", type=float, default=0.5)
    gen.add_argument("--alpha", type=float, default=1.2)
    gen.add_argument("--stride", type=int, default=256)
    gen.add_argument("--hot-fraction", type=float, default=0.25)
    gen.add_argument("-o", "--out", required=True)
    gen.set_defaults(func=cmd_gen_trace)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
