"""Synthetic traffic generators and the text trace format.

Trace lines are `stream op addr_hex size`, one request per line, with `#`
starting a comment. Sizes are multiples of the 32 B sector. Generators are
deterministic for a given seed; traces are held in numpy arrays so
million-request workloads stay cheap to build and iterate.
"""

from dataclasses import dataclass

import numpy as np

SECTOR_BYTES = 32
LINE_BYTES = 256

PATTERN_KINDS = (
    "streaming_read",
    "streaming_write",
    "random_read",
    "random_write",
    "mixed_random",
    "zipf_hot_cold",
    "strided",
)


@dataclass(frozen=True)
class TraceRecord:
    stream: int
    is_write: bool
    address: int
    size: int = SECTOR_BYTES


@dataclass(frozen=True)
class PatternSpec:
    kind: str
    write_fraction: float = 0.5
    alpha: float = 1.2
    stride: int = LINE_BYTES
    hot_fraction: float = 0.25

    def __post_init__(self):
        if self.kind not in PATTERN_KINDS:
            raise ValueError(f"unknown pattern {self.kind!r}")
        if not 0.0 <= self.write_fraction <= 1.0:
            raise ValueError("write_fraction must be in [0, 1]")
        if self.alpha <= 0.0:
            raise ValueError("alpha must be positive")
        if self.stride <= 0 or self.stride % SECTOR_BYTES != 0:
            raise ValueError("stride must be a positive multiple of the sector size")
        if not 0.0 < self.hot_fraction <= 1.0:
            raise ValueError("hot_fraction must be in (0, 1]")


class Trace:
    """Column-oriented request list: streams, write flags, addresses, sizes."""

    def __init__(self, streams, writes, addresses, sizes):
        self.streams = np.asarray(streams, dtype=np.int32)
        self.writes = np.asarray(writes, dtype=bool)
        self.addresses = np.asarray(addresses, dtype=np.int64)
        self.sizes = np.asarray(sizes, dtype=np.int32)
        n = len(self.addresses)
        if not (len(self.streams) == len(self.writes) == len(self.sizes) == n):
            raise ValueError("trace columns must have equal length")

    def __len__(self) -> int:
        return len(self.addresses)

    def record(self, i: int) -> TraceRecord:
        return TraceRecord(
            stream=int(self.streams[i]),
            is_write=bool(self.writes[i]),
            address=int(self.addresses[i]),
            size=int(self.sizes[i]),
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self.record(i)

    @classmethod
    def from_records(cls, records) -> "Trace":
        records = list(records)
        return cls(
            [r.stream for r in records],
            [r.is_write for r in records],
            [r.address for r in records],
            [r.size for r in records],
        )


def _zipf_cdf(n: int, alpha: float) -> np.ndarray:
    weights = np.arange(1, n + 1, dtype=np.float64) ** -alpha
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    return cdf


def _zipf_sample(rng, cdf: np.ndarray, count: int) -> np.ndarray:
    return np.searchsorted(cdf, rng.random(count), side="right")


def generate(
    spec: PatternSpec,
    seed: int,
    length: int,
    capacity_bytes: int,
    offset: int = 0,
    line_bytes: int = LINE_BYTES,
) -> Trace:
    """Build `length` sector requests over [offset, offset + capacity_bytes)."""
    if length <= 0:
        raise ValueError("length must be positive")
    if capacity_bytes < line_bytes:
        raise ValueError("capacity smaller than one cacheline")
    rng = np.random.default_rng(seed)
    n_sectors = capacity_bytes // SECTOR_BYTES
    n_lines = capacity_bytes // line_bytes
    sectors_per_line = line_bytes // SECTOR_BYTES
    kind = spec.kind

    if kind in ("streaming_read", "streaming_write"):
        addrs = (np.arange(length, dtype=np.int64) % n_sectors) * SECTOR_BYTES
        writes = np.full(length, kind == "streaming_write")
    elif kind in ("random_read", "random_write"):
        addrs = rng.integers(0, n_sectors, size=length, dtype=np.int64) * SECTOR_BYTES
        writes = np.full(length, kind == "random_write")
    elif kind == "mixed_random":
        addrs = rng.integers(0, n_sectors, size=length, dtype=np.int64) * SECTOR_BYTES
        writes = rng.random(length) < spec.write_fraction
    elif kind == "strided":
        stride_sectors = spec.stride // SECTOR_BYTES
        addrs = ((np.arange(length, dtype=np.int64) * stride_sectors) % n_sectors) * SECTOR_BYTES
        writes = np.zeros(length, dtype=bool)
    elif kind == "zipf_hot_cold":
        # hottest ranks occupy the lowest line addresses, so the hot set is
        # a contiguous prefix whose footprint is hot_fraction of capacity
        hot_lines = max(1, int(n_lines * spec.hot_fraction))
        writes = rng.random(length) < spec.write_fraction
        lines = np.empty(length, dtype=np.int64)
        n_writes = int(writes.sum())
        if n_writes:
            lines[writes] = _zipf_sample(rng, _zipf_cdf(hot_lines, spec.alpha), n_writes)
        if n_writes < length:
            lines[~writes] = _zipf_sample(rng, _zipf_cdf(n_lines, spec.alpha), length - n_writes)
        sectors = rng.integers(0, sectors_per_line, size=length, dtype=np.int64)
        addrs = lines * line_bytes + sectors * SECTOR_BYTES
    else:  # pragma: no cover
        raise ValueError(f"unknown pattern {kind!r}")

    addrs = addrs + offset
    streams = np.zeros(length, dtype=np.int32)
    sizes = np.full(length, SECTOR_BYTES, dtype=np.int32)
    return Trace(streams, writes, addrs, sizes)


def parse_trace(lines, source: str = "<trace>") -> Trace:
    """Parse the text format; raises ValueError naming the offending line."""
    streams, writes, addrs, sizes = [], [], [], []
    for lineno, raw in enumerate(lines, start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        parts = text.split()
        if len(parts) != 4:
            raise ValueError(f"{source}:{lineno}: expected 'stream op addr size', got {raw.strip()!r}")
        stream_s, op, addr_s, size_s = parts
        try:
            stream = int(stream_s)
        except ValueError:
            raise ValueError(f"{source}:{lineno}: bad stream id {stream_s!r}") from None
        if op not in ("R", "W"):
            raise ValueError(f"{source}:{lineno}: op must be R or W, got {op!r}")
        try:
            addr = int(addr_s, 16)
        except ValueError:
            raise ValueError(f"{source}:{lineno}: bad hex address {addr_s!r}") from None
        try:
            size = int(size_s)
        except ValueError:
            raise ValueError(f"{source}:{lineno}: bad size {size_s!r}") from None
        if stream < 0:
            raise ValueError(f"{source}:{lineno}: stream id must be non-negative")
        if addr < 0 or addr % SECTOR_BYTES != 0:
            raise ValueError(f"{source}:{lineno}: address must be {SECTOR_BYTES} B aligned")
        if size <= 0 or size % SECTOR_BYTES != 0:
            raise ValueError(f"{source}:{lineno}: size must be a positive multiple of {SECTOR_BYTES}")
        streams.append(stream)
        writes.append(op == "W")
        addrs.append(addr)
        sizes.append(size)
    if not addrs:
        raise ValueError(f"{source}: trace holds no requests")
    return Trace(streams, writes, addrs, sizes)


def load_trace(path: str) -> Trace:
    with open(path, "r", encoding="utf-8") as handle:
        return parse_trace(handle, source=path)


def serialize_trace(trace: Trace, path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for rec in trace:
            op = "W" if rec.is_write else "R"
            handle.write(f"{rec.stream} {op} 0x{rec.address:x} {rec.size}\n")
