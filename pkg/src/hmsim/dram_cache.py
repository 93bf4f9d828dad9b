"""DRAM cache metadata layout and miss tracking.

Cache state for a whole 2 KiB row is aggregated into one 48-bit word kept
in the first 6 bytes of the row's last column, so one column read returns
tags, valid/dirty bits, and affinity levels for all 8 cachelines of the
row. The alternative layout stores tags alongside each cacheline in ECC
spare bits ("tad"), which costs one tag read per line when the tag cache
misses but no dedicated column.
"""

from dataclasses import dataclass
from enum import Enum

from .geometry import DeviceGeometry, line_in_row_of_set

LINE_META_BITS = 6
TAG_BITS = 2
AFFINITY_BITS = 2
AFFINITY_MAX = (1 << AFFINITY_BITS) - 1

MSHR_ADDR_BITS = 37
MSHR_MASK_BITS = 8
MSHR_ENTRY_BITS = 51


class MetadataLayout(Enum):
    AMIL = "amil"  # aggregated word in the row's last column
    TAD = "tad"  # tags distributed next to each cacheline


@dataclass
class LineMeta:
    tag: int = 0
    valid: bool = False
    dirty: bool = False
    affinity: int = 0

    def __post_init__(self):
        if not 0 <= self.tag < (1 << TAG_BITS):
            raise ValueError(f"tag {self.tag} out of range")
        if not 0 <= self.affinity <= AFFINITY_MAX:
            raise ValueError(f"affinity {self.affinity} out of range")


def encode_line_meta(meta: LineMeta) -> int:
    return (
        meta.tag
        | (int(meta.valid) << 2)
        | (int(meta.dirty) << 3)
        | (meta.affinity << 4)
    )


def decode_line_meta(bits: int) -> LineMeta:
    return LineMeta(
        tag=bits & 0x3,
        valid=bool(bits & 0x4),
        dirty=bool(bits & 0x8),
        affinity=(bits >> 4) & 0x3,
    )


def amil_encode(lines: list[LineMeta]) -> int:
    """Pack per-line metadata into the aggregated row word (6 bits each)."""
    word = 0
    for i, meta in enumerate(lines):
        word |= encode_line_meta(meta) << (LINE_META_BITS * i)
    return word


def amil_decode(word: int, lines_per_row: int = 8) -> list[LineMeta]:
    if word < 0 or word >= 1 << (LINE_META_BITS * lines_per_row):
        raise ValueError("metadata word out of range")
    return [
        decode_line_meta((word >> (LINE_META_BITS * i)) & ((1 << LINE_META_BITS) - 1))
        for i in range(lines_per_row)
    ]


def amil_word_bits(lines_per_row: int = 8) -> int:
    return LINE_META_BITS * lines_per_row


def probe_columns(layout: MetadataLayout, geo: DeviceGeometry) -> list[int]:
    """Column indices read to learn a row's tags on a tag-cache miss."""
    if layout is MetadataLayout.AMIL:
        return [geo.columns_per_row - 1]
    # one tag read per cacheline slot
    return [i * geo.columns_per_line for i in range(geo.lines_per_row)]


# -- miss status holding registers ------------------------------------------


class MshrOutcome(Enum):
    NEW_MISS = "new_miss"
    MERGED = "merged"
    FULL = "full"


@dataclass
class MshrEntry:
    line_address: int
    column_mask: int = 0
    entry_valid: bool = True
    is_write: bool = False
    affinity_level: int = 0
    ctc_valid: bool = False
    ctc_dirty: bool = False

    def merge(self, sector: int, is_write: bool) -> None:
        self.column_mask |= 1 << sector
        self.is_write = self.is_write or is_write

    def num_columns(self) -> int:
        return bin(self.column_mask).count("1")


def pack_mshr_entry(entry: MshrEntry) -> int:
    """51-bit register image: address, sector mask, flags, affinity."""
    if entry.line_address >= 1 << MSHR_ADDR_BITS:
        raise ValueError("line address exceeds 37 bits")
    if entry.column_mask >= 1 << MSHR_MASK_BITS:
        raise ValueError("column mask exceeds 8 bits")
    word = entry.line_address
    word |= entry.column_mask << 37
    word |= int(entry.entry_valid) << 45
    word |= int(entry.is_write) << 46
    word |= (entry.affinity_level & AFFINITY_MAX) << 47
    word |= int(entry.ctc_valid) << 49
    word |= int(entry.ctc_dirty) << 50
    return word


def unpack_mshr_entry(word: int) -> MshrEntry:
    if word < 0 or word >= 1 << MSHR_ENTRY_BITS:
        raise ValueError("entry image out of range")
    return MshrEntry(
        line_address=word & ((1 << 37) - 1),
        column_mask=(word >> 37) & 0xFF,
        entry_valid=bool((word >> 45) & 1),
        is_write=bool((word >> 46) & 1),
        affinity_level=(word >> 47) & 0x3,
        ctc_valid=bool((word >> 49) & 1),
        ctc_dirty=bool((word >> 50) & 1),
    )


class MshrTable:
    """Per-channel miss table; one entry per outstanding cacheline miss."""

    def __init__(self, capacity: int = 128):
        self.capacity = capacity
        self.entries: dict[int, MshrEntry] = {}
        self.full_events = 0
        self.peak_occupancy = 0

    def lookup(self, line_address: int) -> MshrEntry | None:
        return self.entries.get(line_address)

    def insert_or_merge(
        self,
        line_address: int,
        sector: int,
        is_write: bool,
        ctc_valid: bool = False,
        ctc_dirty: bool = False,
    ) -> tuple[MshrOutcome, MshrEntry | None]:
        entry = self.entries.get(line_address)
        if entry is not None:
            entry.merge(sector, is_write)
            return MshrOutcome.MERGED, entry
        if len(self.entries) >= self.capacity:
            self.full_events += 1
            return MshrOutcome.FULL, None
        entry = MshrEntry(
            line_address=line_address,
            column_mask=1 << sector,
            is_write=is_write,
            ctc_valid=ctc_valid,
            ctc_dirty=ctc_dirty,
        )
        self.entries[line_address] = entry
        self.peak_occupancy = max(self.peak_occupancy, len(self.entries))
        return MshrOutcome.NEW_MISS, entry

    def release(self, line_address: int) -> None:
        self.entries.pop(line_address, None)

    def occupancy(self) -> int:
        return len(self.entries)


# -- line movement plans -----------------------------------------------------


def line_sectors(set_index: int, geo: DeviceGeometry) -> list[int]:
    """Data sectors of a cache set; the metadata slot loses its last sector."""
    sectors = list(range(geo.columns_per_line))
    if line_in_row_of_set(set_index, geo) == geo.lines_per_row - 1:
        sectors.pop()
    return sectors


def fill_plan(set_index: int, geo: DeviceGeometry) -> tuple[list[int], list[int]]:
    """(SCM read sectors, DRAM write sectors) moving a line into the cache."""
    sectors = line_sectors(set_index, geo)
    return sectors, list(sectors)


def evict_plan(set_index: int, geo: DeviceGeometry) -> tuple[list[int], list[int]]:
    """(DRAM read sectors, SCM write sectors) for a dirty victim writeback."""
    sectors = line_sectors(set_index, geo)
    return sectors, list(sectors)
