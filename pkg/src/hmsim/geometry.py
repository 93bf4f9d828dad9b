"""Device geometry and address mapping for a two-rank memory stack.

One stack pairs a DRAM rank with a larger storage-class-memory (SCM) rank
on each channel. Both ranks share channel/bank-group/bank organization and
row/column sizes; they differ only in rows per bank. All address math is
mask/shift, so every count must be a power of two.

Address bit layout, LSB to MSB:
  byte-in-column | column-in-line | channel | bank group | bank |
  line-in-row | row
Consecutive 256 B cachelines therefore stripe across channels first, then
bank groups, then banks, which spreads a linear sweep over all banks.
"""

from dataclasses import dataclass
from enum import Enum
from functools import cached_property


class Rank(Enum):
    DRAM = "dram"
    SCM = "scm"


def _require_pow2(value: int, name: str) -> None:
    if value <= 0 or (value & (value - 1)) != 0:
        raise ValueError(f"{name} must be a power of two, got {value}")


@dataclass(frozen=True)
class DeviceGeometry:
    channels: int = 8
    bank_groups_per_channel: int = 4
    banks_per_group: int = 4
    row_bytes: int = 2048
    column_bytes: int = 32
    cacheline_bytes: int = 256
    rows_per_bank_dram: int = 64
    rows_per_bank_scm: int = 256

    def __post_init__(self):
        for name in (
            "channels",
            "bank_groups_per_channel",
            "banks_per_group",
            "row_bytes",
            "column_bytes",
            "cacheline_bytes",
            "rows_per_bank_dram",
            "rows_per_bank_scm",
        ):
            _require_pow2(getattr(self, name), name)
        if self.cacheline_bytes % self.column_bytes != 0:
            raise ValueError("cacheline_bytes must be a multiple of column_bytes")
        if self.row_bytes % self.cacheline_bytes != 0:
            raise ValueError("row_bytes must be a multiple of cacheline_bytes")
        if self.rows_per_bank_scm < self.rows_per_bank_dram:
            raise ValueError("SCM rank must be at least as large as the DRAM rank")

    # -- derived counts ----------------------------------------------------

    @cached_property
    def columns_per_line(self) -> int:
        return self.cacheline_bytes // self.column_bytes

    @cached_property
    def lines_per_row(self) -> int:
        return self.row_bytes // self.cacheline_bytes

    @cached_property
    def columns_per_row(self) -> int:
        return self.row_bytes // self.column_bytes

    @cached_property
    def banks_per_channel(self) -> int:
        return self.bank_groups_per_channel * self.banks_per_group

    @cached_property
    def total_banks(self) -> int:
        return self.channels * self.banks_per_channel

    @cached_property
    def dram_capacity_bytes(self) -> int:
        return self.total_banks * self.rows_per_bank_dram * self.row_bytes

    @cached_property
    def scm_capacity_bytes(self) -> int:
        return self.total_banks * self.rows_per_bank_scm * self.row_bytes

    @cached_property
    def num_dram_cache_lines(self) -> int:
        return self.dram_capacity_bytes // self.cacheline_bytes

    @cached_property
    def num_scm_lines(self) -> int:
        return self.scm_capacity_bytes // self.cacheline_bytes

    @cached_property
    def capacity_ratio(self) -> int:
        return self.rows_per_bank_scm // self.rows_per_bank_dram

    # -- bit layout --------------------------------------------------------

    @cached_property
    def byte_bits(self) -> int:
        return self.column_bytes.bit_length() - 1

    @cached_property
    def column_in_line_bits(self) -> int:
        return self.columns_per_line.bit_length() - 1

    @cached_property
    def channel_bits(self) -> int:
        return self.channels.bit_length() - 1

    @cached_property
    def bank_group_bits(self) -> int:
        return self.bank_groups_per_channel.bit_length() - 1

    @cached_property
    def bank_bits(self) -> int:
        return self.banks_per_group.bit_length() - 1

    @cached_property
    def line_in_row_bits(self) -> int:
        return self.lines_per_row.bit_length() - 1

    @cached_property
    def channel_shift(self) -> int:
        return self.byte_bits + self.column_in_line_bits

    @cached_property
    def bank_group_shift(self) -> int:
        return self.channel_shift + self.channel_bits

    @cached_property
    def bank_shift(self) -> int:
        return self.bank_group_shift + self.bank_group_bits

    @cached_property
    def line_in_row_shift(self) -> int:
        return self.bank_shift + self.bank_bits

    @cached_property
    def row_shift(self) -> int:
        return self.line_in_row_shift + self.line_in_row_bits

    def rows_per_bank(self, rank: Rank) -> int:
        return self.rows_per_bank_dram if rank is Rank.DRAM else self.rows_per_bank_scm

    def capacity_bytes(self, rank: Rank) -> int:
        return self.dram_capacity_bytes if rank is Rank.DRAM else self.scm_capacity_bytes


@dataclass(frozen=True)
class AddressDecomposition:
    channel: int
    bank_group: int
    bank: int
    row: int
    column: int  # full column index within the row
    byte_offset: int


@dataclass(frozen=True)
class DramCacheIndex:
    set: int
    tag: int
    sector: int  # column within the 256 B cacheline


def decompose_address(addr: int, geo: DeviceGeometry, rank: Rank = Rank.SCM) -> AddressDecomposition:
    """Split a physical byte address into its device coordinates."""
    if addr < 0 or addr >= geo.capacity_bytes(rank):
        raise ValueError(f"address {addr:#x} outside {rank.value} capacity")
    byte_offset = addr & (geo.column_bytes - 1)
    col_in_line = (addr >> geo.byte_bits) & (geo.columns_per_line - 1)
    channel = (addr >> geo.channel_shift) & (geo.channels - 1)
    bank_group = (addr >> geo.bank_group_shift) & (geo.bank_groups_per_channel - 1)
    bank = (addr >> geo.bank_shift) & (geo.banks_per_group - 1)
    line_in_row = (addr >> geo.line_in_row_shift) & (geo.lines_per_row - 1)
    row = addr >> geo.row_shift
    return AddressDecomposition(
        channel=channel,
        bank_group=bank_group,
        bank=bank,
        row=row,
        column=line_in_row * geo.columns_per_line + col_in_line,
        byte_offset=byte_offset,
    )


def compose_address(dec: AddressDecomposition, geo: DeviceGeometry) -> int:
    """Inverse of decompose_address."""
    line_in_row, col_in_line = divmod(dec.column, geo.columns_per_line)
    return (
        dec.byte_offset
        | (col_in_line << geo.byte_bits)
        | (dec.channel << geo.channel_shift)
        | (dec.bank_group << geo.bank_group_shift)
        | (dec.bank << geo.bank_shift)
        | (line_in_row << geo.line_in_row_shift)
        | (dec.row << geo.row_shift)
    )


def dram_cache_index(scm_addr: int, geo: DeviceGeometry) -> DramCacheIndex:
    """Direct-mapped cache slot for an SCM address.

    The cacheline index is reduced modulo the number of DRAM cache lines;
    the quotient becomes the tag. Because the row bits sit above all bank
    bits, the set lands in the same channel/bank as the home SCM line.
    """
    line_bits = geo.cacheline_bytes.bit_length() - 1
    scm_line = scm_addr >> line_bits
    set_index = scm_line % geo.num_dram_cache_lines
    tag = scm_line // geo.num_dram_cache_lines
    sector = (scm_addr >> geo.byte_bits) & (geo.columns_per_line - 1)
    return DramCacheIndex(set=set_index, tag=tag, sector=sector)


def line_in_row_of_set(set_index: int, geo: DeviceGeometry) -> int:
    shift = geo.line_in_row_shift - (geo.cacheline_bytes.bit_length() - 1)
    return (set_index >> shift) & (geo.lines_per_row - 1)


def is_metadata_column(idx: DramCacheIndex, geo: DeviceGeometry) -> bool:
    """True for the one column per DRAM row that holds the row's metadata.

    The last column of the last cacheline slot in each row is reserved, so
    exactly one sector in lines_per_row * columns_per_line is uncacheable.
    """
    last_line = geo.lines_per_row - 1
    last_col = geo.columns_per_line - 1
    return line_in_row_of_set(idx.set, geo) == last_line and idx.sector == last_col


def set_to_dram_address(set_index: int, sector: int, geo: DeviceGeometry) -> int:
    """Byte address of a cache-set sector inside the DRAM rank."""
    line_bits = geo.cacheline_bytes.bit_length() - 1
    return (set_index << line_bits) | (sector << geo.byte_bits)


def cache_index_to_scm_address(set_index: int, tag: int, sector: int, geo: DeviceGeometry) -> int:
    """Home SCM byte address of a cached line, used for writebacks."""
    line_bits = geo.cacheline_bytes.bit_length() - 1
    scm_line = tag * geo.num_dram_cache_lines + set_index
    return (scm_line << line_bits) | (sector << geo.byte_bits)


def global_row_index(dec: AddressDecomposition, geo: DeviceGeometry) -> int:
    """Flat row id across the whole device, used to index tag-cache sets."""
    bank_id = (dec.channel * geo.bank_groups_per_channel + dec.bank_group) * geo.banks_per_group + dec.bank
    return dec.row * geo.total_banks + bank_id


def page_index(addr: int, page_bytes: int) -> int:
    if page_bytes <= 0 or (page_bytes & (page_bytes - 1)) != 0:
        raise ValueError("page_bytes must be a power of two")
    return addr >> (page_bytes.bit_length() - 1)


def metadata_column_fraction(geo: DeviceGeometry) -> float:
    """Fraction of sectors reserved for metadata (1/64 with defaults)."""
    return 1.0 / (geo.lines_per_row * geo.columns_per_line)


def aligned_sector(addr: int, geo: DeviceGeometry) -> int:
    return addr & ~(geo.column_bytes - 1)


def validate_sector_aligned(addr: int, size: int, geo: DeviceGeometry) -> None:
    if addr % geo.column_bytes != 0:
        raise ValueError(f"address {addr:#x} not {geo.column_bytes} B aligned")
    if size <= 0 or size % geo.column_bytes != 0:
        raise ValueError(f"size {size} not a positive multiple of {geo.column_bytes}")
