"""Sectored L2 cache with a carve-out tag cache for DRAM-cache metadata.

The L2 holds 128 B lines filled at 32 B sector granularity. Up to four of
its ways per set can be repurposed as a tag cache: each repurposed 128 B
way yields four 32 B tag-cache ways, and each 32 B tag-cache line holds
the tag/valid/dirty word (4 B) for eight consecutive DRAM rows. Affinity
levels are not cached here, so victim-affinity comparisons always go to
the in-DRAM metadata column.

Tag-cache writebacks are lazy: metadata updates dirty the cached sector
and flush as one read-modify-write of the home metadata column when the
sector is evicted.
"""

from dataclasses import dataclass

CTC_WAYS_PER_L2_WAY = 4
CTC_SECTORS_PER_LINE = 8
CTC_TAG_BITS = 22
CTC_SECTOR_BITS = 8
CTC_PLRU_BITS = 4
MAX_CTC_L2_WAYS = 4


@dataclass(frozen=True)
class L2Config:
    capacity_bytes: int = 8 << 20
    total_ways: int = 16
    ctc_l2_ways: int = 4
    line_bytes: int = 128
    sector_bytes: int = 32

    def __post_init__(self):
        if not 0 <= self.ctc_l2_ways <= MAX_CTC_L2_WAYS:
            raise ValueError(f"ctc_l2_ways must be 0..{MAX_CTC_L2_WAYS}")
        if self.ctc_l2_ways >= self.total_ways:
            raise ValueError("tag cache cannot consume every L2 way")
        if self.line_bytes % self.sector_bytes != 0:
            raise ValueError("line_bytes must be a multiple of sector_bytes")
        if self.capacity_bytes % (self.line_bytes * self.total_ways) != 0:
            raise ValueError("capacity must divide into line_bytes * total_ways sets")

    @property
    def sets(self) -> int:
        return self.capacity_bytes // (self.line_bytes * self.total_ways)

    @property
    def sectors_per_line(self) -> int:
        return self.line_bytes // self.sector_bytes

    @property
    def data_ways(self) -> int:
        return self.total_ways - self.ctc_l2_ways


class _L2Line:
    __slots__ = ("tag", "valid_mask", "dirty_mask", "tokens")

    def __init__(self, tag: int):
        self.tag = tag
        self.valid_mask = 0
        self.dirty_mask = 0
        self.tokens: dict[int, int] = {}


class L2Cache:
    """Physically indexed sectored cache; full-sector writes never fetch."""

    def __init__(self, config: L2Config):
        self.config = config
        self.sets: dict[int, list[_L2Line]] = {}
        self.data_ways = config.data_ways
        self.accesses = 0
        self.hits = 0
        self._sector_shift = config.sector_bytes.bit_length() - 1
        self._line_shift = config.line_bytes.bit_length() - 1
        self._sector_mask = config.sectors_per_line - 1

    def _locate(self, addr: int) -> tuple[int, int, int]:
        line_addr = addr >> self._line_shift
        return line_addr % self.config.sets, line_addr // self.config.sets, (addr >> self._sector_shift) & self._sector_mask

    def _line_base(self, set_index: int, tag: int) -> int:
        return ((tag * self.config.sets) + set_index) << self._line_shift

    def _evict_line(self, set_index: int, line: _L2Line) -> list[tuple[int, int]]:
        writebacks = []
        base = self._line_base(set_index, line.tag)
        for sector in range(self.config.sectors_per_line):
            if line.dirty_mask & (1 << sector):
                writebacks.append((base + (sector << self._sector_shift), line.tokens[sector]))
        return writebacks

    def _allocate(self, set_index: int, tag: int) -> tuple[_L2Line, list[tuple[int, int]]]:
        ways = self.sets.setdefault(set_index, [])
        writebacks = []
        if len(ways) >= self.data_ways:
            victim = ways.pop()
            writebacks = self._evict_line(set_index, victim)
        line = _L2Line(tag)
        ways.insert(0, line)
        return line, writebacks

    def lookup_read(self, addr: int) -> tuple[int | None, bool]:
        """(token, line_present); token None when the sector must be fetched."""
        self.accesses += 1
        set_index, tag, sector = self._locate(addr)
        ways = self.sets.get(set_index, ())
        for pos, line in enumerate(ways):
            if line.tag == tag:
                if pos:
                    ways.insert(0, ways.pop(pos))
                if line.valid_mask & (1 << sector):
                    self.hits += 1
                    return line.tokens[sector], True
                return None, True
        return None, False

    def install_read(self, addr: int, token: int) -> list[tuple[int, int]]:
        """Place a fetched sector; returns dirty-sector writebacks evicted.

        A sector that turned valid while the fetch was in flight (a write
        overtook the fill) keeps its newer contents.
        """
        set_index, tag, sector = self._locate(addr)
        ways = self.sets.get(set_index, ())
        for pos, line in enumerate(ways):
            if line.tag == tag:
                if not (line.valid_mask & (1 << sector)):
                    line.valid_mask |= 1 << sector
                    line.tokens[sector] = token
                return []
        line, writebacks = self._allocate(set_index, tag)
        line.valid_mask |= 1 << sector
        line.tokens[sector] = token
        return writebacks

    def write(self, addr: int, token: int) -> tuple[bool, list[tuple[int, int]]]:
        """Full-sector write; allocates without fetching. (hit, writebacks)."""
        self.accesses += 1
        set_index, tag, sector = self._locate(addr)
        ways = self.sets.get(set_index, ())
        for pos, line in enumerate(ways):
            if line.tag == tag:
                if pos:
                    ways.insert(0, ways.pop(pos))
                self.hits += 1
                line.valid_mask |= 1 << sector
                line.dirty_mask |= 1 << sector
                line.tokens[sector] = token
                return True, []
        line, writebacks = self._allocate(set_index, tag)
        line.valid_mask |= 1 << sector
        line.dirty_mask |= 1 << sector
        line.tokens[sector] = token
        return False, writebacks

    def peek(self, addr: int) -> int | None:
        """Current sector contents without touching stats or recency."""
        set_index, tag, sector = self._locate(addr)
        for line in self.sets.get(set_index, ()):
            if line.tag == tag and line.valid_mask & (1 << sector):
                return line.tokens[sector]
        return None

    def set_data_ways(self, data_ways: int) -> list[tuple[int, int]]:
        """Shrink or grow the data partition; shrinking evicts LRU lines."""
        if not 1 <= data_ways <= self.config.total_ways:
            raise ValueError("data_ways out of range")
        writebacks = []
        if data_ways < self.data_ways:
            for set_index, ways in self.sets.items():
                while len(ways) > data_ways:
                    writebacks.extend(self._evict_line(set_index, ways.pop()))
        self.data_ways = data_ways
        return writebacks

    def hit_rate(self) -> float | None:
        return self.hits / self.accesses if self.accesses else None


class _CtcLine:
    __slots__ = ("tag", "sector_valid", "sector_dirty", "words")

    def __init__(self, tag: int):
        self.tag = tag
        self.sector_valid = 0
        self.sector_dirty = 0
        self.words = [0] * CTC_SECTORS_PER_LINE


class TagCache:
    """Tag/valid/dirty words for DRAM rows, cached in carved-out L2 ways.

    One 32 B line covers eight consecutive rows (4 B each). Victim choice
    per set is a 4-bit rotating pointer, bumped past the last hit, which
    fits the per-set replacement budget at up to 16 ways.
    """

    def __init__(self, sets: int, ctc_l2_ways: int):
        if not 0 <= ctc_l2_ways <= MAX_CTC_L2_WAYS:
            raise ValueError(f"ctc_l2_ways must be 0..{MAX_CTC_L2_WAYS}")
        self.sets = sets
        self.ctc_l2_ways = ctc_l2_ways
        self.assoc = CTC_WAYS_PER_L2_WAY * ctc_l2_ways
        self.lines: dict[int, list[_CtcLine | None]] = {}
        self.pointer: dict[int, int] = {}
        self.lookups = 0
        self.hits = 0

    @property
    def enabled(self) -> bool:
        return self.assoc > 0

    def _locate(self, row_index: int) -> tuple[int, int, int]:
        group = row_index // CTC_SECTORS_PER_LINE
        sector = row_index % CTC_SECTORS_PER_LINE
        set_index = group % self.sets
        tag = group // self.sets
        if tag >= 1 << CTC_TAG_BITS:
            raise ValueError("row group tag exceeds 22 bits")
        return set_index, tag, sector

    def _find(self, set_index: int, tag: int) -> tuple[int, _CtcLine] | None:
        for way, line in enumerate(self.lines.get(set_index, ())):
            if line is not None and line.tag == tag:
                return way, line
        return None

    def lookup(self, row_index: int) -> int | None:
        """Cached 4 B tag word for the row, or None on miss."""
        if not self.enabled:
            return None
        self.lookups += 1
        set_index, tag, sector = self._locate(row_index)
        found = self._find(set_index, tag)
        if found is None:
            return None
        way, line = found
        if not (line.sector_valid & (1 << sector)):
            return None
        self.hits += 1
        self.pointer[set_index] = (way + 1) % self.assoc
        return line.words[sector]

    def fill(self, row_index: int, word: int) -> list[tuple[int, int]]:
        """Install a fetched word; returns (row_index, word) dirty writebacks."""
        if not self.enabled:
            return []
        set_index, tag, sector = self._locate(row_index)
        found = self._find(set_index, tag)
        writebacks: list[tuple[int, int]] = []
        if found is None:
            ways = self.lines.setdefault(set_index, [None] * self.assoc)
            way = None
            for candidate, slot in enumerate(ways):
                if slot is None:
                    way = candidate
                    break
            if way is None:
                way = self.pointer.get(set_index, 0) % self.assoc
                writebacks = self._drain_line(set_index, ways[way])
            line = _CtcLine(tag)
            ways[way] = line
            self.pointer[set_index] = (way + 1) % self.assoc
        else:
            _, line = found
        line.sector_valid |= 1 << sector
        line.sector_dirty &= ~(1 << sector)
        line.words[sector] = word
        return writebacks

    def _drain_line(self, set_index: int, line: _CtcLine) -> list[tuple[int, int]]:
        writebacks = []
        group = None
        for sector in range(CTC_SECTORS_PER_LINE):
            if line.sector_dirty & (1 << sector):
                if group is None:
                    group = line.tag * self.sets + set_index
                writebacks.append((group * CTC_SECTORS_PER_LINE + sector, line.words[sector]))
        return writebacks

    def update(self, row_index: int, word: int, dirty: bool) -> bool:
        """Refresh a cached word in place; returns False when absent."""
        if not self.enabled:
            return False
        set_index, tag, sector = self._locate(row_index)
        found = self._find(set_index, tag)
        if found is None:
            return False
        _, line = found
        if not (line.sector_valid & (1 << sector)):
            return False
        line.words[sector] = word
        if dirty:
            line.sector_dirty |= 1 << sector
        else:
            line.sector_dirty &= ~(1 << sector)
        return True

    def flush(self) -> list[tuple[int, int]]:
        writebacks = []
        for set_index, ways in self.lines.items():
            for line in ways:
                if line is not None:
                    writebacks.extend(self._drain_line(set_index, line))
        self.lines.clear()
        self.pointer.clear()
        return writebacks

    def set_partition(self, ctc_l2_ways: int) -> list[tuple[int, int]]:
        """Repartition at a kernel boundary; flushes all cached words."""
        if not 0 <= ctc_l2_ways <= MAX_CTC_L2_WAYS:
            raise ValueError(f"ctc_l2_ways must be 0..{MAX_CTC_L2_WAYS}")
        writebacks = self.flush()
        self.ctc_l2_ways = ctc_l2_ways
        self.assoc = CTC_WAYS_PER_L2_WAY * ctc_l2_ways
        return writebacks

    def hit_rate(self) -> float | None:
        return self.hits / self.lookups if self.lookups else None


def sram_overhead_bits_per_set(assoc: int) -> int:
    """SRAM cost of one tag-cache set: 38 bits per line plus replacement."""
    per_line = CTC_TAG_BITS + CTC_SECTOR_BITS + CTC_SECTOR_BITS
    return assoc * per_line + CTC_PLRU_BITS


def set_partition(l2: L2Cache, ctc: TagCache, ctc_l2_ways: int) -> tuple[list[tuple[int, int]], list[tuple[int, int]]]:
    """Move ways between data and tag duty; returns (data, tag) writebacks."""
    tag_writebacks = ctc.set_partition(ctc_l2_ways)
    data_writebacks = l2.set_data_ways(l2.config.total_ways - ctc_l2_ways)
    return data_writebacks, tag_writebacks
