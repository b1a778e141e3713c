"""MDL code tables over transaction databases.

A code table is an ordered list of (itemset, support, usage) entries covering
a database greedily in cover order. Code lengths are Shannon-optimal for the
usage distribution: L(x) = -log2(usage(x) / total usage). The compression
loop admits a candidate itemset only when it strictly shrinks the two-part
total size L(D, CT) = L(D | CT) + L(CT).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .datamodel import TransactionDatabase, to_vertical

Itemset = frozenset

# Strict-decrease margin for candidate admission; a tie rejects.
ACCEPT_EPS = 1e-9


class CoverError(Exception):
    """A transaction contains items the code table cannot cover."""


def canon(items: Iterable[int]) -> tuple[int, ...]:
    return tuple(sorted(items))


def cover_order_key(items: Itemset, support: int):
    """Standard cover order: longer first, then higher support, then lexicographic."""
    return (-len(items), -support, canon(items))


def candidate_order_key(items: Itemset, support: int):
    """Candidate order: higher support first, then longer, then lexicographic."""
    return (-support, -len(items), canon(items))


@dataclass(frozen=True)
class CodeTableEntry:
    items: Itemset
    support: int
    usage: int


@dataclass(frozen=True)
class CodeTable:
    """Entries in cover order; usages reflect one full cover pass of the source."""

    entries: tuple[CodeTableEntry, ...]
    n_transactions: int
    source: str = ""

    @property
    def total_usage(self) -> int:
        return sum(e.usage for e in self.entries)

    @property
    def alphabet(self) -> frozenset:
        out: set[int] = set()
        for e in self.entries:
            out |= e.items
        return frozenset(out)

    def entry_for(self, items: Iterable[int]) -> CodeTableEntry | None:
        target = frozenset(items)
        for e in self.entries:
            if e.items == target:
                return e
        return None

    def non_singletons(self) -> tuple[CodeTableEntry, ...]:
        return tuple(e for e in self.entries if len(e.items) > 1)

    def singletons(self) -> tuple[CodeTableEntry, ...]:
        return tuple(e for e in self.entries if len(e.items) == 1)

    def kraft_sum(self) -> float:
        total = self.total_usage
        if total == 0:
            return 0.0
        return sum(e.usage / total for e in self.entries if e.usage > 0)

    def validate(self) -> None:
        singles = {next(iter(e.items)) for e in self.entries if len(e.items) == 1}
        if singles != set(self.alphabet):
            raise ValueError("code table must contain every singleton of its alphabet")


@dataclass(frozen=True)
class CandidateSet:
    """Frequent itemsets with exact supports, in candidate order."""

    entries: tuple[tuple[Itemset, int], ...]
    min_count: int

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def supports(self) -> dict[Itemset, int]:
        return {items: support for items, support in self.entries}


def mine_candidates(db: TransactionDatabase, min_count: int) -> CandidateSet:
    """All itemsets (size >= 1) with support >= min_count, levelwise with tidsets."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    vert = to_vertical(db)
    tidsets = {item: set(tids) for item, tids in vert.tidsets.items()}
    frequent: dict[Itemset, int] = {}
    level: dict[tuple[int, ...], set[int]] = {}
    for item in sorted(tidsets):
        if len(tidsets[item]) >= min_count:
            level[(item,)] = tidsets[item]
            frequent[frozenset((item,))] = len(tidsets[item])
    while level:
        next_level: dict[tuple[int, ...], set[int]] = {}
        keys = sorted(level)
        prev = set(level)
        for a_idx in range(len(keys)):
            for b_idx in range(a_idx + 1, len(keys)):
                a, b = keys[a_idx], keys[b_idx]
                if a[:-1] != b[:-1]:
                    continue
                joined = a + (b[-1],)
                if any(joined[:i] + joined[i + 1:] not in prev for i in range(len(joined))):
                    continue
                tids = level[a] & level[b]
                if len(tids) >= min_count:
                    next_level[joined] = tids
                    frequent[frozenset(joined)] = len(tids)
        level = next_level
    ordered = sorted(frequent.items(), key=lambda kv: candidate_order_key(kv[0], kv[1]))
    return CandidateSet(tuple(ordered), min_count)


def cover(transaction: Iterable[int], ct: CodeTable) -> list[Itemset]:
    """Greedy cover: scan entries in order, take each that fits the uncovered rest."""
    remaining = set(transaction)
    out: list[Itemset] = []
    for e in ct.entries:
        if not remaining:
            break
        if e.items <= remaining:
            out.append(e.items)
            remaining -= e.items
    if remaining:
        raise CoverError(f"items {sorted(remaining)} not coverable by the table")
    return out


def with_usages(db: TransactionDatabase, entries: Sequence[CodeTableEntry],
                source: str = "") -> CodeTable:
    """Recompute usages of an ordered entry list by one full cover pass of db."""
    skeleton = CodeTable(tuple(CodeTableEntry(e.items, e.support, 0) for e in entries),
                         len(db), source)
    counts: dict[Itemset, int] = {e.items: 0 for e in entries}
    for t in db.transactions:
        for used in cover(t, skeleton):
            counts[used] += 1
    fresh = tuple(CodeTableEntry(e.items, e.support, counts[e.items]) for e in entries)
    return CodeTable(fresh, len(db), source)


def item_supports(db: TransactionDatabase) -> dict[int, int]:
    supports: dict[int, int] = {i: 0 for i in db.alphabet}
    for t in db.transactions:
        for i in t:
            supports[i] += 1
    return supports


def singleton_table(db: TransactionDatabase, source: str = "") -> CodeTable:
    """The standard table: one entry per alphabet item, usage = support."""
    supports = item_supports(db)
    entries = [CodeTableEntry(frozenset((i,)), supports[i], supports[i])
               for i in sorted(db.alphabet)]
    entries.sort(key=lambda e: cover_order_key(e.items, e.support))
    return CodeTable(tuple(entries), len(db), source)


def code_length(entry: CodeTableEntry, ct: CodeTable) -> float | None:
    """Shannon length in bits, or None for a zero-usage entry (no code assigned)."""
    if entry.usage == 0:
        return None
    total = ct.total_usage
    return -math.log2(entry.usage / total)


def standard_code_lengths(db: TransactionDatabase) -> dict[int, float]:
    """Code lengths the singleton-only table assigns to each item."""
    supports = item_supports(db)
    total = sum(supports.values())
    return {i: -math.log2(s / total) for i, s in supports.items() if s > 0}


def encoded_db_size(db: TransactionDatabase, ct: CodeTable) -> float:
    """L(D | CT): summed code lengths over every transaction's cover."""
    total = ct.total_usage
    if total == 0:
        return 0.0
    lengths = {e.items: -math.log2(e.usage / total) for e in ct.entries if e.usage > 0}
    bits = 0.0
    for t in db.transactions:
        for used in cover(t, ct):
            bits += lengths[used]
    return bits


def encoded_table_size(db: TransactionDatabase, ct: CodeTable,
                       st_lengths: Mapping[int, float] | None = None) -> float:
    """L(CT): per used entry, its own code plus its items in standard codes."""
    if st_lengths is None:
        st_lengths = standard_code_lengths(db)
    total = ct.total_usage
    bits = 0.0
    for e in ct.entries:
        if e.usage == 0:
            continue
        bits += -math.log2(e.usage / total)
        bits += sum(st_lengths[i] for i in e.items)
    return bits


def total_encoded_size(db: TransactionDatabase, ct: CodeTable,
                       st_lengths: Mapping[int, float] | None = None) -> float:
    return encoded_db_size(db, ct) + encoded_table_size(db, ct, st_lengths)


@dataclass(frozen=True)
class AdmissionDecision:
    items: Itemset
    support: int
    size_before: float
    size_with: float
    accepted: bool


def krimp_compress_trace(db: TransactionDatabase, min_count: int,
                         source: str = "") -> tuple[CodeTable, tuple[AdmissionDecision, ...]]:
    """Compression loop with its accept/reject trace.

    Starts from the singleton table, offers candidates in candidate order,
    keeps one only when the total encoded size strictly decreases.
    """
    st_lengths = standard_code_lengths(db)
    ct = singleton_table(db, source)
    current = total_encoded_size(db, ct, st_lengths)
    decisions: list[AdmissionDecision] = []
    for items, support in mine_candidates(db, min_count):
        if len(items) < 2:
            continue
        trial_entries = sorted(
            ct.entries + (CodeTableEntry(items, support, 0),),
            key=lambda e: cover_order_key(e.items, e.support))
        trial = with_usages(db, trial_entries, source)
        size = total_encoded_size(db, trial, st_lengths)
        accepted = size < current - ACCEPT_EPS
        decisions.append(AdmissionDecision(items, support, current, size, accepted))
        if accepted:
            ct, current = trial, size
    return ct, tuple(decisions)


def krimp_compress(db: TransactionDatabase, min_count: int, source: str = "") -> CodeTable:
    ct, _ = krimp_compress_trace(db, min_count, source)
    return ct


def directed_placement(db: TransactionDatabase, ct: CodeTable,
                       f: Itemset, l: int) -> list[CodeTable]:
    """l table variants inserting f at fractional depths of the non-singleton region.

    Variant i places f at slot round-half-up(i/l * m) where m is the region's
    slot count (existing non-singletons + 1); usages are recomputed per variant.
    """
    if l < 1:
        raise ValueError("l must be >= 1")
    f = frozenset(f)
    if ct.entry_for(f) is not None:
        raise ValueError("candidate already present in the table")
    support = sum(1 for t in db.transactions if f <= t)
    non_singles = list(ct.non_singletons())
    singles = list(ct.singletons())
    m = len(non_singles) + 1
    variants = []
    for i in range(1, l + 1):
        slot = math.floor(i / l * m + 0.5)
        slot = min(max(slot, 1), m)
        placed = non_singles[: slot - 1] + [CodeTableEntry(f, support, 0)] + non_singles[slot - 1:]
        variants.append(with_usages(db, placed + singles, ct.source))
    return variants


def format_code_table(ct: CodeTable) -> str:
    """Text form: entry lines in cover order, '--' before the singleton region."""
    lines = []
    total = ct.total_usage

    def fmt(e: CodeTableEntry) -> str:
        bits = -math.log2(e.usage / total) if e.usage > 0 and total > 0 else 0.0
        items = " ".join(str(i) for i in sorted(e.items))
        return f"{items} | usage={e.usage} | bits={bits:.6f}"

    for e in ct.non_singletons():
        lines.append(fmt(e))
    lines.append("--")
    for e in ct.singletons():
        lines.append(fmt(e))
    return "\n".join(lines) + "\n"
