"""Transaction databases, layout conversions, partitioning, k-anonymity, fragments.

Everything here is an immutable value type; conversions are pure functions.
Transaction ids (tids) are 1-based positions in the horizontal layout.
"""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence


class DataError(Exception):
    """Base class for data-layer failures."""


class TransactionParseError(DataError):
    def __init__(self, message: str, line_no: int):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class IntegrityError(DataError):
    """A fragment's content does not match its digest."""


class AnonymizationError(DataError):
    """The requested anonymity level cannot be satisfied."""


# ---------------------------------------------------------------------------
# Relation schema (object set, attributes, per-attribute valuations)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RelationSchema:
    """A table as an object set plus total per-attribute valuation maps."""

    objects: tuple
    attributes: tuple[str, ...]
    valuations: Mapping[str, Mapping[object, object]]

    def __post_init__(self):
        if len(set(self.attributes)) != len(self.attributes):
            raise DataError("attribute names must be unique")
        for attr in self.attributes:
            vals = self.valuations.get(attr)
            if vals is None or any(obj not in vals for obj in self.objects):
                raise DataError(f"valuation for {attr!r} is not total over the object set")

    def row(self, obj) -> dict[str, object]:
        return {a: self.valuations[a][obj] for a in self.attributes}

    @classmethod
    def from_csv(cls, text: str) -> "RelationSchema":
        """Parse a CSV table; header row names attributes, first column is the object id."""
        reader = csv.reader(io.StringIO(text))
        rows = [r for r in reader if r]
        if not rows:
            raise DataError("empty relation table")
        header = rows[0]
        attrs = tuple(header[1:])
        objects: list[object] = []
        valuations: dict[str, dict[object, object]] = {a: {} for a in attrs}
        for r in rows[1:]:
            obj = r[0]
            if obj in set(objects):
                raise DataError(f"duplicate object id {obj!r}")
            objects.append(obj)
            for a, v in zip(attrs, r[1:]):
                valuations[a][obj] = _coerce(v)
        return cls(tuple(objects), attrs, valuations)


def _coerce(value: str):
    try:
        return int(value)
    except ValueError:
        return value


# ---------------------------------------------------------------------------
# Transaction databases: horizontal and vertical layouts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransactionDatabase:
    """Ordered multiset of item-set transactions; tid = 1-based list position."""

    transactions: tuple[frozenset[int], ...]
    alphabet: frozenset[int]

    def __post_init__(self):
        for t in self.transactions:
            if not t <= self.alphabet:
                raise DataError(f"transaction items {sorted(t - self.alphabet)} outside alphabet")

    def __len__(self) -> int:
        return len(self.transactions)

    @property
    def item_occurrences(self) -> int:
        return sum(len(t) for t in self.transactions)

    @classmethod
    def from_lists(cls, lists: Iterable[Iterable[int]]) -> "TransactionDatabase":
        txs = tuple(frozenset(t) for t in lists)
        alphabet = frozenset().union(*txs) if txs else frozenset()
        return cls(txs, alphabet)


@dataclass(frozen=True)
class VerticalIndex:
    """Per-item sorted tidsets; the column-oriented view of a database."""

    tidsets: Mapping[int, tuple[int, ...]]

    def items(self) -> tuple[int, ...]:
        return tuple(sorted(self.tidsets))


def load_transaction_db(text: str) -> TransactionDatabase:
    """Parse line-per-transaction text: whitespace-separated non-negative item ids.

    Blank lines are empty transactions. A repeated item within one line is an
    error because transactions are sets.
    """
    transactions: list[frozenset[int]] = []
    alphabet: set[int] = set()
    for line_no, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        items: set[int] = set()
        for tok in tokens:
            try:
                item = int(tok)
            except ValueError:
                raise TransactionParseError(f"non-integer item {tok!r}", line_no) from None
            if item < 0:
                raise TransactionParseError(f"negative item id {item}", line_no)
            if item in items:
                raise TransactionParseError(f"duplicate item {item} in transaction", line_no)
            items.add(item)
        transactions.append(frozenset(items))
        alphabet |= items
    return TransactionDatabase(tuple(transactions), frozenset(alphabet))


def to_vertical(db: TransactionDatabase) -> VerticalIndex:
    tidsets: dict[int, list[int]] = {}
    for tid, t in enumerate(db.transactions, start=1):
        for item in t:
            tidsets.setdefault(item, []).append(tid)
    return VerticalIndex({i: tuple(tids) for i, tids in sorted(tidsets.items())})


def to_horizontal(v: VerticalIndex, n_transactions: int) -> TransactionDatabase:
    transactions: list[set[int]] = [set() for _ in range(n_transactions)]
    for item, tids in v.tidsets.items():
        for tid in tids:
            if not 1 <= tid <= n_transactions:
                raise DataError(f"tid {tid} of item {item} out of range 1..{n_transactions}")
            transactions[tid - 1].add(item)
    alphabet = frozenset(v.tidsets)
    return TransactionDatabase(tuple(frozenset(t) for t in transactions), alphabet)


# ---------------------------------------------------------------------------
# Fragments: one party's vertical slice, with an integrity digest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Fragment:
    """A party's share of a vertical partition: its items' tidsets plus a digest.

    The digest binds database name, fragment id (derived from the item range)
    and the canonical content; it deliberately excludes the holding party so
    that identical content always digests identically.
    """

    party: str
    db_name: str
    items: frozenset[int]
    tidsets: Mapping[int, tuple[int, ...]]
    n_transactions: int
    digest: str = field(default="")

    def __post_init__(self):
        if set(self.tidsets) != set(self.items):
            raise DataError("fragment tidsets must cover exactly the fragment's items")
        if not self.digest:
            object.__setattr__(self, "digest", fragment_digest(self))

    @property
    def fragment_id(self) -> str:
        if not self.items:
            return f"{self.db_name}.f-empty"
        return f"{self.db_name}.f{min(self.items)}-{max(self.items)}"

    def metadata(self) -> dict[str, object]:
        rng = (min(self.items), max(self.items)) if self.items else None
        return {
            "db_name": self.db_name,
            "fragment_id": self.fragment_id,
            "item_range": rng,
            "n_transactions": self.n_transactions,
        }

    def canonical_content(self) -> str:
        lines = [f"fragment {self.db_name} {self.fragment_id} "
                 + " ".join(str(i) for i in sorted(self.items))]
        for item in sorted(self.items):
            tids = ",".join(str(t) for t in sorted(self.tidsets[item]))
            lines.append(f"item {item}: {tids}")
        return "\n".join(lines) + "\n"


def fragment_digest(f: Fragment) -> str:
    return hashlib.sha256(f.canonical_content().encode("utf-8")).hexdigest()


def verify_digest(f: Fragment) -> bool:
    return fragment_digest(f) == f.digest


def serialize_fragment(f: Fragment) -> str:
    """Canonical text form: header, ascending item lines, digest hex on the final line."""
    lines = [f"fragment {f.db_name} {f.party} " + " ".join(str(i) for i in sorted(f.items))]
    for item in sorted(f.items):
        tids = ",".join(str(t) for t in sorted(f.tidsets[item]))
        lines.append(f"item {item}: {tids}")
    lines.append(f.digest)
    return "\n".join(lines) + "\n"


def parse_fragment(text: str, n_transactions: int) -> Fragment:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) < 2 or not lines[0].startswith("fragment "):
        raise DataError("malformed fragment text")
    head = lines[0].split()
    db_name, party = head[1], head[2]
    items = frozenset(int(tok) for tok in head[3:])
    tidsets: dict[int, tuple[int, ...]] = {}
    for ln in lines[1:-1]:
        if not ln.startswith("item "):
            raise DataError(f"malformed fragment line: {ln!r}")
        name, _, tids = ln.partition(":")
        item = int(name.split()[1])
        tidsets[item] = tuple(int(t) for t in tids.strip().split(",") if t)
    digest = lines[-1].strip()
    return Fragment(party, db_name, items, tidsets, n_transactions, digest)


def partition_vertical(db: TransactionDatabase,
                       assignment: Mapping[int, str],
                       db_name: str = "db") -> list[Fragment]:
    """Split a database by items across parties; each party gets one fragment."""
    missing = sorted(db.alphabet - set(assignment))
    if missing:
        raise DataError(f"items {missing} have no party assignment")
    vert = to_vertical(db)
    by_party: dict[str, set[int]] = {}
    for item in sorted(db.alphabet):
        by_party.setdefault(assignment[item], set()).add(item)
    fragments = []
    for party in sorted(by_party):
        items = frozenset(by_party[party])
        tidsets = {i: vert.tidsets.get(i, ()) for i in items}
        fragments.append(Fragment(party, db_name, items, tidsets, len(db)))
    return fragments


def partition_horizontal(db: TransactionDatabase, n_parts: int) -> list[TransactionDatabase]:
    """Split into contiguous tid ranges with sizes differing by at most one.

    Earlier parts receive the extra transaction on uneven splits.
    """
    if n_parts < 1:
        raise DataError("n_parts must be >= 1")
    if n_parts > len(db):
        raise DataError(f"cannot split {len(db)} transactions into {n_parts} parts")
    base, extra = divmod(len(db), n_parts)
    parts = []
    start = 0
    for i in range(n_parts):
        size = base + (1 if i < extra else 0)
        chunk = db.transactions[start:start + size]
        parts.append(TransactionDatabase(chunk, db.alphabet))
        start += size
    return parts


# ---------------------------------------------------------------------------
# k-anonymity with a fixed generalization hierarchy
# ---------------------------------------------------------------------------
#
# Hierarchy: digit-string codes mask one trailing digit per level
# ("17601" -> "1760*" -> "176**"); numeric values bin once into fixed
# width-5 intervals anchored at multiples of 5, rendered "lo,hi".
#
# Search: greedy bottom-up, all quasi-identifiers of a row widen together.
# A class stops once it strictly exceeds k, or once a widening step no
# longer changes its membership; a class that lands exactly on k through a
# merge therefore takes one extra widening step before it freezes.

NUMERIC_BIN_WIDTH = 5


@dataclass(frozen=True)
class AnonymizedTable:
    attributes: tuple[str, ...]
    quasi_ids: tuple[str, ...]
    rows: tuple[tuple[object, ...], ...]
    k: int

    def column(self, attr: str) -> tuple[object, ...]:
        idx = self.attributes.index(attr)
        return tuple(r[idx] for r in self.rows)

    def min_class_size(self) -> int:
        qi_idx = [self.attributes.index(a) for a in self.quasi_ids]
        counts: dict[tuple, int] = {}
        for r in self.rows:
            key = tuple(r[i] for i in qi_idx)
            counts[key] = counts.get(key, 0) + 1
        return min(counts.values()) if counts else 0


def _generalize(value, level: int, as_code: bool):
    if level <= 0:
        return value
    if not as_code and isinstance(value, (int, float)):
        lo = int(value // NUMERIC_BIN_WIDTH) * NUMERIC_BIN_WIDTH
        return f"{lo},{lo + NUMERIC_BIN_WIDTH}"
    s = str(value)
    if not s.isdigit():
        raise AnonymizationError(f"no generalization hierarchy for value {value!r}")
    masked = min(level, len(s))
    return s[: len(s) - masked] + "*" * masked


def _max_level(value, as_code: bool) -> int:
    if not as_code and isinstance(value, (int, float)):
        return 1
    return len(str(value))


def k_anonymize(table: RelationSchema, quasi_ids: Sequence[str], k: int,
                code_attrs: Sequence[str] = ()) -> AnonymizedTable:
    """Generalize quasi-identifier columns until every equivalence class has >= k rows.

    Attributes named in code_attrs mask trailing digits even when their values
    parse as integers; everything else numeric bins at fixed width 5.
    """
    if k < 1:
        raise AnonymizationError("k must be >= 1")
    n = len(table.objects)
    if k > n:
        raise AnonymizationError(f"k={k} exceeds row count {n}")
    qi = tuple(a for a in table.attributes if a in set(quasi_ids))
    codes = set(code_attrs)
    raw_rows = [table.row(obj) for obj in table.objects]

    levels = [0] * n

    def masked(i: int) -> tuple:
        return tuple(_generalize(raw_rows[i][a], levels[i], a in codes) for a in qi)

    def grouping() -> dict[tuple, list[int]]:
        groups: dict[tuple, list[int]] = {}
        for i in range(n):
            groups.setdefault(masked(i), []).append(i)
        return groups

    def saturated(i: int) -> bool:
        return all(levels[i] >= _max_level(raw_rows[i][a], a in codes) for a in qi)

    active = {i for i in range(n)}
    groups = grouping()
    if all(len(g) >= k for g in groups.values()):
        active = set()

    while active:
        prev_sets = {frozenset(g) for g in groups.values()}
        advanced = False
        for i in active:
            if not saturated(i):
                levels[i] += 1
                advanced = True
        groups = grouping()
        still_active: set[int] = set()
        for members in groups.values():
            if not any(i in active for i in members):
                continue
            size = len(members)
            if size > k:
                continue
            if size == k and frozenset(members) in prev_sets:
                continue
            if size >= k and all(saturated(i) for i in members):
                continue
            still_active.update(i for i in members if i in active)
        if not advanced:
            if any(len(g) < k for g in groups.values()):
                raise AnonymizationError(
                    f"hierarchy exhausted before every class reached k={k}")
            break
        active = still_active

    if any(len(g) < k for g in grouping().values()):
        raise AnonymizationError(f"hierarchy exhausted before every class reached k={k}")

    out_rows = []
    for i in range(n):
        row = []
        for a in table.attributes:
            if a in qi:
                row.append(_generalize(raw_rows[i][a], levels[i], a in codes))
            else:
                row.append(raw_rows[i][a])
        out_rows.append(tuple(row))
    return AnonymizedTable(table.attributes, qi, tuple(out_rows), k)
