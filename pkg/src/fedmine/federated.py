"""Levelwise federated itemset counting over vertical fragments, plus model merging.

Candidates whose items sit entirely at one party are counted locally there;
candidates spanning parties are counted through the masking ring protocol, so
no tidset ever leaves a party unmasked. The per-level loop is: join the
previous level's accepted itemsets, count every candidate, keep those meeting
the support threshold. The union of all levels feeds the merge pass that
produces one global code table.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from . import krimp
from .datamodel import Fragment, IntegrityError, TransactionDatabase, to_horizontal, verify_digest
from .datamodel import VerticalIndex
from .krimp import CodeTable, CodeTableEntry, Itemset, canon
from .protocol import (CollisionVerdict, ProtocolRejected, ProtocolTranscript,
                       collision_check, ring_intersection_count)

DEFAULT_THETA = 0.5
MAX_PROTOCOL_ATTEMPTS = 3

CROSS_PARTY = "cross-party protocol"


class DispatchError(Exception):
    """A candidate was routed to a party that does not hold all its items."""


@dataclass(frozen=True)
class CandidateCount:
    items: Itemset
    count: int
    provenance: str
    work_units: int = 0
    transcript: ProtocolTranscript | None = None


def local_count(party: Fragment, items: Iterable[int]) -> CandidateCount:
    """Support of an itemset held entirely by one party; no messages leave it."""
    items = frozenset(items)
    outside = items - party.items
    if outside:
        raise DispatchError(f"items {sorted(outside)} not held by party {party.party}")
    tidsets = [set(party.tidsets[i]) for i in sorted(items)]
    work = sum(len(ts) for ts in tidsets)
    inter = set.intersection(*tidsets) if tidsets else set()
    return CandidateCount(items, len(inter), f"party:{party.party}", work)


def _candidate_seed(master_seed: int, level: int, items: Itemset, attempt: int) -> int:
    text = f"{master_seed}:{level}:{','.join(map(str, canon(items)))}:{attempt}"
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")


def cross_party_count(items: Iterable[int], fragments: Sequence[Fragment],
                      seed: int, level: int = 0,
                      tau: float = 0.01) -> CandidateCount:
    """Count an itemset spanning parties via the masking ring.

    Each involved party first intersects its own items' tidsets into one local
    set; the ring protocol then intersects those across parties. A rejected
    round (collision rate above tau) retries with fresh keys up to the attempt
    cap before giving up.
    """
    items = frozenset(items)
    by_party: dict[str, list[int]] = {}
    owner: dict[int, Fragment] = {}
    for frag in fragments:
        for i in items & frag.items:
            by_party.setdefault(frag.party, []).append(i)
            owner[i] = frag
    unassigned = items - set(owner)
    if unassigned:
        raise DispatchError(f"items {sorted(unassigned)} not held by any party")
    if len(by_party) < 2:
        raise DispatchError("candidate does not span parties; use local_count")
    assert sum(len(v) for v in by_party.values()) == len(items)

    local_sets: dict[str, frozenset[int]] = {}
    work = 0
    for party in sorted(by_party):
        frag = owner[by_party[party][0]]
        tidsets = [set(frag.tidsets[i]) for i in sorted(by_party[party])]
        work += sum(len(ts) for ts in tidsets)
        local_sets[party] = frozenset(set.intersection(*tidsets))

    ring = sorted(local_sets)
    last: CollisionVerdict | None = None
    for attempt in range(1, MAX_PROTOCOL_ATTEMPTS + 1):
        count, transcript = ring_intersection_count(
            local_sets, ring, _candidate_seed(seed, level, items, attempt))
        verdict = collision_check(transcript, tau)
        if verdict.accepted:
            return CandidateCount(items, count, CROSS_PARTY, work, transcript)
        last = verdict
    raise ProtocolRejected(
        f"collision rate {last.rate:.4f} above tau after {MAX_PROTOCOL_ATTEMPTS} attempts")


@dataclass(frozen=True)
class TraceEntry:
    level: int
    items: Itemset
    mode: str  # "local" | "cross"
    count: int
    kept: bool

    def format(self) -> str:
        items = ",".join(str(i) for i in canon(self.items))
        return (f"k={self.level} c={items} mode={self.mode} "
                f"count={self.count} kept={'true' if self.kept else 'false'}")


@dataclass
class MiningResult:
    itemsets: dict[Itemset, int]
    trace: list[TraceEntry]
    counts: list[CandidateCount]
    n_transactions: int


def apriori_join(prev: Iterable[Itemset]) -> list[Itemset]:
    """Size-(k+1) candidates from size-k itemsets: prefix join plus subset pruning."""
    keys = sorted(canon(p) for p in prev)
    prev_set = set(keys)
    out: list[Itemset] = []
    for a_idx in range(len(keys)):
        for b_idx in range(a_idx + 1, len(keys)):
            a, b = keys[a_idx], keys[b_idx]
            if a[:-1] != b[:-1]:
                continue
            joined = a + (b[-1],)
            if all(joined[:i] + joined[i + 1:] in prev_set for i in range(len(joined))):
                out.append(frozenset(joined))
    return out


def run_levelwise_mining(fragments: Sequence[Fragment], min_count: int, seed: int,
                         tau: float = 0.01,
                         observer: Callable[[CandidateCount], None] | None = None
                         ) -> MiningResult:
    """The full federated loop: singletons, join, dispatch, threshold, union.

    Fragment digests are verified up front; a mismatch aborts the run. The
    first level takes every singleton unfiltered; levels two and up keep only
    candidates whose joined-database support reaches min_count.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    for frag in fragments:
        if not verify_digest(frag):
            raise IntegrityError(f"fragment {frag.fragment_id} failed digest verification")
    seen: set[int] = set()
    for frag in fragments:
        if seen & frag.items:
            raise IntegrityError("fragments overlap; not a vertical partition")
        seen |= frag.items
    owner: dict[int, Fragment] = {i: f for f in fragments for i in f.items}
    n_transactions = max((f.n_transactions for f in fragments), default=0)

    result = MiningResult({}, [], [], n_transactions)

    def record(cc: CandidateCount, level: int, mode: str, kept: bool) -> None:
        result.trace.append(TraceEntry(level, cc.items, mode, cc.count, kept))
        result.counts.append(cc)
        if observer is not None:
            observer(cc)

    level_sets: dict[Itemset, int] = {}
    for item in sorted(owner):
        cc = local_count(owner[item], (item,))
        record(cc, 1, "local", True)
        level_sets[cc.items] = cc.count
        result.itemsets[cc.items] = cc.count

    k = 2
    while level_sets:
        candidates = apriori_join(level_sets.keys())
        next_level: dict[Itemset, int] = {}
        for c in sorted(candidates, key=canon):
            parties = {owner[i].party for i in c}
            if len(parties) == 1:
                cc = local_count(owner[next(iter(c))], c)
                mode = "local"
            else:
                cc = cross_party_count(c, fragments, seed, level=k, tau=tau)
                mode = "cross"
            kept = cc.count >= min_count
            record(cc, k, mode, kept)
            if kept:
                next_level[c] = cc.count
                result.itemsets[c] = cc.count
        level_sets = next_level
        k += 1
    return result


def reconstruct_database(fragments: Sequence[Fragment]) -> TransactionDatabase:
    """The joined plaintext view available to the trusted evaluator in simulation."""
    tidsets: dict[int, tuple[int, ...]] = {}
    for frag in fragments:
        for item, tids in frag.tidsets.items():
            tidsets[item] = tuple(tids)
    n = max((f.n_transactions for f in fragments), default=0)
    return to_horizontal(VerticalIndex(tidsets), n)


@dataclass(frozen=True)
class MergeDecision:
    removed: Itemset
    parent: Itemset
    ratio: float
    size_before: float
    size_after: float
    accepted: bool


@dataclass
class GlobalModel:
    """One merged code table over the joined database, with its merge audit."""

    table: CodeTable
    counts: dict[Itemset, int]
    n_transactions: int
    sources: tuple[str, ...] = ()
    audit: list[MergeDecision] = field(default_factory=list)

    def support(self, items: Iterable[int]) -> int | None:
        return self.counts.get(frozenset(items))


def _assemble(itemsets: Mapping[Itemset, int], db: TransactionDatabase,
              source: str) -> CodeTable:
    supports = krimp.item_supports(db)
    entries: dict[Itemset, CodeTableEntry] = {}
    for items, count in itemsets.items():
        entries[items] = CodeTableEntry(items, count, 0)
    for item, sup in supports.items():
        single = frozenset((item,))
        entries.setdefault(single, CodeTableEntry(single, sup, 0))
    ordered = sorted(entries.values(), key=lambda e: krimp.cover_order_key(e.items, e.support))
    return krimp.with_usages(db, ordered, source)


def pruning_merging(itemsets, theta: float, fragments: Sequence[Fragment],
                    source: str = "merged") -> GlobalModel:
    """Merge subset entries into their best superset parent under the ratio rule.

    Accepts either one itemset->count mapping or a collection of code tables
    (concatenated first). For each non-singleton X with a strict superset Y
    where count(Y)/count(X) >= theta, X is dropped and the database re-covered;
    the drop sticks only if the total encoded size does not grow.
    """
    if isinstance(itemsets, Mapping):
        counts = dict(itemsets)
    else:
        counts = {}
        for table in itemsets:
            for e in table.entries:
                counts.setdefault(e.items, e.support)
    db = reconstruct_database(fragments)
    db_supports = krimp.item_supports(db)
    for item in db.alphabet:
        counts.setdefault(frozenset((item,)), db_supports[item])

    st_lengths = krimp.standard_code_lengths(db)
    table = _assemble(counts, db, source)
    current = krimp.total_encoded_size(db, table, st_lengths)
    audit: list[MergeDecision] = []

    for entry in list(table.entries):
        x = entry.items
        if len(x) < 2 or table.entry_for(x) is None:
            continue
        cx = counts.get(x, 0)
        if cx == 0:
            continue
        parents = [e for e in table.entries if x < e.items]
        eligible = [e for e in parents if counts.get(e.items, 0) / cx >= theta]
        if not eligible:
            continue
        best = min(eligible, key=lambda e: (-e.usage, -counts.get(e.items, 0),
                                            canon(e.items)))
        remaining = [e for e in table.entries if e.items != x]
        trial = krimp.with_usages(db, remaining, source)
        size = krimp.total_encoded_size(db, trial, st_lengths)
        accepted = size <= current + krimp.ACCEPT_EPS
        audit.append(MergeDecision(x, best.items, counts[best.items] / cx,
                                   current, size, accepted))
        if accepted:
            table, current = trial, size

    sources = tuple(f.fragment_id for f in fragments)
    model_counts = {e.items: counts.get(e.items, e.support) for e in table.entries}
    return GlobalModel(table, model_counts, len(db), sources, audit)
