"""Query parsing, execution over models or fragments, and answer encryption.

Grammar (keywords case-insensitive):

    SELECT <attrs|*> FROM <db> [JOIN <db2> ON id] WHERE HAS <item> [AND HAS <item>]* [MODE model|exact]
    TOPK <k> ITEMSETS FROM <db>

Exact mode answers from fragments (counts routed through the secure dispatch);
model mode answers from the merged code table via support estimation. Answers
are symbol-coded rows plus the symbol map, sealed with AES-GCM so only the key
holder can read and decode them.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from . import federated, krimp
from .datamodel import Fragment
from .federated import GlobalModel
from .krimp import Itemset, canon

NONCE_BYTES = 12
TAG_BYTES = 16


class QueryError(Exception):
    pass


class QueryParseError(QueryError):
    def __init__(self, message: str, position: int):
        super().__init__(f"syntax error at token {position}: {message}")
        self.position = position


class UnknownDatabaseError(QueryError):
    pass


class ModelInsufficientError(QueryError):
    """The model cannot answer this query; rerun in exact mode."""

    def __init__(self, detail: str):
        super().__init__(f"model insufficient, rerun exact: {detail}")


class AuthenticationError(QueryError):
    pass


@dataclass(frozen=True)
class QueryAST:
    op: str  # "select" | "topk"
    db: str
    join_db: str | None = None
    predicate: Itemset = frozenset()
    attrs: tuple[int, ...] | None = None  # None means '*'
    k: int = 0
    mode: str = "model"


def parse_query(text: str, known_dbs: Iterable[str] | None = None) -> QueryAST:
    tokens = text.split()
    if not tokens:
        raise QueryParseError("empty query", 1)

    pos = 0

    def peek() -> str | None:
        return tokens[pos] if pos < len(tokens) else None

    def take(expect: str | None = None) -> str:
        nonlocal pos
        if pos >= len(tokens):
            raise QueryParseError(f"unexpected end of query, expected {expect or 'token'}",
                                  pos + 1)
        tok = tokens[pos]
        pos += 1
        if expect is not None and tok.upper() != expect:
            raise QueryParseError(f"expected {expect}, got {tok!r}", pos)
        return tok

    def take_int(what: str) -> int:
        tok = take(None)
        try:
            return int(tok)
        except ValueError:
            raise QueryParseError(f"expected {what}, got {tok!r}", pos) from None

    head = take().upper()
    if head == "TOPK":
        k = take_int("an integer k")
        if k < 1:
            raise QueryParseError("k must be >= 1", pos)
        take("ITEMSETS")
        take("FROM")
        db = take(None)
        if pos != len(tokens):
            raise QueryParseError(f"trailing tokens after {db!r}", pos + 1)
        _check_db(db, known_dbs, pos)
        return QueryAST("topk", db, k=k)

    if head != "SELECT":
        raise QueryParseError(f"expected SELECT or TOPK, got {tokens[0]!r}", 1)

    attr_tokens: list[str] = []
    while peek() is not None and peek().upper() != "FROM":
        attr_tokens.append(take())
    if not attr_tokens:
        raise QueryParseError("missing attribute list before FROM", pos + 1)
    if attr_tokens == ["*"]:
        attrs: tuple[int, ...] | None = None
    else:
        try:
            attrs = tuple(int(part) for tok in attr_tokens
                          for part in tok.split(",") if part)
        except ValueError:
            raise QueryParseError("attributes must be item ids or '*'", pos) from None
    take("FROM")
    db = take(None)
    _check_db(db, known_dbs, pos)

    join_db = None
    if peek() is not None and peek().upper() == "JOIN":
        take("JOIN")
        join_db = take(None)
        _check_db(join_db, known_dbs, pos)
        take("ON")
        on = take(None)
        if on.lower() != "id":
            raise QueryParseError("joins match on the shared object id only", pos)

    take("WHERE")
    predicate: set[int] = set()
    take("HAS")
    predicate.add(take_int("an item id"))
    while peek() is not None and peek().upper() == "AND":
        take("AND")
        take("HAS")
        predicate.add(take_int("an item id"))

    mode = "model"
    if peek() is not None and peek().upper() == "MODE":
        take("MODE")
        mode = take(None).lower()
        if mode not in ("model", "exact"):
            raise QueryParseError("mode must be 'model' or 'exact'", pos)
    if pos != len(tokens):
        raise QueryParseError(f"trailing tokens starting at {tokens[pos]!r}", pos + 1)
    return QueryAST("select", db, join_db, frozenset(predicate), attrs, mode=mode)


def _check_db(db: str, known: Iterable[str] | None, pos: int) -> None:
    if known is not None and db not in set(known):
        raise UnknownDatabaseError(f"unknown database {db!r}")


# ---------------------------------------------------------------------------
# Support estimation over a model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SupportEstimate:
    count: int
    exact: bool


def estimate_support(items: Iterable[int], model: GlobalModel) -> SupportEstimate:
    """Tracked count when the itemset is in the model, else a flagged estimate.

    The estimate is the larger of the superset-usage lower bound and the
    independence product rounded down.
    """
    x = frozenset(items)
    if not x:
        return SupportEstimate(model.n_transactions, True)
    tracked = model.counts.get(x)
    if tracked is not None:
        return SupportEstimate(tracked, True)
    alphabet = model.table.alphabet
    unknown = x - alphabet
    if unknown:
        raise ModelInsufficientError(f"items {sorted(unknown)} not in the model alphabet")
    lower = sum(e.usage for e in model.table.entries if x <= e.items)
    n = model.n_transactions
    prod = 1.0
    for i in x:
        prod *= model.counts.get(frozenset((i,)), 0) / n if n else 0.0
    independence = int(prod * n)
    return SupportEstimate(max(lower, independence), False)


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SelectRow:
    tid: int
    symbols: tuple[str, ...]


@dataclass(frozen=True)
class SymbolRow:
    symbol: str
    count: int


@dataclass
class QueryResult:
    op: str
    mode: str
    count: int
    approximate: bool
    rows: list
    symbol_items: dict[str, tuple[int, ...]]

    def to_payload(self) -> dict:
        rows = []
        for r in self.rows:
            if isinstance(r, SelectRow):
                rows.append({"tid": r.tid, "symbols": list(r.symbols)})
            else:
                rows.append({"symbol": r.symbol, "count": r.count})
        return {
            "op": self.op,
            "mode": self.mode,
            "count": self.count,
            "approximate": self.approximate,
            "rows": rows,
            "symbols": {s: list(items) for s, items in sorted(self.symbol_items.items())},
        }


@dataclass
class QueryContext:
    models: Mapping[str, GlobalModel]
    fragments: Mapping[str, Sequence[Fragment]] = field(default_factory=dict)
    seed: int = 0
    tau: float = 0.01


def symbol_table(model: GlobalModel, prefix: str = "") -> dict[Itemset, str]:
    return {e.items: f"{prefix}s{i}" for i, e in enumerate(model.table.entries)}


def _transactions_for(fragments: Sequence[Fragment], tids: set[int]) -> dict[int, set[int]]:
    out: dict[int, set[int]] = {t: set() for t in tids}
    for frag in fragments:
        for item, item_tids in frag.tidsets.items():
            for t in item_tids:
                if t in out:
                    out[t].add(item)
    return out


def _matching_tids(fragments: Sequence[Fragment], predicate: Itemset) -> set[int]:
    owner: dict[int, Fragment] = {i: f for f in fragments for i in f.items}
    if any(i not in owner for i in predicate):
        return set()
    tidsets = [set(owner[i].tidsets[i]) for i in sorted(predicate)]
    if not tidsets:
        n = max((f.n_transactions for f in fragments), default=0)
        return set(range(1, n + 1))
    return set.intersection(*tidsets)


def _secure_count(fragments: Sequence[Fragment], predicate: Itemset,
                  seed: int, tau: float) -> int:
    owner = {i: f for f in fragments for i in f.items}
    if any(i not in owner for i in predicate):
        return 0
    parties = {owner[i].party for i in predicate}
    if len(parties) == 1:
        return federated.local_count(owner[next(iter(predicate))], predicate).count
    return federated.cross_party_count(predicate, fragments, seed, tau=tau).count


def _symbolize(items: set[int], table_map: dict[Itemset, str],
               model: GlobalModel) -> tuple[str, ...]:
    used = krimp.cover(items, model.table)
    return tuple(table_map[u] for u in used)


def execute_query(ast: QueryAST, ctx: QueryContext) -> QueryResult:
    if ast.op == "topk":
        return _run_topk(ast, ctx)
    if ast.join_db is not None:
        return _run_join(ast, ctx)
    return _run_select(ast, ctx)


def _model_for(ctx: QueryContext, db: str) -> GlobalModel:
    if db not in ctx.models:
        raise UnknownDatabaseError(f"no model for database {db!r}")
    return ctx.models[db]


def _run_topk(ast: QueryAST, ctx: QueryContext) -> QueryResult:
    model = _model_for(ctx, ast.db)
    table_map = symbol_table(model)
    ranked = sorted(model.counts.items(), key=lambda kv: (-kv[1], canon(kv[0])))
    top = ranked[: ast.k]
    rows = [SymbolRow(table_map[items], count) for items, count in top]
    symbol_items = {table_map[items]: canon(items) for items, _ in top}
    return QueryResult("topk", "model", len(rows), False, rows, symbol_items)


def _run_select(ast: QueryAST, ctx: QueryContext) -> QueryResult:
    model = _model_for(ctx, ast.db)
    table_map = symbol_table(model)
    if ast.mode == "model":
        est = estimate_support(ast.predicate, model)
        rows = []
        symbol_items = {}
        for e in model.table.entries:
            if ast.predicate <= e.items and e.usage > 0:
                sym = table_map[e.items]
                rows.append(SymbolRow(sym, model.counts.get(e.items, e.support)))
                symbol_items[sym] = canon(e.items)
        return QueryResult("select", "model", est.count, not est.exact, rows, symbol_items)

    fragments = ctx.fragments.get(ast.db)
    if not fragments:
        raise QueryError(f"no fragments deployed for database {ast.db!r}")
    tids = _matching_tids(fragments, ast.predicate)
    count = _secure_count(fragments, ast.predicate, ctx.seed, ctx.tau)
    if count != len(tids):
        raise QueryError("secure count disagrees with evaluator tidset intersection")
    transactions = _transactions_for(fragments, tids)
    reverse = {sym: items for items, sym in table_map.items()}
    rows = []
    symbol_items: dict[str, tuple[int, ...]] = {}
    for tid in sorted(tids):
        items = transactions[tid]
        if ast.attrs is not None:
            items = items & set(ast.attrs)
        symbols = _symbolize(items, table_map, model)
        for s in symbols:
            symbol_items.setdefault(s, canon(reverse[s]))
        rows.append(SelectRow(tid, symbols))
    return QueryResult("select", "exact", count, False, rows, symbol_items)


def _run_join(ast: QueryAST, ctx: QueryContext) -> QueryResult:
    model_a = _model_for(ctx, ast.db)
    model_b = _model_for(ctx, ast.join_db)
    map_a = symbol_table(model_a, "a:")
    map_b = symbol_table(model_b, "b:")
    if ast.mode == "model":
        pred_a = ast.predicate & model_a.table.alphabet
        pred_b = ast.predicate & model_b.table.alphabet
        uncovered = ast.predicate - (model_a.table.alphabet | model_b.table.alphabet)
        if uncovered:
            raise ModelInsufficientError(f"items {sorted(uncovered)} in neither model")
        est_a = estimate_support(pred_a, model_a)
        est_b = estimate_support(pred_b, model_b)
        n = min(model_a.n_transactions, model_b.n_transactions)
        return QueryResult("join", "model", min(est_a.count, est_b.count, n),
                           True, [], {})

    frags_a = ctx.fragments.get(ast.db)
    frags_b = ctx.fragments.get(ast.join_db)
    if not frags_a or not frags_b:
        raise QueryError("both databases need deployed fragments for exact joins")
    n = min(max(f.n_transactions for f in frags_a),
            max(f.n_transactions for f in frags_b))
    all_tids = set(range(1, n + 1))
    tx_a = _transactions_for(frags_a, all_tids)
    tx_b = _transactions_for(frags_b, all_tids)
    reverse = {sym: items for items, sym in map_a.items()}
    reverse.update({sym: items for items, sym in map_b.items()})
    rows = []
    symbol_items: dict[str, tuple[int, ...]] = {}
    for tid in range(1, n + 1):
        combined = tx_a[tid] | tx_b[tid]
        if not ast.predicate <= combined:
            continue
        items_a, items_b = tx_a[tid], tx_b[tid]
        if ast.attrs is not None:
            items_a = items_a & set(ast.attrs)
            items_b = items_b & set(ast.attrs)
        symbols = _symbolize(items_a, map_a, model_a) + _symbolize(items_b, map_b, model_b)
        for sym in symbols:
            symbol_items.setdefault(sym, canon(reverse[sym]))
        rows.append(SelectRow(tid, symbols))
    return QueryResult("join", "exact", len(rows), False, rows, symbol_items)


# ---------------------------------------------------------------------------
# Answer encryption: nonce || tag || ciphertext, base64 on text transports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QueryAnswer:
    nonce: bytes
    tag: bytes
    ciphertext: bytes

    def to_bytes(self) -> bytes:
        return self.nonce + self.tag + self.ciphertext

    def to_base64(self) -> str:
        return base64.b64encode(self.to_bytes()).decode("ascii")

    @classmethod
    def from_bytes(cls, raw: bytes) -> "QueryAnswer":
        if len(raw) < NONCE_BYTES + TAG_BYTES:
            raise AuthenticationError("answer too short to contain nonce and tag")
        return cls(raw[:NONCE_BYTES], raw[NONCE_BYTES:NONCE_BYTES + TAG_BYTES],
                   raw[NONCE_BYTES + TAG_BYTES:])

    @classmethod
    def from_base64(cls, text: str) -> "QueryAnswer":
        return cls.from_bytes(base64.b64decode(text))


def encrypt_answer(result: QueryResult, key: bytes, nonce: bytes) -> QueryAnswer:
    """Seal symbol-coded rows plus the symbol map for the key holder."""
    if len(nonce) != NONCE_BYTES:
        raise ValueError(f"nonce must be {NONCE_BYTES} bytes")
    payload = json.dumps(result.to_payload(), sort_keys=True,
                         separators=(",", ":")).encode("utf-8")
    sealed = AESGCM(key).encrypt(nonce, payload, None)
    return QueryAnswer(nonce, sealed[-TAG_BYTES:], sealed[:-TAG_BYTES])


@dataclass(frozen=True)
class DecodedRow:
    tid: int | None
    symbols: tuple[str, ...]
    items: tuple[int, ...]
    count: int | None = None


@dataclass(frozen=True)
class DecodedAnswer:
    payload: dict
    rows: tuple[DecodedRow, ...]

    def rows_csv(self) -> str:
        lines = ["tid,symbols"]
        for r in self.rows:
            tid = "" if r.tid is None else str(r.tid)
            lines.append(f"{tid},{' '.join(r.symbols)}")
        return "\n".join(lines) + "\n"


def decrypt_answer(answer: QueryAnswer, key: bytes) -> DecodedAnswer:
    """Verify the tag, then decode rows through the embedded symbol map."""
    try:
        plain = AESGCM(key).decrypt(answer.nonce, answer.ciphertext + answer.tag, None)
    except InvalidTag:
        raise AuthenticationError("authentication failed: wrong key or tampered answer") from None
    payload = json.loads(plain.decode("utf-8"))
    symbols = {s: tuple(items) for s, items in payload.get("symbols", {}).items()}
    rows = []
    for row in payload.get("rows", []):
        if "tid" in row:
            syms = tuple(row["symbols"])
            items = sorted(set().union(*[set(symbols[s]) for s in syms]) if syms else set())
            rows.append(DecodedRow(row["tid"], syms, tuple(items)))
        else:
            sym = row["symbol"]
            rows.append(DecodedRow(None, (sym,), symbols.get(sym, ()), row["count"]))
    return DecodedAnswer(payload, tuple(rows))
