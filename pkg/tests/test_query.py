import random

import pytest

from conftest import brute_support, random_database
from fedmine.datamodel import TransactionDatabase, partition_vertical
from fedmine.federated import pruning_merging, run_levelwise_mining
from fedmine.query import (AuthenticationError, ModelInsufficientError, QueryAnswer,
                           QueryContext, QueryParseError, SelectRow, UnknownDatabaseError,
                           decrypt_answer, encrypt_answer, estimate_support, execute_query,
                           parse_query)

KEY = bytes(range(32))
NONCE = bytes(12)


def build_model(db, parties=2, min_count=2, theta=0.5, seed=7, name="d1"):
    assignment = {i: f"p{idx % parties}" for idx, i in enumerate(sorted(db.alphabet))}
    frags = partition_vertical(db, assignment, name)
    mining = run_levelwise_mining(frags, min_count, seed=seed)
    model = pruning_merging(mining.itemsets, theta, frags)
    return model, frags


@pytest.fixture
def sample_ctx(sample_db):
    model, frags = build_model(sample_db)
    return QueryContext(models={"d1": model}, fragments={"d1": frags})


# ---------------------------------------------------------------------------
# Reference engine: plain scans over the horizontal layout
# ---------------------------------------------------------------------------

def reference_select(db: TransactionDatabase, predicate, attrs=None):
    rows = []
    for tid, t in enumerate(db.transactions, start=1):
        if frozenset(predicate) <= t:
            items = t if attrs is None else t & frozenset(attrs)
            rows.append((tid, frozenset(items)))
    return rows


def reference_join(db_a: TransactionDatabase, db_b: TransactionDatabase,
                   predicate, attrs=None):
    n = min(len(db_a), len(db_b))
    rows = []
    for tid in range(1, n + 1):
        combined = db_a.transactions[tid - 1] | db_b.transactions[tid - 1]
        if frozenset(predicate) <= combined:
            items = combined if attrs is None else combined & frozenset(attrs)
            rows.append((tid, frozenset(items)))
    return rows


def decoded_exact_rows(result):
    out = []
    for row in result.rows:
        assert isinstance(row, SelectRow)
        items = frozenset(i for s in row.symbols for i in result.symbol_items[s])
        out.append((row.tid, items))
    return out


class TestParser:
    def test_select_star_default_mode(self):
        ast = parse_query("SELECT * FROM d1 WHERE HAS 1 AND HAS 3")
        assert ast.op == "select"
        assert ast.db == "d1"
        assert ast.predicate == frozenset({1, 3})
        assert ast.attrs is None
        assert ast.mode == "model"

    def test_topk(self):
        ast = parse_query("TOPK 5 ITEMSETS FROM d1")
        assert ast.op == "topk" and ast.k == 5 and ast.db == "d1"

    def test_missing_attrs_position(self):
        with pytest.raises(QueryParseError) as exc:
            parse_query("SELECT FROM")
        assert exc.value.position == 2

    def test_case_insensitive_keywords(self):
        ast = parse_query("select * from d1 where has 2 mode exact")
        assert ast.mode == "exact" and ast.predicate == frozenset({2})

    def test_projection_attrs(self):
        ast = parse_query("SELECT 1,3 FROM d1 WHERE HAS 1")
        assert ast.attrs == (1, 3)

    def test_join_clause(self):
        ast = parse_query("SELECT * FROM d1 JOIN d2 ON id WHERE HAS 1")
        assert ast.join_db == "d2"

    def test_unknown_database(self):
        with pytest.raises(UnknownDatabaseError):
            parse_query("SELECT * FROM nope WHERE HAS 1", known_dbs=["d1"])

    def test_bad_mode(self):
        with pytest.raises(QueryParseError):
            parse_query("SELECT * FROM d1 WHERE HAS 1 MODE turbo")

    def test_trailing_tokens(self):
        with pytest.raises(QueryParseError):
            parse_query("TOPK 2 ITEMSETS FROM d1 EXTRA")

    def test_where_required(self):
        with pytest.raises(QueryParseError):
            parse_query("SELECT * FROM d1")


class TestEstimates:
    def test_tracked_singleton_exact(self, sample_db):
        model, _ = build_model(sample_db)
        est = estimate_support({1}, model)
        assert est.count == 4 and est.exact

    def test_empty_itemset_is_database_size(self, sample_db):
        model, _ = build_model(sample_db)
        est = estimate_support(set(), model)
        assert est.count == 6 and est.exact

    def test_tracked_pair_exact(self, sample_db):
        model, _ = build_model(sample_db, min_count=3)
        if frozenset({1, 3}) in model.counts:
            est = estimate_support({1, 3}, model)
            assert est.count == brute_support(sample_db, {1, 3}) and est.exact

    def test_absent_itemset_flagged_and_bounded(self, sample_db):
        model, _ = build_model(sample_db, min_count=3)
        absent = [x for x in (frozenset({4, 5}), frozenset({2, 5}), frozenset({1, 4}))
                  if x not in model.counts]
        for x in absent:
            est = estimate_support(x, model)
            lower = sum(e.usage for e in model.table.entries if x <= e.items)
            assert not est.exact
            assert est.count >= lower

    def test_unknown_item_signals_model_insufficient(self, sample_db):
        model, _ = build_model(sample_db)
        with pytest.raises(ModelInsufficientError):
            estimate_support({42}, model)

    def test_in_model_estimates_match_exact_supports(self, sample_db):
        model, _ = build_model(sample_db, min_count=2)
        for items, count in model.counts.items():
            est = estimate_support(items, model)
            assert est.exact and est.count == count == brute_support(sample_db, items)


class TestExecution:
    def test_exact_select_sample(self, sample_db, sample_ctx):
        ast = parse_query("SELECT * FROM d1 WHERE HAS 1 AND HAS 3 MODE exact")
        result = execute_query(ast, sample_ctx)
        assert result.count == 3
        assert decoded_exact_rows(result) == reference_select(sample_db, {1, 3})

    def test_exact_projection(self, sample_db, sample_ctx):
        ast = parse_query("SELECT 1,5 FROM d1 WHERE HAS 1 MODE exact")
        result = execute_query(ast, sample_ctx)
        assert decoded_exact_rows(result) == reference_select(sample_db, {1}, {1, 5})

    def test_exact_unknown_item_yields_empty(self, sample_ctx):
        ast = parse_query("SELECT * FROM d1 WHERE HAS 40 MODE exact")
        result = execute_query(ast, sample_ctx)
        assert result.count == 0 and result.rows == []

    def test_model_select_flags_estimates(self, sample_ctx):
        ast = parse_query("SELECT * FROM d1 WHERE HAS 1 AND HAS 3")
        result = execute_query(ast, sample_ctx)
        assert result.mode == "model"
        # supporting symbols are supersets of the predicate
        for row in result.rows:
            assert frozenset({1, 3}) <= frozenset(result.symbol_items[row.symbol])

    def test_self_join_pairs_each_object_once(self, sample_db, sample_ctx):
        ast = parse_query("SELECT * FROM d1 JOIN d1 ON id WHERE HAS 1 MODE exact")
        result = execute_query(ast, sample_ctx)
        tids = [r.tid for r in result.rows]
        assert tids == sorted(set(tids))
        assert decoded_exact_rows(result) == reference_join(sample_db, sample_db, {1})

    def test_topk_deterministic_order(self, sample_db, sample_ctx):
        ast = parse_query("TOPK 3 ITEMSETS FROM d1")
        result = execute_query(ast, sample_ctx)
        got = [(result.symbol_items[r.symbol], r.count) for r in result.rows]
        ranked = sorted(((tuple(sorted(i)), c) for i, c in
                         sample_ctx.models["d1"].counts.items()),
                        key=lambda ic: (-ic[1], ic[0]))
        assert got == ranked[:3]

    def test_grammar_coverage_exact_equals_reference(self):
        rng = random.Random(424242)
        checked = 0
        for _ in range(12):
            db = random_database(rng, max_items=8, max_tx=25, density=0.45, min_tx=2)
            model, frags = build_model(db, parties=rng.randint(1, 3),
                                       min_count=rng.choice([1, 2]), seed=rng.randrange(99))
            ctx = QueryContext(models={"d1": model}, fragments={"d1": frags},
                               seed=rng.randrange(1 << 20))
            items = sorted(db.alphabet)
            for _ in range(20):
                pred = rng.sample(items, k=min(len(items), rng.randint(1, 3)))
                attrs = None
                if rng.random() < 0.4:
                    attrs = rng.sample(items, k=rng.randint(1, len(items)))
                    attr_text = ",".join(map(str, attrs))
                else:
                    attr_text = "*"
                joined = " JOIN d1 ON id" if rng.random() < 0.3 else ""
                text = (f"SELECT {attr_text} FROM d1{joined} WHERE "
                        + " AND ".join(f"HAS {i}" for i in pred) + " MODE exact")
                result = execute_query(parse_query(text, known_dbs=["d1"]), ctx)
                if joined:
                    want = reference_join(db, db, set(pred),
                                          set(attrs) if attrs else None)
                else:
                    want = reference_select(db, set(pred),
                                            set(attrs) if attrs else None)
                assert decoded_exact_rows(result) == want
                checked += 1
        assert checked >= 200


class TestEncryption:
    def _answer(self, sample_ctx):
        ast = parse_query("SELECT * FROM d1 WHERE HAS 1 AND HAS 3 MODE exact")
        result = execute_query(ast, sample_ctx)
        return result, encrypt_answer(result, KEY, NONCE)

    def test_round_trip(self, sample_ctx):
        result, answer = self._answer(sample_ctx)
        decoded = decrypt_answer(answer, KEY)
        assert decoded.payload["count"] == result.count
        assert [r.tid for r in decoded.rows] == [r.tid for r in result.rows]

    def test_wrong_key_rejected(self, sample_ctx):
        _, answer = self._answer(sample_ctx)
        with pytest.raises(AuthenticationError):
            decrypt_answer(answer, bytes(32))

    def test_every_single_byte_tamper_fails(self, sample_ctx):
        _, answer = self._answer(sample_ctx)
        raw = answer.to_bytes()
        for pos in range(len(raw)):
            mutated = bytearray(raw)
            mutated[pos] ^= 0x01
            with pytest.raises(AuthenticationError):
                decrypt_answer(QueryAnswer.from_bytes(bytes(mutated)), KEY)

    def test_wire_layout(self, sample_ctx):
        _, answer = self._answer(sample_ctx)
        raw = answer.to_bytes()
        assert raw[:12] == answer.nonce
        assert raw[12:28] == answer.tag
        assert QueryAnswer.from_base64(answer.to_base64()) == answer

    def test_sentinel_items_not_in_envelope(self):
        sentinel = 987654321
        db = TransactionDatabase.from_lists([{sentinel, 7}, {sentinel}, {7}])
        model, frags = build_model(db, parties=2, min_count=1)
        ctx = QueryContext(models={"d1": model}, fragments={"d1": frags})
        ast = parse_query(f"SELECT * FROM d1 WHERE HAS {sentinel} MODE exact")
        result = execute_query(ast, ctx)
        assert result.count == 2
        answer = encrypt_answer(result, KEY, NONCE)
        assert str(sentinel).encode() not in answer.to_bytes()

    def test_csv_rendering(self, sample_ctx):
        _, answer = self._answer(sample_ctx)
        decoded = decrypt_answer(answer, KEY)
        csv = decoded.rows_csv()
        lines = csv.strip().splitlines()
        assert lines[0] == "tid,symbols"
        assert len(lines) == 1 + len(decoded.rows)
