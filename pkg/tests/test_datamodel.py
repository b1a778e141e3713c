import pytest
from hypothesis import given, settings

from conftest import SAMPLE_TIDSETS, databases
from fedmine.datamodel import (AnonymizationError, DataError, Fragment, RelationSchema,
                               TransactionDatabase, TransactionParseError, VerticalIndex,
                               fragment_digest, k_anonymize, load_transaction_db,
                               parse_fragment, partition_horizontal, partition_vertical,
                               serialize_fragment, to_horizontal, to_vertical,
                               verify_digest)


class TestLoading:
    def test_sample_shape(self, sample_db):
        assert len(sample_db) == 6
        assert sample_db.alphabet == frozenset({1, 2, 3, 4, 5})
        assert sample_db.item_occurrences == 16

    def test_empty_input(self):
        db = load_transaction_db("")
        assert len(db) == 0
        assert db.alphabet == frozenset()

    def test_duplicate_item_rejected(self):
        with pytest.raises(TransactionParseError) as exc:
            load_transaction_db("7 7 3")
        assert exc.value.line_no == 1

    def test_non_integer_token_reports_line(self):
        with pytest.raises(TransactionParseError) as exc:
            load_transaction_db("1 2\n3 x")
        assert exc.value.line_no == 2

    def test_blank_lines_are_empty_transactions(self):
        db = load_transaction_db("1 2\n\n3")
        assert db.transactions[1] == frozenset()


class TestLayouts:
    def test_sample_vertical(self, sample_db):
        vert = to_vertical(sample_db)
        for item, tids in SAMPLE_TIDSETS.items():
            assert vert.tidsets[item] == tids

    def test_item_four_appears_in_both_transactions(self, sample_db):
        # the definition puts item 4 in tids 3 and 6, not just 3
        assert to_vertical(sample_db).tidsets[4] == (3, 6)

    def test_empty_db_empty_index(self):
        assert to_vertical(load_transaction_db("")).tidsets == {}

    def test_round_trip_sample(self, sample_db):
        assert to_horizontal(to_vertical(sample_db), len(sample_db)) == sample_db

    def test_to_horizontal_pads_empty_transactions(self):
        db = to_horizontal(VerticalIndex({1: (1,)}), 2)
        assert db.transactions == (frozenset({1}), frozenset())

    def test_to_horizontal_range_check(self):
        with pytest.raises(DataError):
            to_horizontal(VerticalIndex({1: (3,)}), 2)

    @given(databases())
    @settings(max_examples=60)
    def test_round_trip_property(self, db):
        assert to_horizontal(to_vertical(db), len(db)) == db


class TestVerticalPartition:
    def test_two_party_split(self, sample_db):
        frags = partition_vertical(
            sample_db, {1: "P1", 2: "P1", 3: "P2", 4: "P2", 5: "P2"}, "d1")
        by_party = {f.party: f for f in frags}
        assert by_party["P1"].items == frozenset({1, 2})
        assert by_party["P1"].tidsets[1] == SAMPLE_TIDSETS[1]
        assert by_party["P2"].items == frozenset({3, 4, 5})
        assert by_party["P2"].tidsets[4] == (3, 6)

    def test_single_party_holds_everything(self, sample_db):
        frags = partition_vertical(sample_db, {i: "P" for i in range(1, 6)})
        assert len(frags) == 1
        assert frags[0].tidsets == {i: SAMPLE_TIDSETS[i] for i in range(1, 6)}

    def test_unassigned_item_rejected(self, sample_db):
        with pytest.raises(DataError):
            partition_vertical(sample_db, {1: "P", 2: "P", 3: "P", 4: "P"})

    @given(databases())
    @settings(max_examples=40)
    def test_fragments_partition_the_alphabet(self, db):
        assignment = {i: f"P{i % 3}" for i in db.alphabet}
        frags = partition_vertical(db, assignment)
        union = frozenset()
        for f in frags:
            assert not union & f.items
            union |= f.items
        assert union == db.alphabet


class TestHorizontalPartition:
    def test_even_split(self, sample_db):
        parts = partition_horizontal(sample_db, 3)
        assert [len(p) for p in parts] == [2, 2, 2]

    def test_identity_split(self, sample_db):
        assert partition_horizontal(sample_db, 1)[0].transactions == sample_db.transactions

    def test_too_many_parts(self, sample_db):
        with pytest.raises(DataError):
            partition_horizontal(sample_db, 7)

    def test_earlier_parts_take_the_extra(self):
        db = TransactionDatabase.from_lists([{1}] * 5)
        assert [len(p) for p in partition_horizontal(db, 3)] == [2, 2, 1]

    @given(databases(min_transactions=1))
    @settings(max_examples=40)
    def test_concatenation_restores(self, db):
        parts = partition_horizontal(db, min(3, len(db)))
        joined = tuple(t for p in parts for t in p.transactions)
        assert joined == db.transactions


class TestAnonymization:
    def test_reference_table(self, patients):
        anon = k_anonymize(patients, ["ZIPcode", "Age"], 4, code_attrs=["ZIPcode"])
        assert anon.column("ZIPcode") == ("176**",) * 4 + ("1305*",) * 5
        assert anon.column("Age") == ("30,35",) * 4 + ("35,40",) * 5
        # sensitive column untouched, including the Alzheimer row
        assert anon.column("Disease") == (
            "Cancer", "BRCA Mutation", "Cancer", "Alzheimer", "Cancer",
            "Cancer", "Viral Infection", "Viral Infection", "Viral Infection")
        assert anon.min_class_size() >= 4

    def test_k_one_is_identity(self, patients):
        anon = k_anonymize(patients, ["ZIPcode", "Age"], 1, code_attrs=["ZIPcode"])
        assert anon.column("ZIPcode") == tuple(
            patients.valuations["ZIPcode"][o] for o in patients.objects)

    def test_k_beyond_rows_rejected(self):
        table = RelationSchema.from_csv("id,Age,D\n1,30,x\n2,31,y\n3,32,z\n")
        with pytest.raises(AnonymizationError):
            k_anonymize(table, ["Age"], 4)

    def test_class_sizes_reach_k(self):
        rows = ["id,Age,D"] + [f"{i},{20 + i % 7},v{i}" for i in range(30)]
        table = RelationSchema.from_csv("\n".join(rows) + "\n")
        for k in (2, 3, 5):
            anon = k_anonymize(table, ["Age"], k)
            assert anon.min_class_size() >= k

    def test_sensitive_multiset_preserved_per_row(self, patients):
        anon = k_anonymize(patients, ["ZIPcode", "Age"], 4, code_attrs=["ZIPcode"])
        original = [patients.row(o)["Disease"] for o in patients.objects]
        assert list(anon.column("Disease")) == original


class TestFragmentDigests:
    def _fragment(self, **overrides):
        base = dict(party="P1", db_name="d1", items=frozenset({1, 2}),
                    tidsets={1: (1, 3), 2: (2,)}, n_transactions=3)
        base.update(overrides)
        return Fragment(**base)

    def test_recompute_verifies(self):
        f = self._fragment()
        assert verify_digest(f)
        assert fragment_digest(f) == f.digest

    def test_flipped_tid_fails(self):
        f = self._fragment()
        tampered = Fragment(f.party, f.db_name, f.items,
                            {1: (1, 4), 2: (2,)}, f.n_transactions, f.digest)
        assert not verify_digest(tampered)

    def test_digest_ignores_party(self):
        a = self._fragment(party="P1")
        b = self._fragment(party="P2")
        assert a.digest == b.digest

    def test_digest_binds_db_name(self):
        a = self._fragment(db_name="d1")
        b = self._fragment(db_name="d2")
        assert a.digest != b.digest

    @pytest.mark.parametrize("mutation", ["add_tid", "drop_tid", "move_item"])
    def test_any_single_mutation_flips_verification(self, mutation):
        f = self._fragment()
        if mutation == "add_tid":
            tidsets = {1: (1, 2, 3), 2: (2,)}
        elif mutation == "drop_tid":
            tidsets = {1: (1,), 2: (2,)}
        else:
            tidsets = {1: (1, 3), 3: (2,)}
        items = frozenset(tidsets)
        tampered = Fragment(f.party, f.db_name, items, tidsets,
                            f.n_transactions, f.digest)
        assert not verify_digest(tampered)

    def test_serialization_round_trip(self):
        f = self._fragment()
        text = serialize_fragment(f)
        lines = text.strip().splitlines()
        assert lines[0] == "fragment d1 P1 1 2"
        assert lines[-1] == f.digest
        restored = parse_fragment(text, f.n_transactions)
        assert restored == f
        assert verify_digest(restored)
