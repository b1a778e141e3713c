import random
from pathlib import Path

import pytest
from hypothesis import strategies as st

from fedmine.datamodel import RelationSchema, TransactionDatabase, load_transaction_db

DATA_DIR = Path(__file__).resolve().parent.parent / "data"

SAMPLE_TEXT = "2 1 5 3\n2 3\n1 4\n3 1 5\n2 1 3\n2 4"

# Tidsets of the bundled six-transaction sample, by brute-force scan.
SAMPLE_TIDSETS = {
    1: (1, 3, 4, 5),
    2: (1, 2, 5, 6),
    3: (1, 2, 4, 5),
    4: (3, 6),
    5: (1, 4),
}


@pytest.fixture
def sample_db() -> TransactionDatabase:
    return load_transaction_db(SAMPLE_TEXT)


@pytest.fixture
def patients() -> RelationSchema:
    return RelationSchema.from_csv((DATA_DIR / "patients.csv").read_text())


def brute_support(db: TransactionDatabase, items) -> int:
    """Independent oracle: direct scan of the horizontal layout."""
    items = frozenset(items)
    return sum(1 for t in db.transactions if items <= t)


def random_database(rng: random.Random, max_items: int, max_tx: int,
                    density: float = 0.4, min_tx: int = 0) -> TransactionDatabase:
    n_items = rng.randint(1, max_items)
    n_tx = rng.randint(min_tx, max_tx)
    lists = []
    for _ in range(n_tx):
        lists.append({i for i in range(1, n_items + 1) if rng.random() < density})
    return TransactionDatabase.from_lists(lists)


@st.composite
def databases(draw, max_items: int = 6, max_transactions: int = 10,
              min_transactions: int = 0):
    n_items = draw(st.integers(min_value=1, max_value=max_items))
    items = st.sampled_from(range(1, n_items + 1))
    lists = draw(st.lists(st.frozensets(items, max_size=n_items),
                          min_size=min_transactions, max_size=max_transactions))
    return TransactionDatabase.from_lists(lists)
