import json
import threading
import urllib.error
import urllib.request

import pytest

from conftest import SAMPLE_TEXT
from fedmine import cli, server
from fedmine.query import QueryAnswer, decrypt_answer

KEY = bytes(range(32))


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    base = tmp_path_factory.mktemp("serve")
    sample = base / "sample.dat"
    sample.write_text(SAMPLE_TEXT + "\n")
    out = base / "out"
    assert cli.main(["mine", str(sample), "--scenario", "heterogeneous",
                     "--min-count", "2", "--seed", "42", "--parties", "3",
                     "--out", str(out)]) == 0
    return sorted(out.iterdir())[0]


@pytest.fixture(scope="module")
def endpoint(run_dir):
    srv = server.make_server(run_dir, KEY, "127.0.0.1", 0, seed=5)
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{srv.server_address[1]}"
    srv.shutdown()


def post(url, payload):
    req = urllib.request.Request(url, data=json.dumps(payload).encode(),
                                 headers={"Content-Type": "application/json"})
    with urllib.request.urlopen(req) as resp:
        return json.loads(resp.read())


def get(url):
    with urllib.request.urlopen(url) as resp:
        return json.loads(resp.read())


class TestQueryEndpoint:
    def test_answer_is_ciphertext_only(self, endpoint):
        resp = post(f"{endpoint}/query",
                    {"text": "SELECT * FROM d1 WHERE HAS 1 AND HAS 3", "mode": "exact"})
        assert set(resp) == {"answer"}
        decoded = decrypt_answer(QueryAnswer.from_base64(resp["answer"]), KEY)
        assert decoded.payload["count"] == 3
        assert [r.tid for r in decoded.rows] == [1, 4, 5]

    def test_parse_error_status_and_position(self, endpoint):
        with pytest.raises(urllib.error.HTTPError) as exc:
            post(f"{endpoint}/query", {"text": "SELECT FROM"})
        assert exc.value.code == 400
        body = json.loads(exc.value.read())
        assert body["position"] == 2

    def test_unknown_database_404(self, endpoint):
        with pytest.raises(urllib.error.HTTPError) as exc:
            post(f"{endpoint}/query", {"text": "SELECT * FROM nope WHERE HAS 1"})
        assert exc.value.code == 404

    def test_model_insufficient_409(self, endpoint):
        with pytest.raises(urllib.error.HTTPError) as exc:
            post(f"{endpoint}/query", {"text": "SELECT * FROM d1 WHERE HAS 77"})
        assert exc.value.code == 409

    def test_fresh_nonce_per_answer(self, endpoint):
        text = {"text": "TOPK 2 ITEMSETS FROM d1"}
        a = QueryAnswer.from_base64(post(f"{endpoint}/query", text)["answer"])
        b = QueryAnswer.from_base64(post(f"{endpoint}/query", text)["answer"])
        assert a.nonce != b.nonce
        assert decrypt_answer(a, KEY).payload == decrypt_answer(b, KEY).payload


class TestClusterEndpoint:
    def test_topology_shape(self, endpoint):
        view = get(f"{endpoint}/cluster")
        assert len(view["nodes"]) == 9
        assert sorted(view["csps"]) == ["aws", "azure", "gcp"]
        placed = sum(n["fragments"] for n in view["nodes"])
        assert placed == 3

    def test_rebalance_remove_shifts_fragments(self, endpoint):
        view = get(f"{endpoint}/cluster")
        loaded = next(n for n in view["nodes"] if n["fragments"] and n["role"] == "slave")
        after = post(f"{endpoint}/rebalance", {"action": "remove", "node": loaded["name"]})
        assert all(n["name"] != loaded["name"] for n in after["nodes"])
        assert sum(n["fragments"] for n in after["nodes"]) == 3

    def test_rebalance_add_node(self, endpoint):
        before = get(f"{endpoint}/cluster")
        after = post(f"{endpoint}/rebalance",
                     {"action": "add", "node": "gcp-c1-s9", "cloud": "gcp-c1"})
        assert len(after["nodes"]) == len(before["nodes"]) + 1


class TestCodetableEndpoint:
    def test_symbols_without_itemsets(self, endpoint):
        view = get(f"{endpoint}/codetable")
        assert view["entries"] > 0
        for sym in view["symbols"]:
            assert set(sym) == {"symbol", "usage", "bits"}

    def test_not_found(self, endpoint):
        with pytest.raises(urllib.error.HTTPError) as exc:
            get(f"{endpoint}/nothing")
        assert exc.value.code == 404


class TestStatic:
    def test_serves_files(self, run_dir, tmp_path):
        static = tmp_path / "static"
        static.mkdir()
        (static / "index.html").write_text("<html>console</html>")
        srv = server.make_server(run_dir, KEY, "127.0.0.1", 0, static_dir=static)
        thread = threading.Thread(target=srv.serve_forever, daemon=True)
        thread.start()
        try:
            url = f"http://127.0.0.1:{srv.server_address[1]}/"
            with urllib.request.urlopen(url) as resp:
                assert b"console" in resp.read()
        finally:
            srv.shutdown()
