"""Local HTTP+JSON endpoint for queries, cluster state, and the code-table listing.

The server only ever emits ciphertext for query answers; decryption and symbol
decoding happen at the key-holding client. The code-table listing exposes
symbol ids, usages, and code lengths but never the itemsets behind them.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from . import store
from .cloudsim import MetadataCatalog, NodeSpec, Topology, build_topology, place_fragments, rebalance
from .query import (ModelInsufficientError, QueryContext, QueryError, QueryParseError,
                    UnknownDatabaseError, encrypt_answer, execute_query, parse_query)

CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
    ".map": "application/json",
    ".svg": "image/svg+xml",
}


class ServerState:
    def __init__(self, run_dir: Path, key: bytes, seed: int = 0):
        self.db_name, self.model, self.fragments, self.meta = store.load_run(run_dir)
        self.key = key
        self.seed = seed
        scenario = self.meta.get("scenario", "standalone")
        self.topology: Topology = build_topology(scenario)
        self.catalog: MetadataCatalog = place_fragments(self.topology, self.fragments)
        self._lock = threading.Lock()
        self._answer_counter = 0

    def next_nonce(self) -> bytes:
        with self._lock:
            self._answer_counter += 1
            counter = self._answer_counter
        material = f"{self.seed}:{counter}".encode()
        return hashlib.sha256(material).digest()[:12]

    def cluster_view(self) -> dict:
        by_node = self.catalog.fragments_by_node()
        nodes = []
        for name in sorted(self.topology.nodes):
            spec = self.topology.nodes[name]
            nodes.append({
                "name": name,
                "cloud": spec.cloud,
                "csp": spec.csp,
                "role": spec.role,
                "fragments": len(by_node.get(name, [])),
            })
        return {
            "csps": sorted(self.topology.alphas),
            "clouds": {c: csp for c, csp in sorted(self.topology.clouds.items())},
            "nodes": nodes,
            "database": self.db_name,
        }

    def codetable_view(self) -> dict:
        table = self.model.table
        total = table.total_usage
        symbols = []
        for i, e in enumerate(table.entries):
            bits = -math.log2(e.usage / total) if e.usage > 0 and total > 0 else 0.0
            symbols.append({"symbol": f"s{i}", "usage": e.usage, "bits": round(bits, 6)})
        return {"symbols": symbols, "entries": len(symbols)}

    def run_query(self, text: str, mode: str | None) -> str:
        ast = parse_query(text, known_dbs=[self.db_name])
        if mode and ast.op == "select" and "MODE" not in text.upper().split():
            ast = dataclasses.replace(ast, mode=mode)
        ctx = QueryContext(models={self.db_name: self.model},
                           fragments={self.db_name: self.fragments},
                           seed=self.seed)
        result = execute_query(ast, ctx)
        answer = encrypt_answer(result, self.key, self.next_nonce())
        return answer.to_base64()

    def apply_rebalance(self, action: str, node: str, cloud: str | None) -> dict:
        with self._lock:
            if action == "add":
                if not cloud:
                    raise QueryError("add needs a cloud")
                spec = NodeSpec(node, cloud, self.topology.clouds.get(cloud, ""), "slave")
                self.topology, self.catalog = rebalance(self.topology, self.catalog, add=spec)
            elif action == "remove":
                self.topology, self.catalog = rebalance(self.topology, self.catalog,
                                                        remove=node)
            else:
                raise QueryError(f"unknown rebalance action {action!r}")
        return self.cluster_view()


def make_handler(state: ServerState, static_dir: Path | None):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):  # keep test output quiet
            pass

        def _json(self, status: int, payload: dict) -> None:
            body = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _read_body(self) -> dict:
            length = int(self.headers.get("Content-Length", "0"))
            if length == 0:
                return {}
            try:
                return json.loads(self.rfile.read(length).decode("utf-8"))
            except json.JSONDecodeError:
                return {}

        def do_GET(self):
            if self.path == "/cluster":
                self._json(200, state.cluster_view())
            elif self.path == "/codetable":
                self._json(200, state.codetable_view())
            elif static_dir is not None:
                self._serve_static()
            else:
                self._json(404, {"error": "not found"})

        def do_POST(self):
            if self.path == "/query":
                body = self._read_body()
                text = body.get("text", "")
                mode = body.get("mode")
                try:
                    answer = state.run_query(text, mode)
                except QueryParseError as exc:
                    self._json(400, {"error": str(exc), "position": exc.position})
                except UnknownDatabaseError as exc:
                    self._json(404, {"error": str(exc)})
                except ModelInsufficientError as exc:
                    self._json(409, {"error": str(exc)})
                except QueryError as exc:
                    self._json(400, {"error": str(exc)})
                else:
                    self._json(200, {"answer": answer})
            elif self.path == "/rebalance":
                body = self._read_body()
                try:
                    view = state.apply_rebalance(body.get("action", ""),
                                                 body.get("node", ""),
                                                 body.get("cloud"))
                except Exception as exc:
                    self._json(400, {"error": str(exc)})
                else:
                    self._json(200, view)
            else:
                self._json(404, {"error": "not found"})

        def _serve_static(self):
            rel = self.path.lstrip("/") or "index.html"
            target = (static_dir / rel).resolve()
            if not str(target).startswith(str(static_dir.resolve())) or not target.is_file():
                self._json(404, {"error": "not found"})
                return
            body = target.read_bytes()
            self.send_response(200)
            self.send_header("Content-Type",
                             CONTENT_TYPES.get(target.suffix, "application/octet-stream"))
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

    return Handler


def make_server(run_dir: Path, key: bytes, host: str, port: int,
                static_dir: Path | None = None, seed: int = 0) -> ThreadingHTTPServer:
    state = ServerState(run_dir, key, seed)
    handler = make_handler(state, static_dir)
    server = ThreadingHTTPServer((host, port), handler)
    server.state = state  # type: ignore[attr-defined]
    return server


def serve(run_dir: Path, key: bytes, host: str, port: int,
          static_dir: Path | None = None, seed: int = 0) -> None:
    server = make_server(run_dir, key, host, port, static_dir, seed)
    print(f"serving on http://{host}:{server.server_address[1]} "
          f"(database {server.state.db_name})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
