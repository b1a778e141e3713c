"""Operator entry point: ingest, anonymize, partition, mine, query, bench, serve."""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import random
import sys
from pathlib import Path

from . import store
from .cloudsim import SCENARIOS, Job, build_topology, place_fragments, submit_job
from .datamodel import (AnonymizationError, DataError, IntegrityError, RelationSchema,
                        TransactionDatabase, TransactionParseError, k_anonymize,
                        load_transaction_db, partition_vertical, verify_digest)
from .krimp import format_code_table
from .protocol import ProtocolError
from .query import (AuthenticationError, QueryContext, QueryError,
                    QueryParseError, UnknownDatabaseError, decrypt_answer,
                    encrypt_answer, execute_query, parse_query)

EXIT_OK = 0
EXIT_PARSE = 3
EXIT_AUTH = 4
EXIT_INTEGRITY = 5
EXIT_PROTOCOL = 6

KEY_BYTES = 32


def positive_int(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def read_key(path: str) -> bytes:
    key = bytes.fromhex(Path(path).read_text().strip())
    if len(key) != KEY_BYTES:
        raise DataError(f"key file must hold {KEY_BYTES} hex-encoded bytes")
    return key


def contiguous_assignment(db: TransactionDatabase, n_parties: int) -> dict[int, str]:
    """Split the sorted alphabet into contiguous, near-equal item ranges."""
    items = sorted(db.alphabet)
    n_parties = max(1, min(n_parties, len(items))) if items else 0
    assignment: dict[int, str] = {}
    if not items:
        return assignment
    base, extra = divmod(len(items), n_parties)
    start = 0
    for p in range(n_parties):
        size = base + (1 if p < extra else 0)
        for item in items[start:start + size]:
            assignment[item] = f"p{p + 1}"
        start += size
    return assignment


def run_id_for(seed: int, config: dict) -> str:
    text = json.dumps(config, sort_keys=True)
    return f"{seed}-{hashlib.sha256(text.encode()).hexdigest()[:8]}"


def mine_pipeline(fragments, scenario: str, min_count: int, theta: float,
                  tau: float, seed: int):
    topology = build_topology(scenario)
    catalog = place_fragments(topology, fragments)
    job = Job("mine", {"min_count": min_count, "theta": theta, "tau": tau, "seed": seed})
    job_result = submit_job(topology, catalog, job, seed)
    mining, model = job_result.payload
    return topology, catalog, job_result, mining, model


def cmd_ingest(args) -> int:
    db = load_transaction_db(Path(args.path).read_text())
    print(f"{len(db)} transactions, {len(db.alphabet)} items, "
          f"{db.item_occurrences} item occurrences")
    return EXIT_OK


def cmd_partition(args) -> int:
    db = load_transaction_db(Path(args.path).read_text())
    assignment = contiguous_assignment(db, args.parties)
    fragments = partition_vertical(db, assignment, args.db_name)
    store.save_fragments(Path(args.out), fragments)
    for f in fragments:
        print(f"{f.fragment_id} party={f.party} items={len(f.items)} digest={f.digest[:16]}")
    return EXIT_OK


def cmd_anonymize(args) -> int:
    table = RelationSchema.from_csv(Path(args.path).read_text())
    quasi = [c.strip() for c in args.quasi.split(",") if c.strip()]
    codes = [c.strip() for c in (args.codes or "").split(",") if c.strip()]
    result = k_anonymize(table, quasi, args.k, code_attrs=codes)
    lines = ["id," + ",".join(result.attributes)]
    for obj, row in zip(table.objects, result.rows):
        lines.append(f"{obj}," + ",".join(f'"{v}"' if "," in str(v) else str(v) for v in row))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out} (min class size {result.min_class_size()})")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _load_mine_inputs(args):
    if args.fragments:
        fragments = store.load_fragments(Path(args.fragments))
        db_name = fragments[0].db_name if fragments else "db"
    else:
        if not args.path:
            raise DataError("mine needs a transaction file or --fragments")
        db = load_transaction_db(Path(args.path).read_text())
        db_name = args.db_name
        fragments = partition_vertical(db, contiguous_assignment(db, args.parties), db_name)
    return db_name, fragments


def cmd_mine(args) -> int:
    db_name, fragments = _load_mine_inputs(args)
    config = {"db_name": db_name, "scenario": args.scenario, "min_count": args.min_count,
              "theta": args.theta, "tau": args.tau, "parties": len(fragments)}
    run_dir = Path(args.out) / run_id_for(args.seed, config)
    _, _, job_result, mining, model = mine_pipeline(
        fragments, args.scenario, args.min_count, args.theta, args.tau, args.seed)
    config["seed"] = args.seed
    store.save_run(run_dir, db_name, model, mining, job_result, fragments, config)
    print(f"run: {run_dir}")
    print(f"model entries: {len(model.table.entries)} "
          f"(non-singletons: {len(model.table.non_singletons())})")
    print(f"simulated elapsed: {job_result.elapsed_us} us, "
          f"messages: {job_result.message_count()}, bytes: {job_result.bytes_moved()}")
    return EXIT_OK


def cmd_bench(args) -> int:
    db = load_transaction_db(Path(args.path).read_text())
    fragments = partition_vertical(db, contiguous_assignment(db, args.parties), args.db_name)
    config = {"db_name": args.db_name, "bench": True, "min_count": args.min_count,
              "theta": args.theta, "tau": args.tau, "parties": len(fragments)}
    run_dir = Path(args.out) / run_id_for(args.seed, config)
    run_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    payload_hashes = set()
    for scenario in SCENARIOS:
        _, _, job_result, mining, model = mine_pipeline(
            fragments, scenario, args.min_count, args.theta, args.tau, args.seed)
        payload = format_code_table(model.table)
        digest = hashlib.sha256(payload.encode()).hexdigest()
        payload_hashes.add(digest)
        counts = job_result.scope_counts()
        nbytes = job_result.scope_bytes()
        rows.append({
            "scenario": scenario,
            "elapsed_us": job_result.elapsed_us,
            "messages": job_result.message_count(),
            "bytes": job_result.bytes_moved(),
            "cross_csp_messages": counts.get("cross-csp", 0),
            "cross_csp_bytes": nbytes.get("cross-csp", 0),
            "payload_sha256": digest,
        })

    header = ["scenario", "elapsed_us", "messages", "bytes",
              "cross_csp_messages", "cross_csp_bytes", "payload_sha256"]
    csv_lines = [",".join(header)]
    for r in rows:
        csv_lines.append(",".join(str(r[h]) for h in header))
    (run_dir / "bench.csv").write_text("\n".join(csv_lines) + "\n")

    print(f"{'scenario':<15} {'elapsed_us':>12} {'messages':>9} {'bytes':>10} "
          f"{'xcsp_msgs':>9} {'xcsp_bytes':>10}")
    for r in rows:
        print(f"{r['scenario']:<15} {r['elapsed_us']:>12} {r['messages']:>9} "
              f"{r['bytes']:>10} {r['cross_csp_messages']:>9} {r['cross_csp_bytes']:>10}")
    print(f"payload-equal={'true' if len(payload_hashes) == 1 else 'false'}")
    print(f"bench: {run_dir / 'bench.csv'}")
    return EXIT_OK if len(payload_hashes) == 1 else 1


def cmd_keygen(args) -> int:
    rng = random.Random(args.seed) if args.seed is not None else random.SystemRandom()
    key = bytes(rng.randrange(256) for _ in range(KEY_BYTES))
    Path(args.out).write_text(key.hex() + "\n")
    print(f"wrote {args.out}")
    return EXIT_OK


def _query_once(run_dir: Path, text: str, mode: str | None, key: bytes, seed: int):
    db_name, model, fragments, _meta = store.load_run(run_dir)
    for frag in fragments:
        if not verify_digest(frag):
            raise IntegrityError(f"fragment {frag.fragment_id} failed digest verification")
    ast = parse_query(text, known_dbs=[db_name])
    if mode and "MODE" not in text.upper().split() and ast.op == "select":
        ast = dataclasses.replace(ast, mode=mode)
    ctx = QueryContext(models={db_name: model}, fragments={db_name: fragments}, seed=seed)
    result = execute_query(ast, ctx)
    nonce = random.Random(seed).randbytes(12)
    answer = encrypt_answer(result, key, nonce)
    return result, answer


def cmd_query(args) -> int:
    key = read_key(args.key)
    result, answer = _query_once(Path(args.run), args.text, args.mode, key, args.seed)
    if args.raw:
        print(answer.to_base64())
        return EXIT_OK
    decoded = decrypt_answer(answer, key)
    payload = decoded.payload
    if payload["op"] == "topk":
        for row in decoded.rows:
            items = " ".join(str(i) for i in row.items)
            print(f"items={items} count={row.count}")
    else:
        print(f"count={payload['count']} mode={payload['mode']} "
              f"approximate={'true' if payload['approximate'] else 'false'}")
        if payload["mode"] == "exact":
            sys.stdout.write(decoded.rows_csv())
        else:
            for row in decoded.rows:
                items = " ".join(str(i) for i in row.items)
                print(f"symbol={row.symbols[0]} items={items} count={row.count}")
        for sym, items in sorted(payload["symbols"].items()):
            print(f"# {sym} = {' '.join(str(i) for i in items)}")
    return EXIT_OK


def cmd_serve(args) -> int:
    from . import server
    key = read_key(args.key)
    server.serve(Path(args.run), key, args.host, args.port,
                 static_dir=Path(args.static) if args.static else None,
                 seed=args.seed)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedmine",
        description="Federated itemset mining over simulated clouds with model-based queries")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load a transaction file and report its shape")
    p.add_argument("path")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("partition", help="vertically partition a database into fragments")
    p.add_argument("path")
    p.add_argument("--parties", type=positive_int, default=2)
    p.add_argument("--db-name", default="d1")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("anonymize", help="k-anonymize a CSV relation table")
    p.add_argument("path")
    p.add_argument("--quasi", required=True, help="comma-separated quasi-identifier columns")
    p.add_argument("--codes", default="", help="quasi columns to mask as digit codes")
    p.add_argument("-k", type=positive_int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_anonymize)

    p = sub.add_parser("mine", help="run the federated mining pipeline on a scenario")
    p.add_argument("path", nargs="?")
    p.add_argument("--fragments", help="load pre-partitioned fragments from this directory")
    p.add_argument("--scenario", choices=SCENARIOS, default="standalone")
    p.add_argument("--min-count", type=positive_int, default=2, dest="min_count")
    p.add_argument("--theta", type=float, default=0.5)
    p.add_argument("--tau", type=float, default=0.01)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--parties", type=positive_int, default=2)
    p.add_argument("--db-name", default="d1")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("bench", help="compare the four scenarios on one database")
    p.add_argument("path")
    p.add_argument("--min-count", type=positive_int, default=2, dest="min_count")
    p.add_argument("--theta", type=float, default=0.5)
    p.add_argument("--tau", type=float, default=0.01)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--parties", type=positive_int, default=2)
    p.add_argument("--db-name", default="d1")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("keygen", help="write a fresh 256-bit user key (hex)")
    p.add_argument("out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("query", help="run a query against a mined run directory")
    p.add_argument("text")
    p.add_argument("--run", required=True)
    p.add_argument("--key", required=True)
    p.add_argument("--mode", choices=("model", "exact"))
    p.add_argument("--raw", action="store_true", help="print the encrypted answer instead")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("serve", help="expose query/cluster/codetable over HTTP+JSON")
    p.add_argument("--run", required=True)
    p.add_argument("--key", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8750)
    p.add_argument("--static", help="serve this directory at / (the web console build)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (TransactionParseError, QueryParseError, UnknownDatabaseError,
            AnonymizationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except AuthenticationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_AUTH
    except IntegrityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except ProtocolError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (DataError, QueryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
