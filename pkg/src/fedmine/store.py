"""Run-directory persistence: code table, trace, transcripts, fragments, model.

A mine run writes out/<run-id>/ with the artifacts a later query or serve
invocation needs. Everything is plain text or JSON with sorted keys, so equal
inputs produce byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

from . import krimp
from .cloudsim import JobResult
from .datamodel import Fragment, parse_fragment, serialize_fragment
from .federated import GlobalModel, MiningResult
from .krimp import CodeTable, CodeTableEntry
from .protocol import collision_check, format_transcript


def save_fragments(directory: Path, fragments: Sequence[Fragment]) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "db_name": fragments[0].db_name if fragments else "db",
        "n_transactions": max((f.n_transactions for f in fragments), default=0),
        "fragments": [
            {"file": f"{f.fragment_id}.frag", "party": f.party, "digest": f.digest}
            for f in fragments
        ],
    }
    for f in fragments:
        (directory / f"{f.fragment_id}.frag").write_text(serialize_fragment(f))
    (directory / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def load_fragments(directory: Path) -> list[Fragment]:
    manifest = json.loads((directory / "manifest.json").read_text())
    n = manifest["n_transactions"]
    fragments = []
    for ref in manifest["fragments"]:
        text = (directory / ref["file"]).read_text()
        fragments.append(parse_fragment(text, n))
    return fragments


def model_to_dict(model: GlobalModel) -> dict:
    return {
        "n_transactions": model.n_transactions,
        "sources": list(model.sources),
        "table": [
            {"items": sorted(e.items), "support": e.support, "usage": e.usage}
            for e in model.table.entries
        ],
        "counts": [[sorted(items), count] for items, count in
                   sorted(model.counts.items(), key=lambda kv: sorted(kv[0]))],
        "source": model.table.source,
    }


def model_from_dict(data: dict) -> GlobalModel:
    entries = tuple(CodeTableEntry(frozenset(e["items"]), e["support"], e["usage"])
                    for e in data["table"])
    table = CodeTable(entries, data["n_transactions"], data.get("source", ""))
    counts = {frozenset(items): count for items, count in data["counts"]}
    return GlobalModel(table, counts, data["n_transactions"], tuple(data["sources"]))


def save_run(run_dir: Path, db_name: str, model: GlobalModel, mining: MiningResult,
             job: JobResult, fragments: Sequence[Fragment], config: dict) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)

    (run_dir / "codetable.txt").write_text(krimp.format_code_table(model.table))

    trace_lines = [entry.format() for entry in mining.trace]
    trace_lines.append("F'")
    trace_text = "\n".join(trace_lines) + "\n" + krimp.format_code_table(model.table)
    (run_dir / "trace.log").write_text(trace_text)

    transcripts = run_dir / "transcripts"
    transcripts.mkdir(exist_ok=True)
    for entry, cc in zip(mining.trace, mining.counts):
        if cc.transcript is None:
            continue
        name = f"k{entry.level}_c{'-'.join(str(i) for i in sorted(entry.items))}.log"
        verdict = collision_check(cc.transcript, float(config.get("tau", 0.01)))
        (transcripts / name).write_text(format_transcript(cc.transcript, verdict))

    scope_counts = job.scope_counts()
    scope_bytes = job.scope_bytes()
    timing = [
        f"elapsed_us={job.elapsed_us}",
        f"messages={job.message_count()}",
        f"bytes={job.bytes_moved()}",
        f"cross_csp_messages={scope_counts.get('cross-csp', 0)}",
        f"cross_csp_bytes={scope_bytes.get('cross-csp', 0)}",
    ]
    for node in sorted(job.node_busy_us):
        timing.append(f"busy_us[{node}]={job.node_busy_us[node]}")
    (run_dir / "timing.txt").write_text("\n".join(timing) + "\n")
    (run_dir / "events.log").write_text("\n".join(job.events) + "\n")

    save_fragments(run_dir / "fragments", fragments)

    meta = dict(config)
    meta["db_name"] = db_name
    (run_dir / "model.json").write_text(
        json.dumps({"meta": meta, "model": model_to_dict(model)},
                   sort_keys=True, indent=2) + "\n")


def load_run(run_dir: Path) -> tuple[str, GlobalModel, list[Fragment], dict]:
    data = json.loads((run_dir / "model.json").read_text())
    model = model_from_dict(data["model"])
    meta = data["meta"]
    fragments = load_fragments(run_dir / "fragments")
    return meta["db_name"], model, fragments, meta
