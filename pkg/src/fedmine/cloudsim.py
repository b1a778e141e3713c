"""Simulated multi-cloud infrastructure: providers, clouds, nodes, channels, jobs.

The simulator never changes a computation's result; it only accounts for where
work and messages would have landed. Payloads come from the same pure pipeline
regardless of topology, so two topologies differ only in simulated microsecond
timings, message scopes, and byte counts.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from . import federated
from .datamodel import Fragment, IntegrityError, verify_digest
from .protocol import ProtocolTranscript

SCENARIOS = ("standalone", "one-cloud", "multi-cloud", "heterogeneous")

INTRA_CLOUD_US = 1_000
INTRA_CSP_US = 10_000
CROSS_CSP_US = 50_000

RESULT_MSG_BYTES = 16
TOKEN_BYTES = 8


class TopologyError(Exception):
    pass


class JobError(Exception):
    def __init__(self, message: str, events: list[str] | None = None):
        super().__init__(message)
        self.events = events or []


@dataclass(frozen=True)
class NodeSpec:
    name: str
    cloud: str
    csp: str
    role: str  # "master" | "slave"


@dataclass(frozen=True)
class Topology:
    alphas: Mapping[str, float]          # per-CSP compute cost, us per work unit
    clouds: Mapping[str, str]            # cloud -> csp
    nodes: Mapping[str, NodeSpec]
    latency_overrides: Mapping[tuple[str, str], int] = field(default_factory=dict)

    def __post_init__(self):
        for cloud in self.clouds:
            masters = [n for n in self.nodes.values()
                       if n.cloud == cloud and n.role == "master"]
            if len(masters) != 1:
                raise TopologyError(f"cloud {cloud} must have exactly one master, "
                                    f"found {len(masters)}")
        for spec in self.nodes.values():
            if spec.cloud not in self.clouds:
                raise TopologyError(f"node {spec.name} references unknown cloud {spec.cloud}")
            if spec.role not in ("master", "slave"):
                raise TopologyError(f"node {spec.name} has invalid role {spec.role}")

    def latency_us(self, a: str, b: str) -> int:
        if a == b:
            return 0
        if (a, b) in self.latency_overrides:
            return self.latency_overrides[(a, b)]
        na, nb = self.nodes[a], self.nodes[b]
        if na.cloud == nb.cloud:
            return INTRA_CLOUD_US
        if na.csp == nb.csp:
            return INTRA_CSP_US
        return CROSS_CSP_US

    def scope(self, a: str, b: str) -> str:
        if a == b:
            return "self"
        na, nb = self.nodes[a], self.nodes[b]
        if na.cloud == nb.cloud:
            return "intra-cloud"
        if na.csp == nb.csp:
            return "intra-csp"
        return "cross-csp"

    def masters(self) -> list[str]:
        return sorted(n.name for n in self.nodes.values() if n.role == "master")

    def slaves(self) -> list[str]:
        return sorted(n.name for n in self.nodes.values() if n.role == "slave")

    def storage_nodes(self) -> list[str]:
        """Slaves interleaved across clouds so consecutive placements spread out;
        the degenerate single-node layout stores at masters."""
        by_cloud: dict[str, list[str]] = {}
        for name in self.slaves():
            by_cloud.setdefault(self.nodes[name].cloud, []).append(name)
        interleaved: list[str] = []
        rank = 0
        while True:
            row = [slaves[rank] for _, slaves in sorted(by_cloud.items())
                   if rank < len(slaves)]
            if not row:
                break
            interleaved.extend(row)
            rank += 1
        return interleaved or self.masters()

    def coordinator(self) -> str:
        return self.masters()[0]

    def master_of(self, node: str) -> str:
        cloud = self.nodes[node].cloud
        for n in self.nodes.values():
            if n.cloud == cloud and n.role == "master":
                return n.name
        raise TopologyError(f"no master in cloud {cloud}")

    def alpha(self, node: str) -> float:
        return self.alphas.get(self.nodes[node].csp, 1.0)


def _preset(name: str) -> Topology:
    def cloud_nodes(cloud: str, csp: str, n_slaves: int = 2) -> dict[str, NodeSpec]:
        nodes = {f"{cloud}-m": NodeSpec(f"{cloud}-m", cloud, csp, "master")}
        for i in range(1, n_slaves + 1):
            nodes[f"{cloud}-s{i}"] = NodeSpec(f"{cloud}-s{i}", cloud, csp, "slave")
        return nodes

    if name == "standalone":
        nodes = {"local-c1-m": NodeSpec("local-c1-m", "local-c1", "local", "master")}
        return Topology({"local": 1.0}, {"local-c1": "local"}, nodes)
    if name == "one-cloud":
        return Topology({"aws": 1.0}, {"aws-c1": "aws"}, cloud_nodes("aws-c1", "aws"))
    if name == "multi-cloud":
        clouds = {f"aws-c{i}": "aws" for i in (1, 2, 3)}
        nodes: dict[str, NodeSpec] = {}
        for cloud in clouds:
            nodes.update(cloud_nodes(cloud, "aws"))
        return Topology({"aws": 1.0}, clouds, nodes)
    if name == "heterogeneous":
        alphas = {"aws": 1.0, "azure": 1.2, "gcp": 1.5}
        clouds = {"aws-c1": "aws", "azure-c1": "azure", "gcp-c1": "gcp"}
        nodes = {}
        for cloud, csp in clouds.items():
            nodes.update(cloud_nodes(cloud, csp))
        return Topology(alphas, clouds, nodes)
    raise TopologyError(f"unknown scenario preset {name!r}")


def parse_topology_config(text: str) -> Topology:
    """Key-value sections: [csp.<name>], [cloud.<name>], [node.<name>], [latency]."""
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep key case and '->' arrows intact
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise TopologyError(f"malformed topology config: {exc}") from exc
    alphas: dict[str, float] = {}
    clouds: dict[str, str] = {}
    nodes: dict[str, NodeSpec] = {}
    overrides: dict[tuple[str, str], int] = {}
    for section in parser.sections():
        if section.startswith("csp."):
            alphas[section[4:]] = float(parser[section].get("alpha", "1.0"))
        elif section.startswith("cloud."):
            name = section[6:]
            csp = parser[section].get("csp")
            if not csp:
                raise TopologyError(f"cloud {name} missing csp=")
            clouds[name] = csp
        elif section.startswith("node."):
            name = section[5:]
            cloud = parser[section].get("cloud")
            role = parser[section].get("role")
            if not cloud or not role:
                raise TopologyError(f"node {name} needs cloud= and role=")
            if cloud not in clouds:
                raise TopologyError(f"node {name} references unknown cloud {cloud}")
            nodes[name] = NodeSpec(name, cloud, clouds[cloud], role)
        elif section == "latency":
            for key, value in parser[section].items():
                if "->" not in key:
                    raise TopologyError(f"latency key {key!r} must be '<a>-><b>'")
                a, _, b = key.partition("->")
                overrides[(a.strip(), b.strip())] = int(float(value) * 1000)  # ms -> us
    return Topology(alphas, clouds, nodes, overrides)


def build_topology(config: str) -> Topology:
    """A scenario preset name, or full config text with sections."""
    if config.strip() in SCENARIOS:
        return _preset(config.strip())
    if "[" in config:
        return parse_topology_config(config)
    raise TopologyError(f"unknown scenario preset {config!r}")


# ---------------------------------------------------------------------------
# Metadata catalog and fragment placement
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CatalogEntry:
    fragment_id: str
    node: str
    digest: str
    db_name: str
    table: str
    storage_id: str
    key_id: str
    data_structure: str


@dataclass
class MetadataCatalog:
    entries: dict[str, CatalogEntry] = field(default_factory=dict)
    fragments: dict[str, Fragment] = field(default_factory=dict)

    def locate(self, fragment_id: str) -> str:
        return self.entries[fragment_id].node

    def node_of_party(self, party: str) -> str:
        for frag_id, frag in self.fragments.items():
            if frag.party == party:
                return self.entries[frag_id].node
        raise KeyError(f"no fragment for party {party}")

    def fragments_by_node(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {}
        for frag_id, entry in sorted(self.entries.items()):
            out.setdefault(entry.node, []).append(frag_id)
        return out

    def all_fragments(self) -> list[Fragment]:
        return [self.fragments[fid] for fid in sorted(self.fragments)]


def place_fragments(topology: Topology, fragments: Sequence[Fragment],
                    policy: str = "round-robin", key_id: str = "user-key") -> MetadataCatalog:
    """Round-robin placement over storage nodes; digests are verified on arrival."""
    if policy != "round-robin":
        raise TopologyError(f"unknown placement policy {policy!r}")
    targets = topology.storage_nodes()
    if not targets:
        raise TopologyError("no storage nodes available")
    catalog = MetadataCatalog()
    for i, frag in enumerate(fragments):
        if not verify_digest(frag):
            raise IntegrityError(
                f"fragment {frag.fragment_id} failed digest verification at placement")
        node = targets[i % len(targets)]
        catalog.entries[frag.fragment_id] = CatalogEntry(
            fragment_id=frag.fragment_id, node=node, digest=frag.digest,
            db_name=frag.db_name, table="transactions", storage_id=node,
            key_id=key_id, data_structure="tidset")
        catalog.fragments[frag.fragment_id] = frag
    return catalog


def rebalance(topology: Topology, catalog: MetadataCatalog,
              add: NodeSpec | None = None,
              remove: str | None = None) -> tuple[Topology, MetadataCatalog]:
    """Add or remove a node, migrating any stored fragments round-robin."""
    nodes = dict(topology.nodes)
    if add is not None:
        if add.name in nodes:
            raise TopologyError(f"node {add.name} already exists")
        if add.cloud not in topology.clouds:
            raise TopologyError(f"unknown cloud {add.cloud}")
        if add.role == "master":
            raise TopologyError("clouds have exactly one master; add slaves only")
        nodes[add.name] = add
    if remove is not None:
        if remove not in nodes:
            raise TopologyError(f"unknown node {remove}")
        if nodes[remove].role == "master":
            raise TopologyError("cannot remove a cloud's master")
        del nodes[remove]
    new_topo = Topology(topology.alphas, topology.clouds, nodes,
                        topology.latency_overrides)

    moved = [fid for fid, e in sorted(catalog.entries.items())
             if e.node not in nodes]
    # migration only retargets slaves; the master fallback is reserved for the
    # degenerate single-node layout, which has nothing removable
    live_targets = new_topo.slaves()
    if moved and not live_targets:
        raise TopologyError("removal would orphan fragments with no migration target")
    new_catalog = MetadataCatalog(dict(catalog.entries), dict(catalog.fragments))
    for i, fid in enumerate(moved):
        frag = new_catalog.fragments[fid]
        if not verify_digest(frag):
            raise IntegrityError(f"fragment {fid} failed digest verification at migration")
        entry = new_catalog.entries[fid]
        node = live_targets[i % len(live_targets)]
        new_catalog.entries[fid] = CatalogEntry(
            entry.fragment_id, node, entry.digest, entry.db_name, entry.table,
            node, entry.key_id, entry.data_structure)
    return new_topo, new_catalog


# ---------------------------------------------------------------------------
# Jobs: map work at storage nodes, reduce at masters, merge at the coordinator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Job:
    kind: str  # "mine" | "count" | "merge" | "query"
    params: Mapping[str, object] = field(default_factory=dict)


@dataclass(frozen=True)
class MessageRecord:
    t_us: int
    src: str
    dst: str
    n_bytes: int
    scope: str


@dataclass
class JobResult:
    payload: object
    elapsed_us: int
    node_busy_us: dict[str, int]
    messages: list[MessageRecord]
    events: list[str]

    def message_count(self) -> int:
        return len(self.messages)

    def bytes_moved(self) -> int:
        return sum(m.n_bytes for m in self.messages)

    def scope_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for m in self.messages:
            out[m.scope] = out.get(m.scope, 0) + 1
        return out

    def scope_bytes(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for m in self.messages:
            out[m.scope] = out.get(m.scope, 0) + m.n_bytes
        return out


class _Sim:
    """Deterministic accounting clock: per-node availability plus a message log."""

    def __init__(self, topo: Topology):
        self.topo = topo
        self.avail: dict[str, int] = {n: 0 for n in topo.nodes}
        self.busy: dict[str, int] = {n: 0 for n in topo.nodes}
        self.messages: list[MessageRecord] = []
        self.events: list[str] = []

    def now(self) -> int:
        return max(self.avail.values(), default=0)

    def compute(self, node: str, units: int, not_before: int, event: str) -> int:
        start = max(self.avail[node], not_before)
        dur = int(round(self.topo.alpha(node) * units))
        end = start + dur
        self.avail[node] = end
        self.busy[node] += dur
        self.events.append(f"t={start} node={node} event={event} units={units}")
        return end

    def send(self, src: str, dst: str, n_bytes: int, ready: int, label: str) -> int:
        if src not in self.topo.nodes or dst not in self.topo.nodes:
            raise JobError(f"unreachable node in {src}->{dst}", self.events)
        lat = self.topo.latency_us(src, dst)
        arrive = ready + lat
        self.messages.append(MessageRecord(ready, src, dst, n_bytes, self.topo.scope(src, dst)))
        self.events.append(f"t={ready} node={src} event=send to={dst} bytes={n_bytes} kind={label}")
        self.events.append(f"t={arrive} node={dst} event=recv from={src} bytes={n_bytes} kind={label}")
        return arrive


def _replay_candidate(sim: _Sim, topo: Topology, party_node: Mapping[str, str],
                      cc: federated.CandidateCount, level_start: int) -> int:
    """Book one candidate count's work and messages; returns its completion time."""
    coord = topo.coordinator()
    if cc.transcript is None:
        party = cc.provenance.split(":", 1)[1]
        node = party_node[party]
        done = sim.compute(node, cc.work_units, level_start, "map")
        t = sim.send(node, topo.master_of(node), RESULT_MSG_BYTES, done, "count-result")
        if topo.master_of(node) != coord:
            t = sim.send(topo.master_of(node), coord, RESULT_MSG_BYTES, t, "count-result")
        return sim.compute(coord, 1, t, "reduce")

    # Cross-party: replay the ring transcript, chained by origin position.
    transcript: ProtocolTranscript = cc.transcript
    ring = sorted({m.sender for m in transcript.messages}
                  | {m.receiver for m in transcript.messages})
    n = len(ring)
    chain_time: dict[int, int] = {}
    for m in transcript.messages:
        origin = m.payload.origin_position
        src = party_node[m.sender]
        dst = party_node[m.receiver]
        if origin not in chain_time:
            # owner's local intersection plus first masking
            chain_time[origin] = sim.compute(src, 2 * len(m.payload.tokens),
                                             level_start, "map")
        depart = chain_time[origin]
        arrive = sim.send(src, dst, TOKEN_BYTES * len(m.payload.tokens), depart, "masked-set")
        if m.round_no < n:  # re-masking hop
            chain_time[origin] = sim.compute(dst, len(m.payload.tokens), arrive, "map")
        else:               # plain forward toward the evaluator
            chain_time[origin] = arrive
    ready = max(chain_time.values(), default=level_start)
    evaluator = party_node[ring[0]]
    done = sim.compute(evaluator, sum(len(set(m.payload.tokens)) for m in transcript.messages
                                      if m.round_no == 1), ready, "reduce")
    t = sim.send(evaluator, topo.master_of(evaluator), RESULT_MSG_BYTES, done, "count-result")
    if topo.master_of(evaluator) != coord:
        t = sim.send(topo.master_of(evaluator), coord, RESULT_MSG_BYTES, t, "count-result")
    return sim.compute(coord, 1, t, "reduce")


def submit_job(topology: Topology, catalog: MetadataCatalog, job: Job,
               seed: int = 0) -> JobResult:
    """Run a job through the simulated cluster.

    The payload is computed by the pure pipeline and is therefore identical
    across topologies; the simulator contributes timings and message accounting.
    """
    fragments = catalog.all_fragments()
    for fid, entry in catalog.entries.items():
        if entry.node not in topology.nodes:
            raise JobError(f"fragment {fid} placed on unreachable node {entry.node}")
    party_node = {frag.party: catalog.locate(frag.fragment_id) for frag in fragments}
    sim = _Sim(topology)

    if job.kind == "mine":
        params = job.params
        result = federated.run_levelwise_mining(
            fragments, int(params["min_count"]), int(params["seed"]),
            tau=float(params.get("tau", 0.01)))
        model = federated.pruning_merging(
            result.itemsets, float(params.get("theta", federated.DEFAULT_THETA)),
            fragments, source=fragments[0].db_name if fragments else "db")
        by_level: dict[int, list[federated.CandidateCount]] = {}
        for entry, cc in zip(result.trace, result.counts):
            by_level.setdefault(entry.level, []).append(cc)
        for level in sorted(by_level):
            level_start = sim.now()
            for cc in by_level[level]:
                _replay_candidate(sim, topology, party_node, cc, level_start)
        merge_units = sum(len(e.items) for e in model.table.entries) + len(result.itemsets)
        sim.compute(topology.coordinator(), merge_units, sim.now(), "reduce")
        payload = (result, model)
    elif job.kind == "count":
        items = frozenset(job.params["items"])
        parties = {f.party for f in fragments if items & f.items}
        if len(parties) == 1:
            frag = next(f for f in fragments if items <= f.items)
            cc = federated.local_count(frag, items)
        else:
            cc = federated.cross_party_count(items, fragments, int(job.params.get("seed", seed)),
                                             tau=float(job.params.get("tau", 0.01)))
        _replay_candidate(sim, topology, party_node, cc, 0)
        payload = cc
    elif job.kind == "merge":
        itemsets = job.params["itemsets"]
        model = federated.pruning_merging(
            itemsets, float(job.params.get("theta", federated.DEFAULT_THETA)), fragments)
        units = sum(len(e.items) for e in model.table.entries)
        sim.compute(topology.coordinator(), units, 0, "reduce")
        payload = model
    elif job.kind == "query":
        run = job.params["run"]  # callable producing the answer at the coordinator
        payload = run()
        sim.compute(topology.coordinator(), 1 + len(str(payload)), 0, "reduce")
    else:
        raise JobError(f"unknown job kind {job.kind!r}")

    return JobResult(payload, sim.now(), dict(sim.busy), sim.messages, sim.events)
