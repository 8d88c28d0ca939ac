"""Typed graph views: labeled nodes, typed edges, k-hop traversal.

The graph layer is read-heavy by design: traversals run over immutable
sources (a committed snapshot view or a plain in-memory graph) and never
mutate anything.  Mutations are staged in an overlay and only become
visible when the staging is committed by the engine, which is what keeps
queries insensitive to concurrent updates.
"""
from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass

from .capability import Capability, CapabilityRejected, CapabilityTable, Region, Rights

DEFAULT_MAX_OUT_DEGREE = 10_000
_ZERO32 = b"\x00" * 32


class UnknownNode(Exception):
    def __init__(self, node_id: int):
        super().__init__(f"unknown node {node_id}")
        self.node_id = node_id


class DuplicateNode(Exception):
    def __init__(self, node_id: int):
        super().__init__(f"node {node_id} already exists")
        self.node_id = node_id


class SchemaViolation(Exception):
    def __init__(self, triple: tuple[str, str, str]):
        super().__init__(f"edge triple {triple} not allowed by schema")
        self.triple = triple


class TypeMismatch(Exception):
    pass


class DegreeBoundExceeded(Exception):
    def __init__(self, node_id: int, degree: int, bound: int):
        super().__init__(f"node {node_id} has out-degree {degree} > bound {bound}")
        self.node_id = node_id


@dataclass(frozen=True)
class LabelSchema:
    """Allowed (src-label, edge-type, dst-label) triples."""

    triples: frozenset[tuple[str, str, str]]

    @classmethod
    def of(cls, *triples: tuple[str, str, str]) -> "LabelSchema":
        return cls(frozenset(triples))

    def allows(self, src_label: str, edge_type: str, dst_label: str) -> bool:
        return (src_label, edge_type, dst_label) in self.triples

    def edge_types(self) -> frozenset[str]:
        return frozenset(t for _, t, _ in self.triples)


class GraphState:
    """Plain mutable graph value: node labels/payloads plus out-adjacency.

    This is the raw structure used to build graphs and to materialize
    views; the capability- and lease-gated mutation surface lives in
    GraphStaging + the engine.
    """

    __slots__ = ("nodes", "out", "_next_id")

    def __init__(self):
        self.nodes: dict[int, tuple[str, bytes]] = {}
        self.out: dict[int, set[tuple[int, str]]] = {}
        self._next_id = 0

    def add_node(self, label: str, payload: bytes = b"", node_id: int | None = None) -> int:
        if node_id is None:
            node_id = self._next_id
        if node_id in self.nodes:
            raise DuplicateNode(node_id)
        self._next_id = max(self._next_id, node_id + 1)
        self.nodes[node_id] = (label, payload)
        self.out[node_id] = set()
        return node_id

    def add_edge(self, src: int, dst: int, edge_type: str, schema: LabelSchema | None = None) -> None:
        if src not in self.nodes:
            raise UnknownNode(src)
        if dst not in self.nodes:
            raise UnknownNode(dst)
        if schema is not None:
            triple = (self.nodes[src][0], edge_type, self.nodes[dst][0])
            if not schema.allows(*triple):
                raise SchemaViolation(triple)
        self.out[src].add((dst, edge_type))

    def remove_edge(self, src: int, dst: int, edge_type: str) -> None:
        if src not in self.nodes:
            raise UnknownNode(src)
        try:
            self.out[src].remove((dst, edge_type))
        except KeyError:
            raise UnknownNode(dst) from None

    def remove_node(self, node_id: int) -> set[int]:
        """Delete a node and all incident edges; returns predecessors touched."""
        if node_id not in self.nodes:
            raise UnknownNode(node_id)
        touched = set()
        for src, targets in self.out.items():
            if src == node_id:
                continue
            incoming = {(d, t) for d, t in targets if d == node_id}
            if incoming:
                targets -= incoming
                touched.add(src)
        del self.nodes[node_id]
        del self.out[node_id]
        return touched

    def set_label(self, node_id: int, label: str) -> None:
        if node_id not in self.nodes:
            raise UnknownNode(node_id)
        self.nodes[node_id] = (label, self.nodes[node_id][1])

    def set_payload(self, node_id: int, payload: bytes) -> None:
        if node_id not in self.nodes:
            raise UnknownNode(node_id)
        self.nodes[node_id] = (self.nodes[node_id][0], payload)

    # -- read surface ---------------------------------------------------------

    def has_node(self, node_id: int) -> bool:
        return node_id in self.nodes

    def label(self, node_id: int) -> str:
        if node_id not in self.nodes:
            raise UnknownNode(node_id)
        return self.nodes[node_id][0]

    def payload(self, node_id: int) -> bytes:
        if node_id not in self.nodes:
            raise UnknownNode(node_id)
        return self.nodes[node_id][1]

    def neighbors(self, node_id: int):
        if node_id not in self.nodes:
            raise UnknownNode(node_id)
        return self.out[node_id]

    def node_ids(self) -> list[int]:
        return list(self.nodes)

    def edges(self):
        for src, targets in self.out.items():
            for dst, edge_type in targets:
                yield (src, dst, edge_type)

    def edge_set(self) -> frozenset[tuple[int, int, str]]:
        return frozenset(self.edges())

    @property
    def edge_count(self) -> int:
        return sum(len(t) for t in self.out.values())

    def clone(self) -> "GraphState":
        fresh = GraphState()
        fresh.nodes = dict(self.nodes)
        fresh.out = {k: set(v) for k, v in self.out.items()}
        fresh._next_id = self._next_id
        return fresh

    def __eq__(self, other) -> bool:
        if not isinstance(other, GraphState):
            return NotImplemented
        return self.nodes == other.nodes and self.edge_set() == other.edge_set()

    def __hash__(self):
        raise TypeError("GraphState is mutable and unhashable")


def restrict(g: GraphState, region: Region) -> GraphState:
    """Induced subgraph on the nodes inside the region."""
    out = GraphState()
    for nid, (label, payload) in g.nodes.items():
        if region.contains(nid):
            out.add_node(label, payload, node_id=nid)
    for src, dst, edge_type in g.edges():
        if region.contains(src) and region.contains(dst):
            out.add_edge(src, dst, edge_type)
    return out


# ---------------------------------------------------------------------------
# Node record codec (canonical bytes committed to the store)
# ---------------------------------------------------------------------------


def encode_record(label: str, payload_digest: bytes, edges) -> bytes:
    """Canonical node record: label, payload digest, sorted out-edges."""
    lab = label.encode("utf-8")
    parts = [struct.pack("<H", len(lab)), lab, payload_digest or _ZERO32]
    ordered = sorted(edges)
    parts.append(struct.pack("<I", len(ordered)))
    for dst, edge_type in ordered:
        et = edge_type.encode("utf-8")
        parts.append(struct.pack("<QH", dst, len(et)))
        parts.append(et)
    return b"".join(parts)


def decode_record(raw: bytes) -> tuple[str, bytes, list[tuple[int, str]]]:
    (lab_len,) = struct.unpack_from("<H", raw, 0)
    off = 2
    label = raw[off : off + lab_len].decode("utf-8")
    off += lab_len
    payload_digest = raw[off : off + 32]
    off += 32
    (n_edges,) = struct.unpack_from("<I", raw, off)
    off += 4
    edges = []
    for _ in range(n_edges):
        dst, et_len = struct.unpack_from("<QH", raw, off)
        off += 10
        edges.append((dst, raw[off : off + et_len].decode("utf-8")))
        off += et_len
    return label, payload_digest, edges


# ---------------------------------------------------------------------------
# Staged mutations
# ---------------------------------------------------------------------------


class GraphStaging:
    """Copy-on-write overlay of pending mutations on a base graph.

    Every mutating call is gated: it must be covered by a capability with
    write rights over the touched node ids, and edge inserts must conform
    to the schema when one is set.  Nothing is visible until the engine
    commits the staging.
    """

    def __init__(
        self,
        base: GraphState,
        *,
        schema: LabelSchema | None = None,
        cap: Capability | None = None,
        table: CapabilityTable | None = None,
        now: int = 0,
        id_allocator=None,
    ):
        self.base = base
        self.schema = schema
        self.cap = cap
        self.table = table
        self.now = now
        self._alloc = id_allocator
        self._fallback_next = (max(base.nodes) + 1) if base.nodes else 0
        self._nodes: dict[int, tuple[str, bytes] | None] = {}
        self._out: dict[int, set[tuple[int, str]]] = {}
        self._scopes: dict[int, int] = {}
        self._regions: dict[int, int] = {}
        self._edge_ids: dict[int, tuple[int, int, str]] = {}
        self._next_edge = 0
        self.op_count = 0

    # -- read-through ----------------------------------------------------------

    def has_node(self, node_id: int) -> bool:
        if node_id in self._nodes:
            return self._nodes[node_id] is not None
        return self.base.has_node(node_id)

    def node(self, node_id: int) -> tuple[str, bytes]:
        if node_id in self._nodes:
            value = self._nodes[node_id]
            if value is None:
                raise UnknownNode(node_id)
            return value
        if not self.base.has_node(node_id):
            raise UnknownNode(node_id)
        return (self.base.label(node_id), self.base.payload(node_id))

    def label(self, node_id: int) -> str:
        return self.node(node_id)[0]

    def payload(self, node_id: int) -> bytes:
        return self.node(node_id)[1]

    def out(self, node_id: int) -> set[tuple[int, str]]:
        if node_id in self._out:
            return self._out[node_id]
        if not self.has_node(node_id):
            raise UnknownNode(node_id)
        return set(self.base.neighbors(node_id)) if self.base.has_node(node_id) else set()

    def neighbors(self, node_id: int):
        return self.out(node_id)

    def _own_out(self, node_id: int) -> set[tuple[int, str]]:
        if node_id not in self._out:
            self._out[node_id] = (
                set(self.base.neighbors(node_id)) if self.base.has_node(node_id) else set()
            )
        return self._out[node_id]

    # -- gating ------------------------------------------------------------------

    def _gate(self, *node_ids: int) -> None:
        if self.table is None or self.cap is None:
            return
        verdict = self.table.verify(self.cap, Region.of(*node_ids), Rights.WRITE, self.now)
        if not verdict:
            raise CapabilityRejected(verdict.reason)

    # -- mutations ----------------------------------------------------------------

    def add_node(self, label: str, payload: bytes = b"", node_id: int | None = None) -> int:
        if node_id is None:
            if self._alloc is not None:
                node_id = self._alloc()
            else:
                node_id = self._fallback_next
                self._fallback_next += 1
        if self.has_node(node_id):
            raise DuplicateNode(node_id)
        self._gate(node_id)
        self._nodes[node_id] = (label, payload)
        self._out[node_id] = set()
        self.op_count += 1
        return node_id

    def add_edge(self, src: int, dst: int, edge_type: str) -> int:
        if not self.has_node(src):
            raise UnknownNode(src)
        if not self.has_node(dst):
            raise UnknownNode(dst)
        if self.schema is not None:
            triple = (self.label(src), edge_type, self.label(dst))
            if not self.schema.allows(*triple):
                raise SchemaViolation(triple)
        self._gate(src)
        self._own_out(src).add((dst, edge_type))
        edge_id = self._next_edge
        self._next_edge += 1
        self._edge_ids[edge_id] = (src, dst, edge_type)
        self.op_count += 1
        return edge_id

    def remove_edge(self, src: int, dst: int, edge_type: str) -> None:
        if not self.has_node(src):
            raise UnknownNode(src)
        self._gate(src)
        own = self._own_out(src)
        if (dst, edge_type) not in own:
            raise UnknownNode(dst)
        own.remove((dst, edge_type))
        self.op_count += 1

    def set_label(self, node_id: int, label: str) -> None:
        current = self.node(node_id)
        self._gate(node_id)
        self._nodes[node_id] = (label, current[1])
        self.op_count += 1

    def set_payload(self, node_id: int, payload: bytes) -> None:
        current = self.node(node_id)
        self._gate(node_id)
        self._nodes[node_id] = (current[0], payload)
        self.op_count += 1

    def remove_node(self, node_id: int) -> None:
        if not self.has_node(node_id):
            raise UnknownNode(node_id)
        preds = [
            src
            for src in self._iter_node_ids()
            if src != node_id and any(dst == node_id for dst, _ in self.out(src))
        ]
        self._gate(node_id, *preds)
        for src in preds:
            own = self._own_out(src)
            own -= {(dst, t) for dst, t in own if dst == node_id}
        self._nodes[node_id] = None
        self._out.pop(node_id, None)
        self._scopes.pop(node_id, None)
        self._regions.pop(node_id, None)
        self.op_count += 1

    def set_scope(self, node_id: int, scope_id: int) -> None:
        if not self.has_node(node_id):
            raise UnknownNode(node_id)
        self._gate(node_id)
        self._scopes[node_id] = scope_id
        self.op_count += 1

    def set_region_tag(self, node_id: int, region_id: int) -> None:
        if not self.has_node(node_id):
            raise UnknownNode(node_id)
        self._gate(node_id)
        self._regions[node_id] = region_id
        self.op_count += 1

    # -- commit support ---------------------------------------------------------

    def _iter_node_ids(self):
        seen = set()
        for nid, value in self._nodes.items():
            seen.add(nid)
            if value is not None:
                yield nid
        for nid in self.base.nodes:
            if nid not in seen:
                yield nid

    def touched(self) -> set[int]:
        """Node ids whose committed record changes (including removals)."""
        dirty = set(self._out)
        dirty.update(self._nodes)
        dirty.update(self._scopes)
        dirty.update(self._regions)
        return dirty

    def removed(self) -> set[int]:
        return {nid for nid, value in self._nodes.items() if value is None}

    def scope_overrides(self) -> dict[int, int]:
        return dict(self._scopes)

    def region_overrides(self) -> dict[int, int]:
        return dict(self._regions)

    @property
    def is_empty(self) -> bool:
        return self.op_count == 0


# ---------------------------------------------------------------------------
# Traversal
# ---------------------------------------------------------------------------


def traverse_khop(
    source,
    start: int,
    k: int,
    *,
    cap: Capability | None = None,
    table: CapabilityTable | None = None,
    now: int = 0,
    region: Region | None = None,
    max_out_degree: int = DEFAULT_MAX_OUT_DEGREE,
) -> frozenset[int]:
    """Nodes reachable from ``start`` in at most ``k`` hops.

    With a capability, the traversal is gated (traverse rights over the
    start node) and confined to the capability's region: out-of-region
    nodes are neither visited nor returned.
    """
    if cap is not None:
        if table is None:
            raise ValueError("capability verification requires the table")
        verdict = table.verify(cap, Region.of(start), Rights.TRAVERSE, now)
        if not verdict:
            raise CapabilityRejected(verdict.reason)
        region = cap.region
    if not source.has_node(start):
        raise UnknownNode(start)
    if region is not None and not region.contains(start):
        return frozenset()
    visited = {start}
    frontier = deque([(start, 0)])
    while frontier:
        node, depth = frontier.popleft()
        if depth >= k:
            continue
        targets = source.neighbors(node)
        degree = len(targets) if hasattr(targets, "__len__") else None
        if degree is not None and degree > max_out_degree:
            raise DegreeBoundExceeded(node, degree, max_out_degree)
        for dst, _ in targets:
            if dst in visited:
                continue
            if region is not None and not region.contains(dst):
                continue
            if not source.has_node(dst):
                continue
            visited.add(dst)
            frontier.append((dst, depth + 1))
    return frozenset(visited)


class TraversalQuery:
    """Node-set to node-set query; composition is closed and associative."""

    def run(self, source, starts, **kwargs) -> frozenset[int]:
        raise NotImplementedError

    def run_from(self, source, start: int, **kwargs) -> frozenset[int]:
        return self.run(source, frozenset([start]), **kwargs)


@dataclass(frozen=True)
class KHopQuery(TraversalQuery):
    k: int

    def run(self, source, starts, *, region=None, max_out_degree=DEFAULT_MAX_OUT_DEGREE):
        out: set[int] = set()
        for start in starts:
            if not source.has_node(start):
                continue
            if region is not None and not region.contains(start):
                continue
            out |= traverse_khop(
                source, start, self.k, region=region, max_out_degree=max_out_degree
            )
        return frozenset(out)


@dataclass(frozen=True)
class ComposedQuery(TraversalQuery):
    parts: tuple[TraversalQuery, ...]

    def run(self, source, starts, **kwargs):
        current = frozenset(starts)
        for part in self.parts:
            current = part.run(source, current, **kwargs)
        return current


IDENTITY_QUERY = KHopQuery(0)


def query_compose(q1: TraversalQuery, q2: TraversalQuery) -> TraversalQuery:
    """Evaluate q2 from every output of q1 (deduplicated union)."""
    if not isinstance(q1, TraversalQuery) or not isinstance(q2, TraversalQuery):
        raise TypeMismatch("can only compose traversal queries")
    left = q1.parts if isinstance(q1, ComposedQuery) else (q1,)
    right = q2.parts if isinstance(q2, ComposedQuery) else (q2,)
    return ComposedQuery(left + right)


# ---------------------------------------------------------------------------
# Edge-list text format
# ---------------------------------------------------------------------------


def write_edge_list(g: GraphState, edges_path, nodes_path) -> None:
    """One ``src dst edge_type`` triple per line plus a ``node label`` file.

    Labels and edge types must not contain whitespace; payloads are not
    part of the text format.
    """
    with open(nodes_path, "w", encoding="utf-8") as fh:
        for nid in sorted(g.nodes):
            fh.write(f"{nid} {g.nodes[nid][0]}\n")
    with open(edges_path, "w", encoding="utf-8") as fh:
        for src, dst, edge_type in sorted(g.edges()):
            fh.write(f"{src} {dst} {edge_type}\n")


def read_edge_list(edges_path, nodes_path) -> GraphState:
    g = GraphState()
    with open(nodes_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            nid, label = line.split(maxsplit=1)
            g.add_node(label, node_id=int(nid))
    with open(edges_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            src, dst, edge_type = line.split()
            g.add_edge(int(src), int(dst), edge_type)
    return g
