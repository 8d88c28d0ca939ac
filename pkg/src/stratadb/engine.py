"""Engine facade: wires the pack store, capability table, lease table, and
snapshot lineage into one embedded storage engine.

Responsibilities are split deliberately: reads (traversals, node fetches)
run against immutable snapshot views and never block or observe writers;
writes go through staged observations that are capability-gated, acquire
exclusive per-node leases, and become visible only at commit.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .capability import (
    Capability,
    CapabilityRejected,
    CapabilityTable,
    Region,
    Rights,
)
from .cas import ContentHash, PackStore
from .graph import (
    DEFAULT_MAX_OUT_DEGREE,
    GraphStaging,
    GraphState,
    LabelSchema,
    encode_record,
    traverse_khop,
)
from .ownership import LeaseTable
from .snapshots import Lineage, RootEntry, Snapshot, SnapshotView
from .util import LogicalClock

_ZERO32 = b"\x00" * 32


@dataclass
class EngineConfig:
    max_object_bytes: int = 64 * 1024 * 1024
    verify_on_read: bool = True
    verify_capabilities: bool = True
    cache_entries: int = 0
    segment_bytes: int | None = None
    fragment_bound: int = 2
    schema: LabelSchema | None = None
    max_out_degree: int = DEFAULT_MAX_OUT_DEGREE


class Engine:
    """One lineage, one store, one capability authority, one lease table."""

    def __init__(self, config: EngineConfig | None = None, directory=None):
        self.config = config or EngineConfig()
        self.clock = LogicalClock()
        self.store = PackStore(
            directory,
            max_object_bytes=self.config.max_object_bytes,
            verify_on_read=self.config.verify_on_read,
            cache_entries=self.config.cache_entries,
            segment_bytes=self.config.segment_bytes,
        )
        self.caps = CapabilityTable(self.clock)
        self.leases = LeaseTable()
        self.lineage = Lineage(self.store)
        self.graph = GraphState()  # live mirror of the head snapshot
        self._locations: dict[int, int] = {}  # node id -> segment id of its record
        self._seg_counter: Counter[int] = Counter()
        self._next_node_id = 0

    # -- capability passthrough -------------------------------------------------

    @property
    def root_cap(self) -> Capability:
        return self.caps.root

    def grant(self, parent, region, rights, ttl, subject="", cap_id=None):
        return self.caps.grant(parent, region, rights, ttl, subject, cap_id)

    def revoke(self, cap, subject=""):
        return self.caps.revoke(cap, subject)

    def verify(self, cap, region, rights, now=None):
        return self.caps.verify(cap, region, rights, now)

    # -- staging and commit -------------------------------------------------------

    def _take_node_id(self) -> int:
        nid = self._next_node_id
        self._next_node_id += 1
        return nid

    def begin(self, cap: Capability | None = None) -> GraphStaging:
        """Open a staged observation against the current head."""
        table = self.caps if (self.config.verify_capabilities and cap is not None) else None
        return GraphStaging(
            self.graph,
            schema=self.config.schema,
            cap=cap,
            table=table,
            now=self.clock.now,
            id_allocator=self._take_node_id,
        )

    def commit(self, staging: GraphStaging | None = None) -> Snapshot:
        """Apply a staged observation as one immutable snapshot.

        Write leases are acquired for every touched node (object creation
        takes its implicit first lease here too), capability coverage is
        re-verified, and every node's new record is committed through the
        ownership head-swap.
        """
        tick = self.clock.advance()
        if staging is None or not staging.touched():
            return self.lineage.commit_delta({}, tick, self._fragment_count())
        touched = staging.touched()
        removed = staging.removed()
        if (
            self.config.verify_capabilities
            and staging.cap is not None
            and touched
        ):
            verdict = self.caps.verify(staging.cap, Region.of(*touched), Rights.WRITE, self.clock.now)
            if not verdict:
                raise CapabilityRejected(verdict.reason)
        ordered = sorted(touched)
        leases = {nid: self.leases.acquire_write(nid, tick) for nid in ordered}
        try:
            delta: dict[int, RootEntry | None] = {}
            scopes = staging.scope_overrides()
            regions = staging.region_overrides()
            head = self.lineage.head
            for nid in ordered:
                if nid in removed:
                    continue
                label, payload = staging.node(nid)
                payload_digest = _ZERO32
                if payload:
                    payload_digest = self.store.put(payload).digest
                record = encode_record(label, payload_digest, staging.out(nid))
                content = self.leases.commit(leases[nid], record, self.store, tick)
                prior = head.root.get(nid) if head is not None else None
                delta[nid] = RootEntry(
                    content,
                    scopes.get(nid, prior.scope_id if prior else 0),
                    regions.get(nid, prior.region_id if prior else 0),
                )
                self._track(nid, self.store.locate(content))
            for nid in removed:
                delta[nid] = None
                self._track(nid, None)
        finally:
            for nid, lease in leases.items():
                self.leases.release(lease)
        for nid in removed:
            self.leases.drop(nid)
        snapshot = self.lineage.commit_delta(delta, tick, self._fragment_count())
        self._apply_to_mirror(staging, touched, removed)
        if touched:
            self._next_node_id = max(self._next_node_id, max(touched) + 1)
        return snapshot

    def _apply_to_mirror(self, staging: GraphStaging, touched, removed) -> None:
        for nid in touched:
            if nid in removed:
                self.graph.nodes.pop(nid, None)
                self.graph.out.pop(nid, None)
                continue
            self.graph.nodes[nid] = staging.node(nid)
            self.graph.out[nid] = set(staging.out(nid))
        self.graph._next_id = max(self.graph._next_id, self._next_node_id)

    def _track(self, nid: int, segment: int | None) -> None:
        old = self._locations.pop(nid, None)
        if old is not None:
            self._seg_counter[old] -= 1
            if self._seg_counter[old] <= 0:
                del self._seg_counter[old]
        if segment is not None:
            self._locations[nid] = segment
            self._seg_counter[segment] += 1

    def _fragment_count(self) -> int:
        return len(self._seg_counter)

    def commit_graph(self, g: GraphState, cap: Capability | None = None) -> Snapshot:
        """Commit an entire graph value (bootstrap convenience)."""
        staging = self.begin(cap)
        for nid in sorted(g.nodes):
            label, payload = g.nodes[nid]
            staging.add_node(label, payload, node_id=nid)
        for src, dst, edge_type in sorted(g.edges()):
            staging.add_edge(src, dst, edge_type)
        return self.commit(staging)

    # -- reads -----------------------------------------------------------------------

    @property
    def head(self) -> Snapshot | None:
        return self.lineage.head

    def head_view(self) -> SnapshotView:
        head = self.lineage.head
        if head is None:
            raise ValueError("no snapshot committed yet")
        return SnapshotView(self.store, head)

    def view(self, snapshot: Snapshot | None = None) -> GraphState:
        return self.lineage.view(snapshot or self.lineage.head)

    def traverse(
        self,
        start: int,
        k: int,
        cap: Capability | None = None,
        snapshot: Snapshot | None = None,
    ) -> frozenset[int]:
        """Capability-gated k-hop traversal over an immutable snapshot view."""
        source = SnapshotView(self.store, snapshot or self.lineage.head)
        region = cap.region if cap is not None else None
        if cap is not None and self.config.verify_capabilities:
            return traverse_khop(
                source,
                start,
                k,
                cap=cap,
                table=self.caps,
                now=self.clock.now,
                max_out_degree=self.config.max_out_degree,
            )
        return traverse_khop(
            source, start, k, region=region, max_out_degree=self.config.max_out_degree
        )

    # -- ownership sessions -------------------------------------------------------------

    def update_node(
        self,
        nid: int,
        *,
        payload: bytes | None = None,
        label: str | None = None,
        cap: Capability | None = None,
    ) -> Snapshot:
        """Exclusive-owner update of one node (acquire, commit, release)."""
        staging = self.begin(cap)
        if label is not None:
            staging.set_label(nid, label)
        if payload is not None:
            staging.set_payload(nid, payload)
        return self.commit(staging)

    def borrow_node(self, nid: int) -> bytes:
        """Shared read of a node's current record under a read lease."""
        lease = self.leases.acquire_read(nid, self.clock.now)
        try:
            head = self.leases.head(nid)
            return self.store.get(head) if head is not None else b""
        finally:
            self.leases.release(lease)

    # -- physical maintenance ---------------------------------------------------------------

    def compact(self, k: int | None = None) -> Snapshot:
        """Bound the head's fragment count; runs between commits only."""
        k = k if k is not None else self.config.fragment_bound
        snapshot = self.lineage.compact(k)
        self._rebuild_locations()
        return snapshot

    def merge_segments(self) -> None:
        moved = self.store.merge_oldest()
        if not moved:
            return
        head = self.lineage.head
        if head is None:
            return
        for nid, entry in head.root.items():
            new_seg = moved.get(entry.content.digest)
            if new_seg is not None:
                self._track(nid, new_seg)

    def roll_segment(self) -> int:
        return self.store.roll_segment()

    def _rebuild_locations(self) -> None:
        self._locations.clear()
        self._seg_counter.clear()
        head = self.lineage.head
        if head is None:
            return
        for nid, entry in head.root.items():
            self._track(nid, self.store.locate(entry.content))

    # -- cloning ---------------------------------------------------------------------------

    def clone(self) -> "Engine":
        """Independent deep copy (memory-backed engines only)."""
        fresh = Engine.__new__(Engine)
        fresh.config = self.config
        fresh.clock = self.clock.clone()
        fresh.store = self.store.clone()
        fresh.caps = self.caps.clone()
        fresh.caps.rebind_clock(fresh.clock)
        fresh.leases = self.leases.clone()
        fresh.lineage = self.lineage.clone(fresh.store)
        fresh.graph = self.graph.clone()
        fresh._locations = dict(self._locations)
        fresh._seg_counter = Counter(self._seg_counter)
        fresh._next_node_id = self._next_node_id
        return fresh
