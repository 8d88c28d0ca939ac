"""Immutable snapshots, lineage, observational equivalence, compaction.

A snapshot is a committed root map ``node-id -> (content hash, capability
scope id, ownership region id)`` with a parent link and a logical commit
tick.  The snapshot hash covers root + parent + tick over a canonical
serialization (sorted node ids, fixed-width fields), so chain integrity is
bit-exact.

Observational equivalence compares only the invariant vector — content
pairs, scope ids, region ids — and deliberately ignores ticks, parents,
physical placement, and fragmentation.  All commutativity measurements are
taken modulo this relation.
"""
from __future__ import annotations

import bisect
import hashlib
import struct
from dataclasses import dataclass, field

from .cas import ContentHash, NotFound, PackStore
from .graph import GraphState, decode_record

SNAP_MAGIC = b"SNAP"
_ZERO32 = b"\x00" * 32
ENTRY_FMT = "<Q32sII"
ENTRY_LEN = struct.calcsize(ENTRY_FMT)


class NonMonotoneTick(Exception):
    pass


class MissingContent(Exception):
    def __init__(self, content_hash: ContentHash):
        super().__init__(f"store lacks {content_hash.hex}")
        self.content_hash = content_hash


@dataclass(frozen=True)
class RootEntry:
    content: ContentHash
    scope_id: int = 0
    region_id: int = 0

    def packed(self, node_id: int) -> bytes:
        return struct.pack(ENTRY_FMT, node_id, self.content.digest, self.scope_id, self.region_id)


def canonical_root_bytes(root: dict[int, RootEntry], parent_hash: bytes | None, tick: int) -> bytes:
    parts = [SNAP_MAGIC, parent_hash or _ZERO32, struct.pack("<Q", tick), struct.pack("<I", len(root))]
    for nid in sorted(root):
        parts.append(root[nid].packed(nid))
    return b"".join(parts)


@dataclass(frozen=True, eq=False)
class Snapshot:
    """Immutable commit; compare by snapshot hash.

    ``fragment_count`` (physical pack segments the root spans) is carried
    for reporting but is outside both the hash and the invariant vector.
    """

    root: dict[int, RootEntry]
    parent_hash: bytes | None
    tick: int
    fragment_count: int
    snapshot_hash: bytes

    @classmethod
    def build(
        cls,
        root: dict[int, RootEntry],
        parent_hash: bytes | None,
        tick: int,
        fragment_count: int,
        canonical: bytes | None = None,
    ) -> "Snapshot":
        if canonical is None:
            canonical = canonical_root_bytes(root, parent_hash, tick)
        return cls(root, parent_hash, tick, fragment_count, hashlib.sha256(canonical).digest())

    def canonical_bytes(self) -> bytes:
        return canonical_root_bytes(self.root, self.parent_hash, self.tick)

    def with_fragment_count(self, fragment_count: int) -> "Snapshot":
        return Snapshot(self.root, self.parent_hash, self.tick, fragment_count, self.snapshot_hash)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Snapshot):
            return NotImplemented
        return self.snapshot_hash == other.snapshot_hash

    def __hash__(self) -> int:
        return hash(self.snapshot_hash)


@dataclass(frozen=True)
class InvariantVector:
    """The tuple observational equivalence compares; computable from a
    snapshot alone and insensitive to path, placement, and fragmentation."""

    content: frozenset[tuple[int, bytes]]
    scopes: frozenset[tuple[int, int]]
    regions: frozenset[tuple[int, int]]

    @classmethod
    def from_snapshot(cls, snapshot: Snapshot) -> "InvariantVector":
        content = frozenset((nid, e.content.digest) for nid, e in snapshot.root.items())
        scopes = frozenset((nid, e.scope_id) for nid, e in snapshot.root.items())
        regions = frozenset((nid, e.region_id) for nid, e in snapshot.root.items())
        return cls(content, scopes, regions)


def obs_equiv(s1: Snapshot, s2: Snapshot) -> bool:
    """Snapshot observational equivalence: equal invariant vectors."""
    return InvariantVector.from_snapshot(s1) == InvariantVector.from_snapshot(s2)


@dataclass(frozen=True)
class LineageReport:
    ok: bool
    reason: str | None = None
    violation_tick: int | None = None


class _RootBuffer:
    """Incrementally maintained canonical root serialization.

    Keeps the 48-byte packed entries in node-id order so a commit only
    patches the entries it touches instead of re-serializing the root.
    """

    __slots__ = ("nids", "packed")

    def __init__(self):
        self.nids: list[int] = []
        self.packed: list[bytes] = []

    def apply(self, delta: dict[int, RootEntry | None]) -> "_RootBuffer":
        fresh = _RootBuffer()
        fresh.nids = list(self.nids)
        fresh.packed = list(self.packed)
        for nid in sorted(delta):
            entry = delta[nid]
            pos = bisect.bisect_left(fresh.nids, nid)
            present = pos < len(fresh.nids) and fresh.nids[pos] == nid
            if entry is None:
                if present:
                    del fresh.nids[pos]
                    del fresh.packed[pos]
            elif present:
                fresh.packed[pos] = entry.packed(nid)
            else:
                fresh.nids.insert(pos, nid)
                fresh.packed.insert(pos, entry.packed(nid))
        return fresh

    def canonical(self, parent_hash: bytes | None, tick: int) -> bytes:
        head = SNAP_MAGIC + (parent_hash or _ZERO32) + struct.pack("<Q", tick)
        return head + struct.pack("<I", len(self.nids)) + b"".join(self.packed)


class Lineage:
    """Single append-only chain of snapshots over one store."""

    def __init__(self, store: PackStore):
        self.store = store
        self.snapshots: list[Snapshot] = []
        self.by_hash: dict[bytes, Snapshot] = {}
        self.deltas: dict[bytes, dict[int, RootEntry | None]] = {}
        self._buffer = _RootBuffer()

    @property
    def head(self) -> Snapshot | None:
        return self.snapshots[-1] if self.snapshots else None

    def commit_delta(
        self,
        delta: dict[int, RootEntry | None],
        tick: int,
        fragment_count: int | None = None,
    ) -> Snapshot:
        """Append a snapshot whose root is the head's root plus the delta."""
        parent = self.head
        if parent is not None and tick <= parent.tick:
            raise NonMonotoneTick(f"tick {tick} not after parent tick {parent.tick}")
        if parent is None and tick < 0:
            raise NonMonotoneTick("tick must be non-negative")
        root = dict(parent.root) if parent is not None else {}
        for nid, entry in delta.items():
            if entry is None:
                root.pop(nid, None)
            else:
                root[nid] = entry
        self._buffer = self._buffer.apply(delta)
        parent_hash = parent.snapshot_hash if parent is not None else None
        canonical = self._buffer.canonical(parent_hash, tick)
        if fragment_count is None:
            fragment_count = measure_fragments(self.store, root)
        snapshot = Snapshot.build(root, parent_hash, tick, fragment_count, canonical=canonical)
        self.snapshots.append(snapshot)
        self.by_hash[snapshot.snapshot_hash] = snapshot
        self.deltas[snapshot.snapshot_hash] = dict(delta)
        return snapshot

    # -- views ---------------------------------------------------------------

    def view(self, snapshot: Snapshot) -> GraphState:
        """Reconstruct the full graph value from the root map."""
        g = GraphState()
        records = {}
        for nid, entry in snapshot.root.items():
            try:
                raw = self.store.read_raw(entry.content)
            except NotFound:
                raise MissingContent(entry.content) from None
            records[nid] = decode_record(raw)
        for nid, (label, payload_digest, _) in records.items():
            payload = b""
            if payload_digest != _ZERO32:
                try:
                    payload = self.store.read_raw(ContentHash(payload_digest))
                except NotFound:
                    raise MissingContent(ContentHash(payload_digest)) from None
            g.add_node(label, payload, node_id=nid)
        for nid, (_, _, edges) in records.items():
            for dst, edge_type in edges:
                if dst in snapshot.root:
                    g.add_edge(nid, dst, edge_type)
        return g

    def view_source(self, snapshot: Snapshot) -> "SnapshotView":
        return SnapshotView(self.store, snapshot)

    # -- integrity --------------------------------------------------------------

    def lineage_check(self, head: Snapshot | None = None) -> LineageReport:
        """Walk parent links to the root: hashes recompute, ticks strictly
        increase, and a full replay of the commit deltas reproduces the
        head's invariant vector exactly."""
        if head is None:
            head = self.head
        if head is None:
            return LineageReport(True)
        chain = []
        cursor: Snapshot | None = head
        while cursor is not None:
            recomputed = hashlib.sha256(cursor.canonical_bytes()).digest()
            if recomputed != cursor.snapshot_hash:
                return LineageReport(False, "hash-mismatch", cursor.tick)
            chain.append(cursor)
            if cursor.parent_hash is None:
                cursor = None
            else:
                parent = self.by_hash.get(cursor.parent_hash)
                if parent is None:
                    return LineageReport(False, "missing-parent", cursor.tick)
                if cursor.tick <= parent.tick:
                    return LineageReport(False, "non-monotone-tick", cursor.tick)
                cursor = parent
        chain.reverse()
        replayed: dict[int, RootEntry] = {}
        for snapshot in chain:
            delta = self.deltas.get(snapshot.snapshot_hash)
            if delta is None:
                return LineageReport(False, "missing-delta", snapshot.tick)
            for nid, entry in delta.items():
                if entry is None:
                    replayed.pop(nid, None)
                else:
                    replayed[nid] = entry
        fake = Snapshot(replayed, None, 0, 0, b"")
        if InvariantVector.from_snapshot(fake) != InvariantVector.from_snapshot(head):
            return LineageReport(False, "replay-diff", head.tick)
        return LineageReport(True)

    # -- compaction ---------------------------------------------------------------

    def live_hashes(self, snapshot: Snapshot) -> list[ContentHash]:
        """Root records first, then the payloads they reference."""
        seen: dict[bytes, ContentHash] = {}
        payloads: dict[bytes, ContentHash] = {}
        for nid in sorted(snapshot.root):
            entry = snapshot.root[nid]
            seen.setdefault(entry.content.digest, entry.content)
            _, payload_digest, _ = decode_record(self.store.read_raw(entry.content))
            if payload_digest != _ZERO32:
                payloads.setdefault(payload_digest, ContentHash(payload_digest))
        return list(seen.values()) + list(payloads.values())

    def compact(self, k: int) -> Snapshot:
        """Rewrite the head's live content into at most ``k`` segments.

        Returns an observationally equivalent head (same snapshot hash)
        whose fragment count is at most ``k``; a no-op with zero rewrite
        bytes when the head is already within bound.
        """
        if k < 1:
            raise ValueError("fragment bound must be >= 1")
        head = self.head
        if head is None:
            return None
        current = measure_fragments(self.store, head.root)
        if current <= k:
            if current != head.fragment_count:
                head = head.with_fragment_count(current)
                self._replace_head(head)
            return head
        locations = self.store.rewrite(self.live_hashes(head), k)
        spans = {locations[e.content.digest] for e in head.root.values() if e.content.digest in locations}
        compacted = head.with_fragment_count(len(spans) if head.root else 0)
        self._replace_head(compacted)
        return compacted

    def _replace_head(self, snapshot: Snapshot) -> None:
        self.snapshots[-1] = snapshot
        self.by_hash[snapshot.snapshot_hash] = snapshot

    # -- reporting -------------------------------------------------------------------

    def report_csv(self) -> str:
        lines = ["tick,snapshot_hash,parent_hash,fragment_count"]
        for s in self.snapshots:
            parent = s.parent_hash.hex() if s.parent_hash else ""
            lines.append(f"{s.tick},{s.snapshot_hash.hex()},{parent},{s.fragment_count}")
        return "\n".join(lines) + "\n"

    def clone(self, store: PackStore) -> "Lineage":
        fresh = Lineage(store)
        fresh.snapshots = list(self.snapshots)
        fresh.by_hash = dict(self.by_hash)
        fresh.deltas = {k: dict(v) for k, v in self.deltas.items()}
        buffer = _RootBuffer()
        buffer.nids = list(self._buffer.nids)
        buffer.packed = list(self._buffer.packed)
        fresh._buffer = buffer
        return fresh


def measure_fragments(store: PackStore, root: dict[int, RootEntry]) -> int:
    """Distinct pack segments the root's records currently resolve to."""
    segments = set()
    for entry in root.values():
        seg = store.locate(entry.content)
        if seg is not None:
            segments.add(seg)
    return len(segments)


class SnapshotView:
    """Read-only node source over a snapshot, going through the store's
    instrumented read path (LRU tier + access log)."""

    __slots__ = ("store", "snapshot")

    def __init__(self, store: PackStore, snapshot: Snapshot):
        self.store = store
        self.snapshot = snapshot

    def has_node(self, node_id: int) -> bool:
        return node_id in self.snapshot.root

    def _record(self, node_id: int):
        entry = self.snapshot.root.get(node_id)
        if entry is None:
            raise KeyError(node_id)
        return decode_record(self.store.get(entry.content))

    def neighbors(self, node_id: int) -> list[tuple[int, str]]:
        return self._record(node_id)[2]

    def label(self, node_id: int) -> str:
        return self._record(node_id)[0]

    def payload(self, node_id: int) -> bytes:
        _, payload_digest, _ = self._record(node_id)
        if payload_digest == _ZERO32:
            return b""
        return self.store.get(ContentHash(payload_digest))
