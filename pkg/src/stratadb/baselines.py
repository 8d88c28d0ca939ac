"""Simplified reference backends used by the measurement harness.

Each baseline exposes the same ``clone / apply / observe`` interface as the
engine adapter but lacks the layer under test, so its observable state (or
its read results) stays sensitive to operation order:

* page store      - rows land in fixed-capacity pages by arrival order
* merge log       - merged runs are observable in arrival order
* unguarded graph - queries read live mutable state; writes reorder placement
* dict store      - plain content-keyed map (put/get is already order-free)
* append store    - non-deduplicating log; duplicate puts write again
* flat ACL        - mutable subject table without a lattice or proof chains
"""
from __future__ import annotations

import hashlib
from collections import deque

from .cas import ENTRY_HEADER_LEN, WriteStats
from .events import Event, Outcome, err, ok

PAGE_CAPACITY = 4


class PageStoreBaseline:
    """Order-sensitive page store for insert/delete events.

    Rows are appended to the last page with room; deletes leave holes.  The
    exact page layout is the observable state, so two inserts applied in
    opposite orders diverge.
    """

    def __init__(self):
        self.pages: list[list] = []

    def seed_graph(self, g) -> None:
        for nid in sorted(g.nodes):
            self._insert(("n", nid), g.nodes[nid])
        for edge in sorted(g.edges()):
            self._insert(("e",) + edge, b"")

    def _find(self, key):
        for pi, page in enumerate(self.pages):
            for si, row in enumerate(page):
                if row is not None and row[0] == key:
                    return pi, si
        return None

    def _insert(self, key, value) -> Outcome:
        if self._find(key) is not None:
            return err("exists")
        if not self.pages or len(self.pages[-1]) >= PAGE_CAPACITY:
            self.pages.append([])
        self.pages[-1].append((key, value))
        return ok()

    def _delete(self, key) -> Outcome:
        loc = self._find(key)
        if loc is None:
            return err("missing")
        pi, si = loc
        self.pages[pi][si] = None
        return ok()

    def apply(self, event: Event) -> Outcome:
        p = event.as_dict()
        if event.kind == "insert-node":
            return self._insert(("n", p["nid"]), (p["label"], p["payload"]))
        if event.kind == "delete-node":
            return self._delete(("n", p["nid"]))
        if event.kind == "insert-edge":
            return self._insert(("e", p["src"], p["dst"], p["etype"]), b"")
        if event.kind == "delete-edge":
            return self._delete(("e", p["src"], p["dst"], p["etype"]))
        raise ValueError(f"page store cannot apply {event.kind}")

    def observe(self):
        return tuple(tuple(page) for page in self.pages)

    def clone(self) -> "PageStoreBaseline":
        fresh = PageStoreBaseline()
        fresh.pages = [list(page) for page in self.pages]
        return fresh


class MergeLogBaseline:
    """Unordered merge log: merging runs records them in arrival order and
    that order is observable, so merge/merge pairs diverge."""

    def __init__(self):
        self.pending: dict[str, tuple] = {}
        self.log: list = []

    def seed_runs(self, runs: dict[str, tuple]) -> None:
        self.pending.update(runs)

    def apply(self, event: Event) -> Outcome:
        if event.kind == "merge":
            tag = event.get("tag")
            if tag not in self.pending:
                return err("missing-run")
            self.log.append((tag, self.pending.pop(tag)))
            return ok()
        if event.kind == "compact":
            self.log = [("squash", tuple(self.log))]
            return ok()
        raise ValueError(f"merge log cannot apply {event.kind}")

    def observe(self):
        return (tuple(self.log), frozenset(self.pending))

    def clone(self) -> "MergeLogBaseline":
        fresh = MergeLogBaseline()
        fresh.pending = dict(self.pending)
        fresh.log = list(self.log)
        return fresh


class UnguardedGraphBaseline:
    """Shared-mutation graph with no snapshots and no leases.

    Traversals read live state, so a traverse/update pair diverges; writes
    move the node to the front of the allocation order, and that placement
    is observable, so even writes to distinct objects diverge.
    """

    def __init__(self):
        self.nodes: dict[int, tuple[str, bytes]] = {}
        self.out: dict[int, set] = {}
        self.alloc: list[int] = []

    def seed_graph(self, g) -> None:
        for nid in sorted(g.nodes):
            self.nodes[nid] = g.nodes[nid]
            self.out[nid] = set(g.out[nid])
            self.alloc.append(nid)

    def _bfs(self, start: int, k: int) -> tuple[int, ...]:
        if start not in self.nodes:
            return ()
        seen = {start}
        queue = deque([(start, 0)])
        while queue:
            node, depth = queue.popleft()
            if depth >= k:
                continue
            for dst, _ in self.out.get(node, ()):
                if dst not in seen and dst in self.nodes:
                    seen.add(dst)
                    queue.append((dst, depth + 1))
        return tuple(sorted(seen))

    def _write(self, nid: int, payload: bytes) -> Outcome:
        if nid not in self.nodes:
            return err("missing")
        label, _ = self.nodes[nid]
        self.nodes[nid] = (label, payload)
        self.alloc.remove(nid)
        self.alloc.insert(0, nid)
        return ok()

    def apply(self, event: Event) -> Outcome:
        p = event.as_dict()
        if event.kind == "traverse":
            return ok(self._bfs(p["start"], p["k"]))
        if event.kind in ("update", "own"):
            return self._write(p["nid"], p["payload"])
        if event.kind == "borrow":
            nid = p["nid"]
            if nid not in self.nodes:
                return err("missing")
            label, payload = self.nodes[nid]
            return ok(hashlib.sha256(label.encode() + b"\x00" + payload).hexdigest())
        raise ValueError(f"unguarded graph cannot apply {event.kind}")

    def observe(self):
        edges = frozenset((s, d, t) for s, targets in self.out.items() for d, t in targets)
        return (frozenset(self.nodes.items()), edges, tuple(self.alloc))

    def clone(self) -> "UnguardedGraphBaseline":
        fresh = UnguardedGraphBaseline()
        fresh.nodes = dict(self.nodes)
        fresh.out = {k: set(v) for k, v in self.out.items()}
        fresh.alloc = list(self.alloc)
        return fresh


class DictStoreBaseline:
    """Plain content-keyed map: the one backend that is already order-free,
    matching the expectation that put/get commutes even without packs."""

    def __init__(self):
        self.data: dict[bytes, bytes] = {}

    def seed_contents(self, contents) -> None:
        for payload in contents:
            self.data[hashlib.sha256(payload).digest()] = payload

    def apply(self, event: Event) -> Outcome:
        p = event.as_dict()
        if event.kind == "put":
            digest = hashlib.sha256(p["payload"]).digest()
            self.data[digest] = p["payload"]
            return ok(digest.hex())
        if event.kind == "get":
            payload = self.data.get(p["digest"])
            if payload is None:
                return err("not-found")
            return ok(hashlib.sha256(payload).hexdigest())
        raise ValueError(f"dict store cannot apply {event.kind}")

    def observe(self):
        return frozenset(self.data.items())

    def clone(self) -> "DictStoreBaseline":
        fresh = DictStoreBaseline()
        fresh.data = dict(self.data)
        return fresh


class AppendStoreBaseline:
    """Non-deduplicating append log (the CAS-ablated backend).

    Every put appends, duplicates included, and the physical log order is
    observable; write amplification accounting mirrors the pack format's
    per-entry header.
    """

    def __init__(self):
        self.log: list[tuple[bytes, bytes]] = []
        self.stats = WriteStats()

    def seed_contents(self, contents) -> None:
        for payload in contents:
            self.log.append((hashlib.sha256(payload).digest(), payload))

    def apply(self, event: Event) -> Outcome:
        p = event.as_dict()
        if event.kind == "put":
            digest = hashlib.sha256(p["payload"]).digest()
            self.log.append((digest, p["payload"]))
            self.stats.logical_bytes += len(p["payload"])
            self.stats.physical_bytes += ENTRY_HEADER_LEN + len(p["payload"])
            return ok(digest.hex())
        if event.kind == "get":
            for digest, payload in self.log:
                if digest == p["digest"]:
                    return ok(hashlib.sha256(payload).hexdigest())
            return err("not-found")
        raise ValueError(f"append store cannot apply {event.kind}")

    def observe(self):
        return tuple(digest for digest, _ in self.log)

    def clone(self) -> "AppendStoreBaseline":
        fresh = AppendStoreBaseline()
        fresh.log = list(self.log)
        fresh.stats = WriteStats(self.stats.logical_bytes, self.stats.physical_bytes)
        return fresh


class AclBaseline:
    """Flat mutable ACL keyed by subject: no lattice, no proof chains, no
    cascade.  Grant overwrites, revoke removes, so grant/revoke on the same
    subject is order-sensitive state, not just order-sensitive legality."""

    def __init__(self):
        self.acl: dict[str, int] = {}

    def seed_subjects(self, subjects: dict[str, int]) -> None:
        self.acl.update(subjects)

    def apply(self, event: Event) -> Outcome:
        p = event.as_dict()
        if event.kind == "grant":
            self.acl[p["subject"]] = p["rights"]
            return ok()
        if event.kind == "revoke":
            self.acl.pop(p["subject"], None)
            return ok()
        raise ValueError(f"acl cannot apply {event.kind}")

    def observe(self):
        return frozenset(self.acl.items())

    def clone(self) -> "AclBaseline":
        fresh = AclBaseline()
        fresh.acl = dict(self.acl)
        return fresh
