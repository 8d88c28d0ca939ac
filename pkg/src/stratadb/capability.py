"""Bounded capability lattice with scoped regions, TTL, and revocation.

Capabilities form a tree rooted at an all-powerful admin token.  A child can
only narrow its parent: rights never increase, regions never widen, expiry
never extends (anti-escalation).  Revocation cascades eagerly through the
proof tree and every transition lands in an append-only audit log, so stale
capabilities fail verification immediately and the live set can be
reconstructed by replaying the log.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from enum import IntEnum

from .util import LogicalClock

REGION_BOUND = 2**62


class CapabilityError(Exception):
    pass


class IllegalEscalation(CapabilityError):
    pass


class ParentRevoked(CapabilityError):
    pass


class ParentExpired(CapabilityError):
    pass


class UnknownCapability(CapabilityError):
    pass


class CapabilityRejected(CapabilityError):
    """Raised by gated operations when verification rejects."""

    def __init__(self, reason: str):
        super().__init__(f"capability rejected: {reason}")
        self.reason = reason


class Rights(IntEnum):
    NONE = 0
    READ = 1
    TRAVERSE = 2
    WRITE = 3
    ADMIN = 4

    @classmethod
    def parse(cls, name: str) -> "Rights":
        try:
            return cls[name.upper()]
        except KeyError:
            raise ValueError(f"unknown rights level {name!r}") from None


@dataclass(frozen=True)
class Region:
    """Set of node-id intervals; containment is the partial order.

    Intervals are closed, disjoint, and sorted, so equality of the
    normalized tuple is set equality.
    """

    intervals: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "intervals", _normalize(self.intervals))

    @classmethod
    def span(cls, lo: int, hi: int) -> "Region":
        if lo > hi:
            return cls(())
        return cls(((lo, hi),))

    @classmethod
    def of(cls, *node_ids: int) -> "Region":
        return cls(tuple((n, n) for n in node_ids))

    @classmethod
    def full(cls) -> "Region":
        return cls(((0, REGION_BOUND),))

    @property
    def is_empty(self) -> bool:
        return not self.intervals

    def contains(self, node_id: int) -> bool:
        for lo, hi in self.intervals:
            if lo <= node_id <= hi:
                return True
            if node_id < lo:
                return False
        return False

    def issubset(self, other: "Region") -> bool:
        for lo, hi in self.intervals:
            if not any(olo <= lo and hi <= ohi for olo, ohi in other.intervals):
                return False
        return True

    def intersect(self, other: "Region") -> "Region":
        out = []
        for lo, hi in self.intervals:
            for olo, ohi in other.intervals:
                nlo, nhi = max(lo, olo), min(hi, ohi)
                if nlo <= nhi:
                    out.append((nlo, nhi))
        return Region(tuple(out))

    def union(self, other: "Region") -> "Region":
        return Region(self.intervals + other.intervals)

    def node_ids(self) -> list[int]:
        """All member ids; only sensible for small regions (tests, generators)."""
        out = []
        for lo, hi in self.intervals:
            out.extend(range(lo, hi + 1))
        return out


def _normalize(intervals) -> tuple[tuple[int, int], ...]:
    spans = sorted((lo, hi) for lo, hi in intervals if lo <= hi)
    merged: list[list[int]] = []
    for lo, hi in spans:
        if merged and lo <= merged[-1][1] + 1:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return tuple((lo, hi) for lo, hi in merged)


@dataclass(frozen=True)
class Capability:
    """Unforgeable token: bounded rights over a bounded region for bounded time.

    ``proof`` is the chain of ancestor ids back to the root; verification
    resolves those ids against the live table, so a capability object stays
    small.
    """

    cap_id: int
    region: Region
    rights: Rights
    proof: tuple[int, ...] = ()
    expiry: float = math.inf


GRANT = "grant"
REVOKE = "revoke"
DOWNGRADE = "downgrade"
VERIFY_FAIL = "verify-fail"


@dataclass(frozen=True)
class AuditEvent:
    tick: int
    event: str
    cap_id: int
    subject: str = ""
    detail: str = ""  # replay payload (e.g. downgrade level); not exported


class AuditLog:
    """Append-only, tick-monotone event sequence."""

    def __init__(self):
        self._events: list[AuditEvent] = []

    def append(self, event: AuditEvent) -> None:
        if self._events and event.tick < self._events[-1].tick:
            raise ValueError("audit ticks must be monotone non-decreasing")
        self._events.append(event)

    def __iter__(self):
        return iter(self._events)

    def __len__(self) -> int:
        return len(self._events)

    def csv(self) -> str:
        lines = ["tick,event,cap_id,subject"]
        lines.extend(f"{e.tick},{e.event},{e.cap_id},{e.subject}" for e in self._events)
        return "\n".join(lines) + "\n"

    def clone(self) -> "AuditLog":
        fresh = AuditLog()
        fresh._events = list(self._events)
        return fresh


VERIFY_OK = "ok"
REASON_REVOKED = "revoked"
REASON_EXPIRED = "expired"
REASON_REGION = "region"
REASON_RIGHTS = "rights"
REASON_CHAIN = "chain"


@dataclass(frozen=True)
class Verification:
    ok: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.ok


class CapabilityTable:
    """Single logical authority for grant / revoke / downgrade / verify.

    Mutations are serialized; verify holds the same lock briefly so it never
    observes a half-applied revocation cascade.
    """

    def __init__(self, clock: LogicalClock | None = None, root_region: Region | None = None):
        self.clock = clock if clock is not None else LogicalClock()
        self.audit = AuditLog()
        self._lock = threading.RLock()
        self._caps: dict[int, Capability] = {}
        self._children: dict[int, list[int]] = {}
        self._revoked: set[int] = set()
        self._next_id = 1
        root = Capability(self._take_id(), root_region or Region.full(), Rights.ADMIN)
        self._caps[root.cap_id] = root
        self._children[root.cap_id] = []
        self.root = root

    def _take_id(self) -> int:
        cap_id = self._next_id
        self._next_id += 1
        return cap_id

    def _resolve(self, cap: Capability | int) -> Capability:
        cap_id = cap.cap_id if isinstance(cap, Capability) else cap
        found = self._caps.get(cap_id)
        if found is None:
            raise UnknownCapability(f"no capability {cap_id}")
        return found

    # -- transitions ---------------------------------------------------------

    def grant(
        self,
        parent: Capability | int,
        region: Region,
        rights: Rights,
        ttl: float,
        subject: str = "",
        cap_id: int | None = None,
    ) -> Capability:
        """Derive a narrowed child capability.

        Escalation requests (wider region or higher rights than the parent)
        are errors; an over-long TTL is silently clamped to the parent's
        expiry.
        """
        with self._lock:
            parent = self._resolve(parent)
            now = self.clock.now
            if parent.cap_id in self._revoked:
                raise ParentRevoked(f"capability {parent.cap_id} is revoked")
            if now >= parent.expiry:
                raise ParentExpired(f"capability {parent.cap_id} expired at {parent.expiry}")
            if not region.issubset(parent.region):
                raise IllegalEscalation("requested region exceeds parent region")
            if rights > parent.rights:
                raise IllegalEscalation("requested rights exceed parent rights")
            if cap_id is None:
                cap_id = self._take_id()
            elif cap_id in self._caps:
                raise ValueError(f"capability id {cap_id} already exists")
            else:
                self._next_id = max(self._next_id, cap_id + 1)
            child = Capability(
                cap_id=cap_id,
                region=region.intersect(parent.region),
                rights=min(rights, parent.rights),
                proof=parent.proof + (parent.cap_id,),
                expiry=min(now + ttl, parent.expiry),
            )
            self._caps[child.cap_id] = child
            self._children[child.cap_id] = []
            self._children[parent.cap_id].append(child.cap_id)
            self.audit.append(
                AuditEvent(
                    now,
                    GRANT,
                    child.cap_id,
                    subject,
                    detail=f"parent={parent.cap_id};rights={int(child.rights)}",
                )
            )
            return child

    def revoke(self, cap: Capability | int, subject: str = "") -> tuple[int, ...]:
        """Invalidate a capability and every descendant; idempotent.

        Returns the ids revoked by this call (empty when already revoked:
        a repeat revoke is a no-op and leaves no trace, so replaying the
        audit log still sees each transition exactly once).
        """
        with self._lock:
            cap = self._resolve(cap)
            if cap.cap_id in self._revoked:
                return ()
            now = self.clock.now
            cascade = []
            stack = [cap.cap_id]
            while stack:
                cid = stack.pop()
                if cid in self._revoked:
                    continue
                self._revoked.add(cid)
                cascade.append(cid)
                stack.extend(self._children.get(cid, ()))
            for cid in cascade:
                self.audit.append(AuditEvent(now, REVOKE, cid, subject, detail=f"root={cap.cap_id}"))
            return tuple(cascade)

    def downgrade(self, cap: Capability | int, new_rights: Rights, subject: str = "") -> Capability:
        """Monotone rights reduction; the table record is replaced in place."""
        with self._lock:
            cap = self._resolve(cap)
            if new_rights > cap.rights:
                raise IllegalEscalation("downgrade cannot increase rights")
            updated = Capability(cap.cap_id, cap.region, new_rights, cap.proof, cap.expiry)
            self._caps[cap.cap_id] = updated
            self.audit.append(
                AuditEvent(self.clock.now, DOWNGRADE, cap.cap_id, subject, detail=str(int(new_rights)))
            )
            return updated

    # -- checks ---------------------------------------------------------------

    def verify(
        self,
        cap: Capability | int,
        region: Region,
        rights: Rights,
        now: int | None = None,
        subject: str = "",
    ) -> Verification:
        """Accept iff the capability is live, unexpired, covers the region and
        rights, and its proof chain validates link by link.  Rejection is a
        result (logged), not an error."""
        with self._lock:
            try:
                live = self._resolve(cap)
            except UnknownCapability:
                return self._fail(cap if isinstance(cap, int) else cap.cap_id, REASON_CHAIN, subject)
            if now is None:
                now = self.clock.now
            if live.cap_id in self._revoked:
                return self._fail(live.cap_id, REASON_REVOKED, subject)
            if now >= live.expiry:
                return self._fail(live.cap_id, REASON_EXPIRED, subject)
            if not region.issubset(live.region):
                return self._fail(live.cap_id, REASON_REGION, subject)
            if rights > live.rights:
                return self._fail(live.cap_id, REASON_RIGHTS, subject)
            child = live
            for parent_id in reversed(live.proof):
                parent = self._caps.get(parent_id)
                if (
                    parent is None
                    or parent_id in self._revoked
                    or child.region.issubset(parent.region) is False
                    or child.expiry > parent.expiry
                ):
                    return self._fail(live.cap_id, REASON_CHAIN, subject)
                child = parent
            return Verification(True)

    def _fail(self, cap_id: int, reason: str, subject: str) -> Verification:
        self.audit.append(AuditEvent(self.clock.now, VERIFY_FAIL, cap_id, subject, detail=reason))
        return Verification(False, reason)

    # -- introspection ----------------------------------------------------------

    def get(self, cap_id: int) -> Capability:
        return self._resolve(cap_id)

    def is_live(self, cap_id: int) -> bool:
        return cap_id in self._caps and cap_id not in self._revoked

    def live_ids(self) -> list[int]:
        return [cid for cid in self._caps if cid not in self._revoked]

    def children(self, cap_id: int) -> tuple[int, ...]:
        return tuple(self._children.get(cap_id, ()))

    def descendants(self, cap_id: int) -> set[int]:
        out: set[int] = set()
        stack = list(self._children.get(cap_id, ()))
        while stack:
            cid = stack.pop()
            out.add(cid)
            stack.extend(self._children.get(cid, ()))
        return out

    def live_scopes(self) -> frozenset[tuple[tuple[tuple[int, int], ...], int]]:
        """Observable scope set: (region, rights) of live capabilities.

        Capability ids and delegation paths deliberately do not appear here;
        only the granted scopes are observable.
        """
        return frozenset(
            (self._caps[cid].region.intervals, int(self._caps[cid].rights))
            for cid in self._caps
            if cid not in self._revoked
        )

    def replay(self) -> dict[int, tuple[int, bool]]:
        """Reconstruct {cap_id: (rights, revoked)} purely from the audit log.

        Used to assert audit completeness: the reconstruction must match the
        live table exactly.
        """
        state: dict[int, tuple[int, bool]] = {self.root.cap_id: (int(self.root.rights), False)}
        for event in self.audit:
            if event.event == GRANT:
                rights = int(event.detail.split("rights=")[1])
                state[event.cap_id] = (rights, False)
            elif event.event == REVOKE:
                rights, _ = state[event.cap_id]
                state[event.cap_id] = (rights, True)
            elif event.event == DOWNGRADE:
                _, revoked = state[event.cap_id]
                state[event.cap_id] = (int(event.detail), revoked)
        return state

    def table_state(self) -> dict[int, tuple[int, bool]]:
        return {cid: (int(cap.rights), cid in self._revoked) for cid, cap in self._caps.items()}

    def anti_escalation_ok(self) -> bool:
        """Every capability ever created narrowed its whole proof chain.

        Rights are checked at grant time by replaying the audit log (a later
        downgrade of a parent does not retroactively escalate its children);
        regions and expiries are immutable, so they are checked statically.
        """
        rights_now: dict[int, int] = {self.root.cap_id: int(self.root.rights)}
        for event in self.audit:
            if event.event == GRANT:
                parent_id = int(event.detail.split("parent=")[1].split(";")[0])
                granted = int(event.detail.split("rights=")[1])
                if granted > rights_now.get(parent_id, -1):
                    return False
                rights_now[event.cap_id] = granted
            elif event.event == DOWNGRADE:
                rights_now[event.cap_id] = int(event.detail)
        for cap in self._caps.values():
            child = cap
            for parent_id in reversed(cap.proof):
                parent = self._caps.get(parent_id)
                if parent is None:
                    return False
                if not child.region.issubset(parent.region) or child.expiry > parent.expiry:
                    return False
                child = parent
        return True

    def clone(self) -> "CapabilityTable":
        fresh = CapabilityTable.__new__(CapabilityTable)
        fresh.clock = self.clock  # shared engine clock; engine clones it once
        fresh.audit = self.audit.clone()
        fresh._lock = threading.RLock()
        fresh._caps = dict(self._caps)
        fresh._children = {k: list(v) for k, v in self._children.items()}
        fresh._revoked = set(self._revoked)
        fresh._next_id = self._next_id
        fresh.root = self.root
        return fresh

    def rebind_clock(self, clock: LogicalClock) -> None:
        self.clock = clock
