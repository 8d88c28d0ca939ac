"""Event model for the commutativity measurement harness.

Events are fully parameterized at generation time (fresh node ids and
capability ids are pre-minted, traversals pin the snapshot they were issued
against), so the same event can be applied in either order, or to a
simplified baseline backend, and outcomes stay comparable.
"""
from __future__ import annotations

from dataclasses import dataclass, field

PI1 = "pi1"
PI2 = "pi2"
PI3 = "pi3"
PI4 = "pi4"
PI5 = "pi5"
PI6 = "pi6"
PROJECTIONS = (PI1, PI2, PI3, PI4, PI5, PI6)

# Event classes per projection: insert/delete, merge/compact, traverse/update,
# put/get, grant/revoke, own/borrow.
EVENT_CLASSES: dict[str, tuple[str, ...]] = {
    PI1: ("insert-node", "insert-edge", "delete-node", "delete-edge"),
    PI2: ("merge", "compact"),
    PI3: ("traverse", "update"),
    PI4: ("put", "get"),
    PI5: ("grant", "revoke"),
    PI6: ("own", "borrow"),
}

KIND_TO_PROJECTION = {kind: pi for pi, kinds in EVENT_CLASSES.items() for kind in kinds}

# Components whose presence/absence decides whether a projection runs on the
# engine or on its baseline adapter.
OWNERSHIP = "ownership"
CAPABILITY = "capability"
CAS = "cas"
GRAPH_SPLIT = "graph-split"
COMPONENTS = (OWNERSHIP, CAPABILITY, CAS, GRAPH_SPLIT)
FULL_CONFIG = frozenset(COMPONENTS)
BASELINE_CONFIG: frozenset[str] = frozenset()

PROJECTION_COMPONENT = {
    PI1: OWNERSHIP,
    PI2: CAS,
    PI3: GRAPH_SPLIT,
    PI4: CAS,
    PI5: CAPABILITY,
    PI6: OWNERSHIP,
}


class InvalidConfig(Exception):
    pass


class IllegalFromState(Exception):
    """Neither ordering of the pair is applicable from the given state."""


@dataclass(frozen=True)
class Event:
    projection: str
    kind: str
    params: tuple[tuple[str, object], ...]

    def __post_init__(self):
        if KIND_TO_PROJECTION.get(self.kind) != self.projection:
            raise ValueError(f"kind {self.kind!r} is not a {self.projection} event")

    @classmethod
    def make(cls, projection: str, kind: str, **params) -> "Event":
        return cls(projection, kind, tuple(sorted(params.items())))

    def get(self, key: str, default=None):
        for name, value in self.params:
            if name == key:
                return value
        return default

    def as_dict(self) -> dict:
        return dict(self.params)


OK = "ok"


@dataclass(frozen=True)
class Outcome:
    """What one event application produced: status plus an observable value
    (read results, minted/revoked ids); errors are observationally distinct."""

    status: str
    value: object = None

    @property
    def ok(self) -> bool:
        return self.status == OK


def ok(value: object = None) -> Outcome:
    return Outcome(OK, value)


def err(name: str) -> Outcome:
    return Outcome(name)
