"""Anti-commutativity measurement harness.

For each projection (insert/delete, merge/compact, traverse/update, put/get,
grant/revoke, own/borrow) the harness generates fully parameterized event
pairs from evolving random states, applies both orderings on independent
clones, and compares the results modulo snapshot observational equivalence
plus per-event outcomes.  A pair where exactly one ordering is applicable
counts as divergent (order-dependent legality); a pair where neither
ordering is applicable is excluded and regenerated.

Events are generated against a lattice-legal shadow model, so the same pair
stream drives both the full engine and the simplified baseline backends,
which is what makes the reduction measurement apples-to-apples.
"""
from __future__ import annotations

import hashlib
import math
import random
import time
from dataclasses import dataclass, field

from . import baselines
from .capability import CapabilityError, Region, Rights
from .cas import ContentHash, CorruptEntry, NotFound, ObjectTooLarge, StoreClosed
from .engine import Engine, EngineConfig
from .events import (
    BASELINE_CONFIG,
    CAPABILITY,
    CAS,
    COMPONENTS,
    EVENT_CLASSES,
    FULL_CONFIG,
    GRAPH_SPLIT,
    KIND_TO_PROJECTION,
    OWNERSHIP,
    PI1,
    PI2,
    PI3,
    PI4,
    PI5,
    PI6,
    PROJECTION_COMPONENT,
    PROJECTIONS,
    Event,
    IllegalFromState,
    InvalidConfig,
    Outcome,
    err,
    ok,
)
from .graph import (
    DuplicateNode,
    GraphState,
    LabelSchema,
    SchemaViolation,
    TypeMismatch,
    UnknownNode,
)
from .ownership import LeaseError
from .snapshots import InvariantVector, MissingContent, NonMonotoneTick
from .util import derive_seed

LABELS = ("a", "b", "c", "d")
ETYPES = ("t0", "t1")
SUBJECTS = ("alice", "bob", "carol")

ENGINE_ERRORS = (
    CapabilityError,
    LeaseError,
    UnknownNode,
    DuplicateNode,
    SchemaViolation,
    TypeMismatch,
    NotFound,
    CorruptEntry,
    StoreClosed,
    ObjectTooLarge,
    NonMonotoneTick,
    MissingContent,
)


class EngineAdapter:
    """Applies harness events to a real engine; observation is the head
    snapshot's invariant vector (the ~ relation)."""

    def __init__(self, engine: Engine):
        self.engine = engine

    def clone(self) -> "EngineAdapter":
        return EngineAdapter(self.engine.clone())

    def head_hash(self) -> bytes | None:
        head = self.engine.head
        return head.snapshot_hash if head is not None else None

    def observe(self) -> InvariantVector:
        return InvariantVector.from_snapshot(self.engine.head)

    def apply(self, event: Event) -> Outcome:
        try:
            return self._dispatch(event)
        except ENGINE_ERRORS as exc:
            return err(type(exc).__name__)

    def _dispatch(self, event: Event) -> Outcome:
        engine = self.engine
        p = event.as_dict()
        kind = event.kind
        if kind == "insert-node":
            staging = engine.begin()
            staging.add_node(p["label"], p["payload"], node_id=p["nid"])
            engine.commit(staging)
            return ok()
        if kind == "delete-node":
            staging = engine.begin()
            staging.remove_node(p["nid"])
            engine.commit(staging)
            return ok()
        if kind == "insert-edge":
            staging = engine.begin()
            staging.add_edge(p["src"], p["dst"], p["etype"])
            engine.commit(staging)
            return ok()
        if kind == "delete-edge":
            staging = engine.begin()
            staging.remove_edge(p["src"], p["dst"], p["etype"])
            engine.commit(staging)
            return ok()
        if kind == "merge":
            engine.merge_segments()
            return ok()
        if kind == "compact":
            engine.compact(p["k"])
            return ok()
        if kind == "traverse":
            pin = p.get("pin")
            snapshot = engine.lineage.by_hash.get(pin) if pin else None
            nodes = engine.traverse(p["start"], p["k"], snapshot=snapshot)
            root = (snapshot or engine.head).root
            sig = hashlib.sha256()
            for nid in sorted(nodes):
                sig.update(nid.to_bytes(8, "little"))
                sig.update(root[nid].content.digest)
            return ok((tuple(sorted(nodes)), sig.hexdigest()))
        if kind == "update":
            engine.update_node(p["nid"], payload=p["payload"])
            return ok()
        if kind == "put":
            return ok(engine.store.put(p["payload"]).hex)
        if kind == "get":
            payload = engine.store.get(ContentHash(p["digest"]))
            return ok(hashlib.sha256(payload).hexdigest())
        if kind == "grant":
            child = engine.grant(
                p["parent"],
                Region.span(p["lo"], p["hi"]),
                Rights(p["rights"]),
                p["ttl"],
                subject=p["subject"],
                cap_id=p["cap_id"],
            )
            return ok(child.cap_id)
        if kind == "revoke":
            revoked = engine.revoke(p["target"], subject=p["subject"])
            return ok(tuple(sorted(revoked)))
        if kind == "own":
            engine.update_node(p["nid"], payload=p["payload"])
            return ok()
        if kind == "borrow":
            data = engine.borrow_node(p["nid"])
            return ok(hashlib.sha256(data).hexdigest())
        raise ValueError(f"unknown event kind {kind}")


# ---------------------------------------------------------------------------
# Scenario: adapter + generation-side shadow model
# ---------------------------------------------------------------------------


@dataclass
class Scenario:
    adapter: object
    nodes: set[int]
    edges: set[tuple[int, int, str]]
    contents: list[bytes]
    cap_info: dict[int, tuple[int, int, int]]  # cap id -> (lo, hi, rights)
    cap_children: dict[int, list[int]]
    cap_live: set[int]
    root_cap: int
    tags: list[str]
    next_node: int
    next_cap: int
    pin: bytes | None

    def cap_subtree(self, cap_id: int) -> set[int]:
        out = {cap_id}
        stack = [cap_id]
        while stack:
            for child in self.cap_children.get(stack.pop(), ()):
                if child not in out:
                    out.add(child)
                    stack.append(child)
        return out

    def evolve(self, *events: Event) -> None:
        """Advance the base state by applying events (errors leave no trace)."""
        for event in events:
            outcome = self.adapter.apply(event)
            if not outcome.ok:
                continue
            p = event.as_dict()
            kind = event.kind
            if kind == "insert-node":
                self.nodes.add(p["nid"])
            elif kind == "delete-node":
                self.nodes.discard(p["nid"])
                self.edges = {e for e in self.edges if p["nid"] not in (e[0], e[1])}
            elif kind == "insert-edge":
                self.edges.add((p["src"], p["dst"], p["etype"]))
            elif kind == "delete-edge":
                self.edges.discard((p["src"], p["dst"], p["etype"]))
            elif kind == "put":
                self.contents.append(p["payload"])
            elif kind == "grant":
                cap_id = p["cap_id"]
                self.cap_info[cap_id] = (p["lo"], p["hi"], p["rights"])
                self.cap_children.setdefault(p["parent"], []).append(cap_id)
                self.cap_children[cap_id] = []
                self.cap_live.add(cap_id)
            elif kind == "revoke":
                self.cap_live -= self.cap_subtree(p["target"])
            elif kind == "merge" and p.get("tag") in self.tags:
                self.tags.remove(p["tag"])
        if isinstance(self.adapter, EngineAdapter):
            self.pin = self.adapter.head_hash()


def build_scenario(projection: str, config: frozenset, rng: random.Random, flavor: str = "conventional") -> Scenario:
    """Fresh random state for one measurement chunk.

    The engine adapter is used when the projection's governing component is
    enabled; otherwise the projection's baseline backend is seeded from the
    same initial graph, contents, and capability/subject universe.
    """
    n = 12
    g = GraphState()
    for i in range(n):
        g.add_node(rng.choice(LABELS), rng.randbytes(8), node_id=i)
    for _ in range(16):
        src, dst = rng.sample(range(n), 2)
        g.add_edge(src, dst, rng.choice(ETYPES))
    contents = [rng.randbytes(rng.randint(4, 24)) for _ in range(6)]

    enabled = PROJECTION_COMPONENT[projection] in config
    scenario = Scenario(
        adapter=None,
        nodes=set(g.nodes),
        edges=set(g.edges()),
        contents=list(contents),
        cap_info={},
        cap_children={},
        cap_live=set(),
        root_cap=1,
        tags=[f"r{i}" for i in range(10)],
        next_node=n,
        next_cap=100,
        pin=None,
    )

    if enabled:
        engine = Engine(EngineConfig())
        adapter = EngineAdapter(engine)
        engine.commit_graph(g)
        scenario.root_cap = engine.caps.root.cap_id
        _seed_cap_tree(scenario, rng, engine=engine)
        # a little history plus segment structure for merge/compact events
        for _ in range(2):
            engine.roll_segment()
            nid = rng.choice(sorted(scenario.nodes))
            engine.update_node(nid, payload=rng.randbytes(8))
        for payload in contents:
            engine.store.put(payload)
        scenario.adapter = adapter
        scenario.pin = adapter.head_hash()
        return scenario

    scenario.root_cap = 1
    _seed_cap_tree(scenario, rng, engine=None)
    if projection == PI1:
        backend = baselines.PageStoreBaseline()
        backend.seed_graph(g)
    elif projection == PI2:
        backend = baselines.MergeLogBaseline()
        backend.seed_runs({tag: (tag, i) for i, tag in enumerate(scenario.tags)})
    elif projection in (PI3, PI6):
        backend = baselines.UnguardedGraphBaseline()
        backend.seed_graph(g)
    elif projection == PI4:
        if flavor == "ablated":
            backend = baselines.AppendStoreBaseline()
        else:
            backend = baselines.DictStoreBaseline()
        backend.seed_contents(contents)
    elif projection == PI5:
        backend = baselines.AclBaseline()
        backend.seed_subjects({s: int(Rights.READ) for s in SUBJECTS})
    else:
        raise InvalidConfig(f"unknown projection {projection}")
    scenario.adapter = backend
    return scenario


def _seed_cap_tree(scenario: Scenario, rng: random.Random, engine: Engine | None) -> None:
    root = scenario.root_cap
    scenario.cap_info[root] = (0, 2**62, int(Rights.ADMIN))
    scenario.cap_children[root] = []
    scenario.cap_live.add(root)
    for _ in range(6):
        parent = rng.choice(sorted(scenario.cap_live))
        lo, hi, rights = scenario.cap_info[parent]
        nlo = rng.randint(lo, hi)
        nhi = rng.randint(nlo, hi)
        nrights = rng.randint(0, rights)
        cap_id = scenario.next_cap
        scenario.next_cap += 1
        if engine is not None:
            engine.grant(
                parent,
                Region.span(nlo, nhi),
                Rights(nrights),
                ttl=10_000,
                subject=rng.choice(SUBJECTS),
                cap_id=cap_id,
            )
        scenario.cap_info[cap_id] = (nlo, nhi, nrights)
        scenario.cap_children.setdefault(parent, []).append(cap_id)
        scenario.cap_children[cap_id] = []
        scenario.cap_live.add(cap_id)


# ---------------------------------------------------------------------------
# Pair generation
# ---------------------------------------------------------------------------


def gen_pair(projection: str, scenario: Scenario, rng: random.Random) -> tuple[Event, Event]:
    """Two individually legal events of the projection's classes.

    Events never target the same object (independent updates per the
    canonical-order lemma); structural dependencies that the lattice itself
    creates — a revoke hitting a grant's ancestor — are deliberately kept.
    """
    if projection == PI1:
        return _gen_pi1(scenario, rng)
    if projection == PI2:
        return _gen_pi2(scenario, rng)
    if projection == PI3:
        return _gen_pi3(scenario, rng)
    if projection == PI4:
        return _gen_pi4(scenario, rng)
    if projection == PI5:
        return _gen_pi5(scenario, rng)
    if projection == PI6:
        return _gen_pi6(scenario, rng)
    raise InvalidConfig(f"unknown projection {projection}")


def _gen_pi1(scenario, rng):
    events = []
    used_nodes: set[int] = set()
    used_edges: set[tuple] = set()
    for _ in range(2):
        choices = ["insert-node", "insert-edge"]
        deletable = [n for n in scenario.nodes if n not in used_nodes]
        erasable = [
            e
            for e in scenario.edges
            if e not in used_edges and e[0] not in used_nodes and e[1] not in used_nodes
        ]
        if len(deletable) > 4:
            choices.append("delete-node")
        if erasable:
            choices.append("delete-edge")
        kind = rng.choice(choices)
        if kind == "insert-node":
            nid = scenario.next_node
            scenario.next_node += 1
            events.append(
                Event.make(PI1, kind, nid=nid, label=rng.choice(LABELS), payload=rng.randbytes(6))
            )
            used_nodes.add(nid)
        elif kind == "delete-node":
            nid = rng.choice(sorted(deletable))
            events.append(Event.make(PI1, kind, nid=nid))
            used_nodes.add(nid)
            used_edges |= {e for e in scenario.edges if nid in (e[0], e[1])}
        elif kind == "insert-edge":
            pool = [n for n in scenario.nodes if n not in used_nodes]
            if len(pool) < 2:
                pool = sorted(scenario.nodes)
            src, dst = rng.sample(sorted(pool), 2)
            etype = rng.choice(ETYPES)
            if (src, dst, etype) in scenario.edges or (src, dst, etype) in used_edges:
                etype = ETYPES[1 - ETYPES.index(etype)]
            events.append(Event.make(PI1, kind, src=src, dst=dst, etype=etype))
            used_edges.add((src, dst, etype))
            used_nodes |= {src, dst}
        else:
            src, dst, etype = rng.choice(sorted(erasable))
            events.append(Event.make(PI1, kind, src=src, dst=dst, etype=etype))
            used_edges.add((src, dst, etype))
            used_nodes |= {src, dst}
    return events[0], events[1]


def _gen_pi2(scenario, rng):
    events = []
    used_tags: set[str] = set()
    for _ in range(2):
        tags = [t for t in scenario.tags if t not in used_tags]
        if tags and rng.random() < 0.5:
            tag = rng.choice(tags)
            used_tags.add(tag)
            events.append(Event.make(PI2, "merge", tag=tag))
        else:
            events.append(Event.make(PI2, "compact", k=rng.choice((1, 2, 4))))
    return events[0], events[1]


def _gen_pi3(scenario, rng):
    events = []
    used: set[int] = set()
    for _ in range(2):
        nodes = sorted(scenario.nodes)
        if rng.random() < 0.5:
            events.append(
                Event.make(
                    PI3,
                    "traverse",
                    start=rng.choice(nodes),
                    k=rng.randint(1, 3),
                    pin=scenario.pin,
                )
            )
        else:
            candidates = [n for n in nodes if n not in used]
            nid = rng.choice(candidates or nodes)
            used.add(nid)
            events.append(Event.make(PI3, "update", nid=nid, payload=rng.randbytes(6)))
    return events[0], events[1]


def _gen_pi4(scenario, rng):
    events = []
    for _ in range(2):
        if rng.random() < 0.5:
            if scenario.contents and rng.random() < 0.4:
                payload = rng.choice(scenario.contents)  # duplicate put
            else:
                payload = rng.randbytes(rng.randint(4, 24))
            events.append(Event.make(PI4, "put", payload=payload))
        else:
            payload = rng.choice(scenario.contents)
            events.append(
                Event.make(PI4, "get", digest=hashlib.sha256(payload).digest())
            )
    return events[0], events[1]


def _gen_pi5(scenario, rng):
    events = []
    for _ in range(2):
        live = sorted(scenario.cap_live)
        if rng.random() < 0.5 or len(live) <= 1:
            parent = rng.choice(live)
            lo, hi, rights = scenario.cap_info[parent]
            nlo = rng.randint(lo, hi)
            nhi = rng.randint(nlo, hi)
            cap_id = scenario.next_cap
            scenario.next_cap += 1
            events.append(
                Event.make(
                    PI5,
                    "grant",
                    parent=parent,
                    cap_id=cap_id,
                    lo=nlo,
                    hi=nhi,
                    rights=rng.randint(0, rights),
                    ttl=10_000,
                    subject=rng.choice(SUBJECTS),
                )
            )
        else:
            targets = [c for c in live if c != scenario.root_cap]
            target = rng.choice(targets)
            events.append(Event.make(PI5, "revoke", target=target, subject=rng.choice(SUBJECTS)))
    return events[0], events[1]


def _gen_pi6(scenario, rng):
    events = []
    used: set[int] = set()
    for _ in range(2):
        nodes = sorted(n for n in scenario.nodes if n not in used)
        nid = rng.choice(nodes or sorted(scenario.nodes))
        used.add(nid)
        if rng.random() < 0.5:
            events.append(Event.make(PI6, "own", nid=nid, payload=rng.randbytes(6)))
        else:
            events.append(Event.make(PI6, "borrow", nid=nid))
    return events[0], events[1]


# ---------------------------------------------------------------------------
# Pair checking
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PairResult:
    commute: bool
    reason: str  # equal | legality | outcome | state


def check_pair(adapter, e1: Event, e2: Event) -> PairResult:
    """Apply both orderings on independent clones of the state and compare.

    Commutes iff both orderings are applicable, every event's outcome is
    identical in both orders, and the two final observations are equal
    (for the engine: snapshot observational equivalence)."""
    a = adapter.clone()
    b = adapter.clone()
    a1 = a.apply(e1)
    a2 = a.apply(e2)
    b2 = b.apply(e2)
    b1 = b.apply(e1)
    legal_a = a1.ok and a2.ok
    legal_b = b1.ok and b2.ok
    if not legal_a and not legal_b:
        raise IllegalFromState(f"neither ordering of ({e1.kind}, {e2.kind}) is applicable")
    if legal_a != legal_b:
        return PairResult(False, "legality")
    if a1 != b1 or a2 != b2:
        return PairResult(False, "outcome")
    if a.observe() != b.observe():
        return PairResult(False, "state")
    return PairResult(True, "equal")


# ---------------------------------------------------------------------------
# Measurement
# ---------------------------------------------------------------------------


def wilson_interval(k: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """95% Wilson score interval; well-behaved at observed rate 0."""
    if n <= 0:
        raise InvalidConfig("interval needs at least one trial")
    p = k / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


def config_label(config: frozenset) -> str:
    return "+".join(sorted(config)) if config else "none"


@dataclass(frozen=True)
class MeasureRow:
    projection: str
    trials: int
    nc_count: int
    rate: float
    ci_lo: float
    ci_hi: float
    config: str

    def excludes_zero(self) -> bool:
        return self.ci_lo > 0.0


def measure(
    projection: str,
    horizon: int = 1000,
    reps: int = 30,
    seed: int = 0,
    config: frozenset = FULL_CONFIG,
    flavor: str = "conventional",
    chunk: int = 20,
) -> MeasureRow:
    """Rate of non-commuting pairs with a pooled 95% Wilson interval.

    Each rep draws ``horizon`` legal pairs from evolving random states
    (states are refreshed every ``chunk`` pairs to bound their growth)."""
    if projection not in PROJECTIONS:
        raise InvalidConfig(f"unknown projection {projection}")
    if horizon < 1:
        raise InvalidConfig("horizon must be positive")
    if reps < 30:
        raise InvalidConfig("at least 30 reps are required for the interval")
    unknown = set(config) - set(COMPONENTS)
    if unknown:
        raise InvalidConfig(f"unknown components {sorted(unknown)}")
    trials = 0
    nc = 0
    for rep in range(reps):
        rng = random.Random(
            derive_seed(seed, "commute", projection, rep, flavor, tuple(sorted(config)))
        )
        done = 0
        while done < horizon:
            scenario = build_scenario(projection, config, rng, flavor)
            goal = min(chunk, horizon - done)
            produced = 0
            attempts = 0
            while produced < goal and attempts < goal * 50:
                attempts += 1
                e1, e2 = gen_pair(projection, scenario, rng)
                try:
                    result = check_pair(scenario.adapter, e1, e2)
                except IllegalFromState:
                    continue
                trials += 1
                produced += 1
                done += 1
                if not result.commute:
                    nc += 1
                scenario.evolve(e1, e2)
            if produced < goal:
                raise InvalidConfig(
                    f"could not generate legal {projection} pairs (state exhausted)"
                )
    lo, hi = wilson_interval(nc, trials)
    return MeasureRow(projection, trials, nc, nc / trials, lo, hi, config_label(config))


# ---------------------------------------------------------------------------
# Theorem-level suite and ablation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Theorem1Report:
    baseline_rows: tuple[MeasureRow, ...]
    composed_rows: tuple[MeasureRow, ...]
    baseline_noncommuting: tuple[str, ...]
    composed_noncommuting: tuple[str, ...]
    reduced: tuple[str, ...]
    residual_is_pi5_only: bool
    headline: str

    def all_rows(self) -> list[MeasureRow]:
        return list(self.baseline_rows) + list(self.composed_rows)


def theorem1_suite(seed: int = 0, horizon: int = 1000, reps: int = 30) -> Theorem1Report:
    """Measure every projection under baseline adapters and under the full
    composition, and summarize the reduction.

    The raw per-projection map and the headline reduction count are both
    reported: the baselines typically show five order-sensitive projections
    (put/get is order-free even for a plain content-keyed store), of which
    four become commutative under the composed engine, leaving the single
    grant/revoke residual."""
    baseline_rows = tuple(
        measure(pi, horizon, reps, seed, BASELINE_CONFIG) for pi in PROJECTIONS
    )
    composed_rows = tuple(measure(pi, horizon, reps, seed, FULL_CONFIG) for pi in PROJECTIONS)
    baseline_nc = tuple(r.projection for r in baseline_rows if r.excludes_zero())
    composed_nc = tuple(r.projection for r in composed_rows if r.excludes_zero())
    reduced = tuple(p for p in baseline_nc if p not in composed_nc)
    headline = (
        f"reduction {len(reduced)}/6 -> {len(composed_nc)}/6"
        f" (residual: {','.join(composed_nc) or 'none'};"
        f" raw baseline map has {len(baseline_nc)}/6 order-sensitive)"
    )
    return Theorem1Report(
        baseline_rows,
        composed_rows,
        baseline_nc,
        composed_nc,
        reduced,
        composed_nc == (PI5,),
        headline,
    )


def preservation_suite(config: frozenset = FULL_CONFIG) -> dict[str, bool]:
    """One preserved-invariant check per projection against the active
    backend: replay stability, lineage check, schema conformance,
    duplicate-put zero writes, failed illegal grant, aliasing forbidden."""
    results: dict[str, bool] = {}

    # pi1: insert order insensitivity (stable sequences / replay diff 0)
    if OWNERSHIP in config:
        engine = _tiny_engine()
        adapter = EngineAdapter(engine)
        e1 = Event.make(PI1, "insert-node", nid=100, label="a", payload=b"x")
        e2 = Event.make(PI1, "insert-node", nid=101, label="b", payload=b"y")
        results[PI1] = check_pair(adapter, e1, e2).commute
    else:
        backend = baselines.PageStoreBaseline()
        e1 = Event.make(PI1, "insert-node", nid=100, label="a", payload=b"x")
        e2 = Event.make(PI1, "insert-node", nid=101, label="b", payload=b"y")
        results[PI1] = check_pair(backend, e1, e2).commute

    # pi2: lineage/merge order insensitivity
    if CAS in config:
        engine = _tiny_engine(history=4, rolls=2)
        ok_chain = engine.lineage.lineage_check().ok
        adapter = EngineAdapter(engine)
        pair = check_pair(
            adapter,
            Event.make(PI2, "merge", tag="r0"),
            Event.make(PI2, "compact", k=2),
        )
        results[PI2] = ok_chain and pair.commute
    else:
        backend = baselines.MergeLogBaseline()
        backend.seed_runs({"r0": (0,), "r1": (1,)})
        pair = check_pair(
            backend,
            Event.make(PI2, "merge", tag="r0"),
            Event.make(PI2, "merge", tag="r1"),
        )
        results[PI2] = pair.commute

    # pi3: schema conformance on mutation
    if GRAPH_SPLIT in config:
        schema = LabelSchema.of(("a", "t0", "b"))
        engine = Engine(EngineConfig(schema=schema))
        g = GraphState()
        g.add_node("a", node_id=0)
        g.add_node("c", node_id=1)
        engine.commit_graph(g)
        staging = engine.begin()
        try:
            staging.add_edge(0, 1, "t0")
            results[PI3] = False
        except SchemaViolation:
            results[PI3] = True
    else:
        # the unguarded graph has no schema hook: any edge lands
        backend = baselines.UnguardedGraphBaseline()
        g = GraphState()
        g.add_node("a", node_id=0)
        g.add_node("c", node_id=1)
        backend.seed_graph(g)
        backend.out[0].add((1, "t0"))
        results[PI3] = (0, 1, "t0") not in {
            (s, d, t) for s, targets in backend.out.items() for d, t in targets
        }

    # pi4: duplicate-put zero writes
    if CAS in config:
        engine = _tiny_engine()
        engine.store.put(b"dup-check")
        before = engine.store.stats.physical_bytes
        engine.store.put(b"dup-check")
        results[PI4] = engine.store.stats.physical_bytes == before
    else:
        backend = baselines.AppendStoreBaseline()
        backend.apply(Event.make(PI4, "put", payload=b"dup-check"))
        before = backend.stats.physical_bytes
        backend.apply(Event.make(PI4, "put", payload=b"dup-check"))
        results[PI4] = backend.stats.physical_bytes == before

    # pi5: illegal grant fails
    if CAPABILITY in config:
        engine = _tiny_engine()
        child = engine.grant(engine.caps.root, Region.span(0, 10), Rights.READ, 100)
        try:
            engine.grant(child, Region.span(0, 10), Rights.WRITE, 100)
            results[PI5] = False
        except CapabilityError:
            results[PI5] = True
    else:
        backend = baselines.AclBaseline()
        backend.seed_subjects({"alice": int(Rights.READ)})
        backend.apply(
            Event.make(PI5, "grant", parent=1, cap_id=2, lo=0, hi=10,
                       rights=int(Rights.WRITE), ttl=100, subject="alice")
        )
        results[PI5] = backend.acl["alice"] != int(Rights.WRITE)

    # pi6: aliasing forbidden (write excludes readers)
    if OWNERSHIP in config:
        engine = _tiny_engine()
        lease = engine.leases.acquire_read(0)
        try:
            engine.leases.acquire_write(0)
            results[PI6] = False
        except LeaseError:
            results[PI6] = True
        finally:
            engine.leases.release(lease)
    else:
        # no lease discipline: a write proceeds while a borrow is observing
        backend = baselines.UnguardedGraphBaseline()
        g = GraphState()
        g.add_node("a", b"v", node_id=0)
        backend.seed_graph(g)
        before = backend.apply(Event.make(PI6, "borrow", nid=0))
        backend.apply(Event.make(PI6, "own", nid=0, payload=b"w"))
        after = backend.apply(Event.make(PI6, "borrow", nid=0))
        results[PI6] = before.value == after.value
    return results


def _tiny_engine(history: int = 0, rolls: int = 0) -> Engine:
    engine = Engine(EngineConfig())
    g = GraphState()
    for i in range(4):
        g.add_node("a", b"seed", node_id=i)
    g.add_edge(0, 1, "t0")
    engine.commit_graph(g)
    for i in range(history):
        if rolls and i % max(1, history // rolls) == 0:
            engine.roll_segment()
        engine.update_node(i % 4, payload=b"h%d" % i)
    return engine


@dataclass(frozen=True)
class AblationReport:
    component: str
    rows: tuple[MeasureRow, ...]
    preservation: dict[str, bool]
    preservation_rate: float
    wa: float
    p995_ms: float
    wa_delta: float
    p995_delta_ms: float


def ablate(
    component: str | None,
    seed: int = 0,
    horizon: int = 100,
    reps: int = 30,
    bench_ops: int = 2000,
) -> AblationReport:
    """Replace one component with its baseline adapter and re-run the
    measurement and a small workload; reports preservation rate, write
    amplification, and p99.5 tail latency against the full engine."""
    if component in (None, "none", "nothing"):
        config = FULL_CONFIG
        name = "none"
    elif component in COMPONENTS:
        config = frozenset(FULL_CONFIG - {component})
        name = component
    else:
        raise InvalidConfig(f"unknown component {component!r}")
    rows = tuple(
        measure(pi, horizon, reps, seed, config, flavor="ablated") for pi in PROJECTIONS
    )
    preservation = preservation_suite(config)
    rate = sum(preservation.values()) / len(preservation)
    wa, p995 = _ablation_bench(config, seed, bench_ops)
    full_wa, full_p995 = _ablation_bench(FULL_CONFIG, seed, bench_ops)
    return AblationReport(
        name, rows, preservation, rate, wa, p995, wa - full_wa, p995 - full_p995
    )


def _ablation_bench(config: frozenset, seed: int, ops: int) -> tuple[float, float]:
    """Tiny event-driven workload over the active pi3/pi4 backends."""
    rng = random.Random(derive_seed(seed, "ablation-bench", tuple(sorted(config))))
    store_scn = build_scenario(PI4, config, rng, flavor="ablated")
    graph_scn = build_scenario(PI3, config, rng, flavor="ablated")
    latencies: list[float] = []
    contents = list(store_scn.contents)
    for i in range(ops):
        if i % 2 == 0:
            if contents and rng.random() < 0.5:
                payload = rng.choice(contents)
            else:
                payload = rng.randbytes(64)
                contents.append(payload)
            event = Event.make(PI4, "put", payload=payload)
            target = store_scn.adapter
        else:
            event = Event.make(
                PI3,
                "traverse",
                start=rng.choice(sorted(graph_scn.nodes)),
                k=2,
                pin=graph_scn.pin,
            )
            target = graph_scn.adapter
        t0 = time.perf_counter_ns()
        target.apply(event)
        latencies.append((time.perf_counter_ns() - t0) / 1e6)
    if isinstance(store_scn.adapter, EngineAdapter):
        stats = store_scn.adapter.engine.store.stats
    else:
        stats = store_scn.adapter.stats
    wa = stats.physical_bytes / stats.logical_bytes if stats.logical_bytes else 0.0
    latencies.sort()
    p995 = latencies[min(len(latencies) - 1, int(math.ceil(0.995 * len(latencies))) - 1)]
    return wa, p995


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------


def rows_csv(rows) -> str:
    lines = ["projection,trials,nc_count,rate,ci_lo,ci_hi,config"]
    for r in rows:
        lines.append(
            f"{r.projection},{r.trials},{r.nc_count},{r.rate:.6f},{r.ci_lo:.6f},{r.ci_hi:.6f},{r.config}"
        )
    return "\n".join(lines) + "\n"


def heatmap_csv(rows) -> str:
    lines = ["projection,config,rate"]
    for r in rows:
        lines.append(f"{r.projection},{r.config},{r.rate:.6f}")
    return "\n".join(lines) + "\n"
