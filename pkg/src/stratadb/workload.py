"""Workload generation and run configuration.

Synthetic graphs come from preferential attachment (power-law degree);
access ranks come from a Zipf sampler over a configurable hot set.  All
randomness derives from one root seed through named sub-streams, and the
effective configuration is echoed into every output directory as
``manifest.txt``.
"""
from __future__ import annotations

import math
import platform
import random
import string
import sys
from dataclasses import dataclass, fields

import numpy as np

from .graph import GraphState


class ConfigError(Exception):
    pass


class ParseError(ConfigError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class UnknownKey(ConfigError):
    def __init__(self, name: str):
        super().__init__(f"unknown config key {name!r}")
        self.name = name


class InvalidParams(ConfigError):
    pass


@dataclass
class WorkloadConfig:
    node_count: int = 10_000
    ba_m: int = 3
    alpha: float = 0.9
    hot_set_fraction: float = 1.0
    read_fraction: float = 0.9
    label_bytes: int = 8
    value_bytes_min: int = 128
    value_bytes_max: int = 384
    duplicate_put_ratio: float = 0.3
    seed: int = 42
    warmup_ops: int = 500
    window_ops: int = 3000
    trials: int = 30

    def validate(self) -> None:
        if self.node_count <= self.ba_m or self.ba_m < 1:
            raise InvalidParams("need node_count > ba_m >= 1")
        if self.alpha < 0:
            raise InvalidParams("alpha must be >= 0")
        for name in ("hot_set_fraction", "read_fraction", "duplicate_put_ratio"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise InvalidParams(f"{name} must be in [0, 1]")
        if self.hot_set_fraction == 0.0:
            raise InvalidParams("hot_set_fraction must be > 0")
        for name in ("label_bytes", "value_bytes_min", "value_bytes_max",
                     "warmup_ops", "window_ops", "trials"):
            if getattr(self, name) <= 0:
                raise InvalidParams(f"{name} must be positive")
        if self.value_bytes_min > self.value_bytes_max:
            raise InvalidParams("value_bytes_min must be <= value_bytes_max")


@dataclass
class RunConfig:
    """Workload plus engine knobs; the flat key=value config file covers both."""

    workload: WorkloadConfig
    cache_entries: int = 8000
    segment_bytes: int = 32 * 1024 * 1024
    fragment_bound: int = 2
    verify_on_read: bool = True

    def validate(self) -> None:
        self.workload.validate()
        if self.cache_entries < 0:
            raise InvalidParams("cache_entries must be >= 0")
        if self.segment_bytes <= 0:
            raise InvalidParams("segment_bytes must be positive")
        if self.fragment_bound < 1:
            raise InvalidParams("fragment_bound must be >= 1")


def default_config() -> RunConfig:
    """Mixed read/write workload at desk scale (the KPI configuration)."""
    return RunConfig(WorkloadConfig())


def hot_config() -> RunConfig:
    """Hot-set-dominant variant: all accesses inside a small hot set, cache
    sized to hold its working set."""
    return RunConfig(
        WorkloadConfig(hot_set_fraction=0.05, alpha=1.1, window_ops=2000),
        cache_entries=8000,
    )


def epsilon_config() -> RunConfig:
    """Cache sized to leave a small miss stream (hit rate near 0.98) with the
    fragment bound at 2, the setting the read-bound slack model targets."""
    return RunConfig(WorkloadConfig(), cache_entries=2600, fragment_bound=2)


_WORKLOAD_FIELDS = {f.name: f.type for f in fields(WorkloadConfig)}
_ENGINE_FIELDS = {
    "cache_entries": int,
    "segment_bytes": int,
    "fragment_bound": int,
    "verify_on_read": bool,
}


def _coerce(key: str, raw: str, line_no: int):
    target = _WORKLOAD_FIELDS.get(key) or _ENGINE_FIELDS.get(key)
    is_bool = target is bool or target == "bool"
    is_float = target is float or target == "float"
    try:
        if is_bool:
            if raw.lower() in ("1", "true", "yes"):
                return True
            if raw.lower() in ("0", "false", "no"):
                return False
            raise ValueError(raw)
        if is_float:
            return float(raw)
        return int(raw)
    except ValueError:
        raise ParseError(line_no, f"bad value {raw!r} for {key}") from None


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    """Flat ``key=value`` lines; ``#`` comments; unknown keys are rejected.

    Every omitted field keeps its default, and validation runs on the final
    result so out-of-range values are rejected with a parse-class error.
    """
    config = base or default_config()
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(line_no, f"expected key=value, got {raw_line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key in _WORKLOAD_FIELDS:
            setattr(config.workload, key, _coerce(key, raw, line_no))
        elif key in _ENGINE_FIELDS:
            setattr(config, key, _coerce(key, raw, line_no))
        else:
            raise UnknownKey(key)
    config.validate()
    return config


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), base)


def manifest_text(config: RunConfig, extra: dict | None = None) -> str:
    """Effective configuration (defaults included) plus environment facts."""
    items: dict[str, object] = {}
    for f in fields(WorkloadConfig):
        items[f.name] = getattr(config.workload, f.name)
    for name in _ENGINE_FIELDS:
        items[name] = getattr(config, name)
    if extra:
        items.update(extra)
    items["python"] = sys.version.split()[0]
    items["platform"] = platform.platform()
    return "".join(f"{k}={items[k]}\n" for k in sorted(items))


# ---------------------------------------------------------------------------
# Graph generation
# ---------------------------------------------------------------------------

EDGE_TYPE = "link"


def gen_graph(n: int, m: int, seed: int) -> GraphState:
    """Preferential-attachment graph, deterministic per seed.

    Starts from a fully connected clique on m+1 nodes; each new node
    attaches to m distinct existing nodes with probability proportional to
    degree.  Edges are recorded in both directions so traversal reach
    matches the undirected attachment structure.
    """
    if not (n > m >= 1):
        raise InvalidParams("need n > m >= 1")
    rng = random.Random(seed)
    g = GraphState()
    for i in range(n):
        g.add_node(f"L{i % 4}", node_id=i)
    repeated: list[int] = []
    for i in range(m + 1):
        for j in range(i + 1, m + 1):
            g.add_edge(i, j, EDGE_TYPE)
            g.add_edge(j, i, EDGE_TYPE)
            repeated.extend((i, j))
    for v in range(m + 1, n):
        targets: set[int] = set()
        while len(targets) < m:
            targets.add(rng.choice(repeated))
        for t in sorted(targets):
            g.add_edge(v, t, EDGE_TYPE)
            g.add_edge(t, v, EDGE_TYPE)
            repeated.extend((v, t))
    return g


def undirected_edges(g: GraphState) -> frozenset[tuple[int, int]]:
    return frozenset((min(s, d), max(s, d)) for s, d, _ in g.edges())


def assign_payloads(g: GraphState, config: WorkloadConfig, seed: int) -> None:
    """Give every node a label and payload drawn from the size distributions."""
    rng = random.Random(seed)
    alphabet = string.ascii_lowercase
    for nid in g.nodes:
        label = "".join(rng.choices(alphabet, k=config.label_bytes))
        size = rng.randint(config.value_bytes_min, config.value_bytes_max)
        g.nodes[nid] = (label, rng.randbytes(size))


# ---------------------------------------------------------------------------
# Zipf access sampling
# ---------------------------------------------------------------------------


class ZipfSampler:
    """Ranks 1..n with P(r) proportional to r^(-alpha)."""

    def __init__(self, alpha: float, n: int, seed: int):
        if n < 1:
            raise InvalidParams("n must be >= 1")
        if alpha < 0:
            raise InvalidParams("alpha must be >= 0")
        self.alpha = alpha
        self.n = n
        weights = np.arange(1, n + 1, dtype=np.float64) ** (-alpha)
        self._cum = np.cumsum(weights)
        self._total = float(self._cum[-1])
        self._rng = random.Random(seed)

    def probability(self, rank: int) -> float:
        if not 1 <= rank <= self.n:
            raise InvalidParams("rank out of range")
        return float(rank ** (-self.alpha)) / self._total

    def draw(self) -> int:
        u = self._rng.random() * self._total
        return int(np.searchsorted(self._cum, u, side="right")) + 1

    def draw_many(self, count: int) -> list[int]:
        return [self.draw() for _ in range(count)]


def harmonic(n: int, alpha: float) -> float:
    """Generalized harmonic number; the Zipf normalizing constant."""
    return float(sum(r ** (-alpha) for r in range(1, n + 1)))
