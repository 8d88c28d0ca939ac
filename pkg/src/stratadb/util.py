"""Shared helpers: logical time and deterministic seed derivation."""
from __future__ import annotations

import hashlib


def derive_seed(root: int, *labels) -> int:
    """Derive an independent 63-bit seed from a root seed and a label path.

    Every source of randomness in the project draws from a named sub-stream
    so that one root seed reproduces an entire run.
    """
    digest = hashlib.sha256(repr((root,) + labels).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


class LogicalClock:
    """Explicitly advanced tick counter.

    All expiry checks and commit timestamps use logical ticks rather than
    wall-clock time, which keeps TTL and lineage tests deterministic.
    """

    __slots__ = ("now",)

    def __init__(self, start: int = 0):
        self.now = start

    def advance(self, n: int = 1) -> int:
        self.now += n
        return self.now

    def clone(self) -> "LogicalClock":
        return LogicalClock(self.now)

    def __repr__(self) -> str:
        return f"LogicalClock({self.now})"
