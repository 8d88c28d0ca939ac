"""Append-only content-addressed pack store.

Content is keyed by a SHA-256 digest.  Payloads live in one or more
append-only pack segments; a duplicate put never appends bytes, which is
what keeps write amplification below 1 under dedup-heavy workloads.

Pack layout (fixed so that byte-level accounting and pack-digest equality
checks are exact):

    header : 4-byte magic ``ENSH`` + 4-byte LE format version + 1-byte algorithm id
    entry  : 32-byte digest + 8-byte LE payload length + payload bytes

A store can span several segments.  Reads probe segments newest-first, and
the number of per-segment index probes on a miss is the "dereference depth"
recorded in the access log; compaction rewrites live content into at most
``k`` fresh segments so that depth stays bounded.
"""
from __future__ import annotations

import hashlib
import os
import struct
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

PACK_MAGIC = b"ENSH"
FORMAT_VERSION = 1
SHA256_ID = 1
HEADER_LEN = 9  # magic + version + algorithm id
ENTRY_HEADER_LEN = 40  # 32-byte digest + 8-byte LE length
DEFAULT_MAX_OBJECT_BYTES = 64 * 1024 * 1024

_ZERO32 = b"\x00" * 32


class StoreClosed(Exception):
    """Operation attempted on a closed store."""


class ObjectTooLarge(Exception):
    def __init__(self, size: int, limit: int):
        super().__init__(f"object of {size} bytes exceeds limit {limit}")
        self.size = size
        self.limit = limit


class NotFound(Exception):
    def __init__(self, content_hash: "ContentHash"):
        super().__init__(f"no content for {content_hash.hex}")
        self.content_hash = content_hash


class CorruptEntry(Exception):
    def __init__(self, content_hash: "ContentHash"):
        super().__init__(f"recomputed digest mismatches {content_hash.hex}")
        self.content_hash = content_hash


class FormatMismatch(Exception):
    """Packs disagree on algorithm id or format version."""


class NoWritesYet(Exception):
    """Write amplification is undefined before the first logical write."""


@dataclass(frozen=True)
class ContentHash:
    """256-bit content digest plus the algorithm tag recorded alongside it."""

    digest: bytes
    algorithm_id: int = SHA256_ID

    def __post_init__(self):
        if len(self.digest) != 32:
            raise ValueError("digest must be 32 bytes")

    @property
    def hex(self) -> str:
        return self.digest.hex()

    @classmethod
    def of(cls, content: bytes, algorithm_id: int = SHA256_ID) -> "ContentHash":
        if algorithm_id != SHA256_ID:
            raise ValueError(f"unknown algorithm id {algorithm_id}")
        return cls(hashlib.sha256(content).digest(), algorithm_id)

    def __repr__(self) -> str:
        return f"ContentHash({self.hex[:12]}…)"


def hash_content(content: bytes) -> ContentHash:
    return ContentHash.of(content)


@dataclass
class WriteStats:
    """Byte accounting: logical = submitted via put, physical = appended."""

    logical_bytes: int = 0
    physical_bytes: int = 0

    def snapshot(self) -> tuple[int, int]:
        return (self.logical_bytes, self.physical_bytes)

    def csv(self) -> str:
        wa = self.physical_bytes / self.logical_bytes if self.logical_bytes else float("nan")
        return "logical_bytes,physical_bytes,wa\n" + f"{self.logical_bytes},{self.physical_bytes},{wa:.6f}\n"


def write_amplification(stats: WriteStats) -> float:
    """Physical bytes appended divided by logical bytes submitted."""
    if stats.logical_bytes <= 0:
        raise NoWritesYet("no logical writes recorded")
    return stats.physical_bytes / stats.logical_bytes


# ---------------------------------------------------------------------------
# Pack values
# ---------------------------------------------------------------------------


def _pack_header(algorithm_id: int) -> bytes:
    return PACK_MAGIC + struct.pack("<I", FORMAT_VERSION) + bytes([algorithm_id])


@dataclass(frozen=True)
class Pack:
    """Immutable pack value: a header plus ordered (digest, payload) entries.

    Concatenation is dedup-union preserving first-seen order, which makes
    packs a monoid with the empty pack as identity (up to pack-digest
    equality).
    """

    entries: tuple[tuple[bytes, bytes], ...] = ()
    algorithm_id: int = SHA256_ID
    version: int = FORMAT_VERSION

    def to_bytes(self) -> bytes:
        parts = [PACK_MAGIC, struct.pack("<I", self.version), bytes([self.algorithm_id])]
        for digest, payload in self.entries:
            parts.append(digest)
            parts.append(struct.pack("<Q", len(payload)))
            parts.append(payload)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Pack":
        if len(raw) < HEADER_LEN or raw[:4] != PACK_MAGIC:
            raise FormatMismatch("bad pack header")
        version = struct.unpack_from("<I", raw, 4)[0]
        if version != FORMAT_VERSION:
            raise FormatMismatch(f"unsupported pack version {version}")
        algorithm_id = raw[8]
        entries = []
        off = HEADER_LEN
        while off < len(raw):
            if off + ENTRY_HEADER_LEN > len(raw):
                raise FormatMismatch("truncated entry header")
            digest = raw[off : off + 32]
            (length,) = struct.unpack_from("<Q", raw, off + 32)
            off += ENTRY_HEADER_LEN
            if off + length > len(raw):
                raise FormatMismatch("truncated entry payload")
            payload = raw[off : off + length]
            off += length
            if hashlib.sha256(payload).digest() != digest:
                raise CorruptEntry(ContentHash(digest, algorithm_id))
            entries.append((digest, payload))
        return cls(tuple(entries), algorithm_id, version)

    def digest(self) -> bytes:
        """Digest of the serialized pack; the equality used by monoid checks."""
        return hashlib.sha256(self.to_bytes()).digest()

    def hashes(self) -> tuple[bytes, ...]:
        return tuple(d for d, _ in self.entries)

    def __len__(self) -> int:
        return len(self.entries)


EMPTY_PACK = Pack()


def pack_concat(p1: Pack, p2: Pack) -> Pack:
    """Deduplicated union of two packs, preserving first-seen entry order."""
    if p1.algorithm_id != p2.algorithm_id or p1.version != p2.version:
        raise FormatMismatch("packs disagree on algorithm id or version")
    seen = set()
    entries = []
    for digest, payload in p1.entries + p2.entries:
        if digest in seen:
            continue
        seen.add(digest)
        entries.append((digest, payload))
    return Pack(tuple(entries), p1.algorithm_id, p1.version)


# ---------------------------------------------------------------------------
# Read-path instrumentation
# ---------------------------------------------------------------------------


class AccessLog:
    """Per-read record: cache hit/miss flag, dereference depth, latency.

    Depth is the number of per-segment index probes performed on a miss
    (>= 1); hits record depth 1 (the cache probe) but only misses feed the
    read-bound slack estimate.  Read "steps" are 1 for a hit and 1 + depth
    for a miss.
    """

    def __init__(self):
        self.hits: list[bool] = []
        self.depths: list[int] = []
        self.lat_ns: list[int] = []

    def record(self, hit: bool, depth: int, lat_ns: int = 0) -> None:
        self.hits.append(hit)
        self.depths.append(depth)
        self.lat_ns.append(lat_ns)

    def __len__(self) -> int:
        return len(self.hits)

    def mark(self) -> int:
        return len(self.hits)

    def window(self, start: int = 0) -> tuple[list[bool], list[int], list[int]]:
        return self.hits[start:], self.depths[start:], self.lat_ns[start:]


class _LruCache:
    """Entry-bounded LRU of digest -> payload bytes."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._data: OrderedDict[bytes, bytes] = OrderedDict()

    def get(self, key: bytes) -> bytes | None:
        value = self._data.get(key)
        if value is not None:
            self._data.move_to_end(key)
        return value

    def put(self, key: bytes, value: bytes) -> None:
        self._data[key] = value
        self._data.move_to_end(key)
        while len(self._data) > self.capacity:
            self._data.popitem(last=False)

    def clone(self) -> "_LruCache":
        fresh = _LruCache(self.capacity)
        fresh._data = OrderedDict(self._data)
        return fresh


# ---------------------------------------------------------------------------
# Segments
# ---------------------------------------------------------------------------


class _MemorySegment:
    __slots__ = ("seg_id", "buf", "index", "order")

    def __init__(self, seg_id: int, algorithm_id: int):
        self.seg_id = seg_id
        self.buf = bytearray(_pack_header(algorithm_id))
        self.index: dict[bytes, tuple[int, int]] = {}
        self.order: list[bytes] = []

    @property
    def size(self) -> int:
        return len(self.buf)

    def append(self, digest: bytes, payload: bytes) -> int:
        self.buf += digest
        self.buf += struct.pack("<Q", len(payload))
        off = len(self.buf)
        self.buf += payload
        self.index[digest] = (off, len(payload))
        self.order.append(digest)
        return ENTRY_HEADER_LEN + len(payload)

    def read(self, off: int, length: int) -> bytes:
        return bytes(self.buf[off : off + length])

    def raw_bytes(self) -> bytes:
        return bytes(self.buf)

    def clone(self, seg_id: int | None = None) -> "_MemorySegment":
        fresh = _MemorySegment.__new__(_MemorySegment)
        fresh.seg_id = self.seg_id if seg_id is None else seg_id
        fresh.buf = bytearray(self.buf)
        fresh.index = dict(self.index)
        fresh.order = list(self.order)
        return fresh


class _FileSegment:
    __slots__ = ("seg_id", "path", "fd", "size", "index", "order")

    def __init__(self, seg_id: int, path: Path, algorithm_id: int):
        self.seg_id = seg_id
        self.path = path
        existed = path.exists()
        self.fd = os.open(path, os.O_RDWR | os.O_CREAT, 0o644)
        self.index: dict[bytes, tuple[int, int]] = {}
        self.order: list[bytes] = []
        if existed and os.fstat(self.fd).st_size > 0:
            self.size = os.fstat(self.fd).st_size
            self._scan()
        else:
            header = _pack_header(algorithm_id)
            os.pwrite(self.fd, header, 0)
            self.size = len(header)

    def _scan(self) -> None:
        raw = os.pread(self.fd, self.size, 0)
        pack = Pack.from_bytes(raw)
        off = HEADER_LEN
        for digest, payload in pack.entries:
            off += ENTRY_HEADER_LEN
            self.index[digest] = (off, len(payload))
            self.order.append(digest)
            off += len(payload)

    def append(self, digest: bytes, payload: bytes) -> int:
        rec = digest + struct.pack("<Q", len(payload)) + payload
        os.pwrite(self.fd, rec, self.size)
        off = self.size + ENTRY_HEADER_LEN
        self.size += len(rec)
        self.index[digest] = (off, len(payload))
        self.order.append(digest)
        return len(rec)

    def read(self, off: int, length: int) -> bytes:
        return os.pread(self.fd, length, off)

    def raw_bytes(self) -> bytes:
        return os.pread(self.fd, self.size, 0)

    def close(self) -> None:
        os.close(self.fd)


# ---------------------------------------------------------------------------
# The store
# ---------------------------------------------------------------------------


class PackStore:
    """Content-addressed store over append-only pack segments.

    ``directory=None`` keeps segments in memory (cheap to clone, used by the
    measurement harness); a directory path persists one pack file per
    segment and rebuilds the in-memory index by scanning at open.

    Many readers and one appender are safe concurrently; puts are
    serialized by an internal lock.
    """

    def __init__(
        self,
        directory: str | Path | None = None,
        *,
        max_object_bytes: int = DEFAULT_MAX_OBJECT_BYTES,
        verify_on_read: bool = True,
        cache_entries: int = 0,
        segment_bytes: int | None = None,
        algorithm_id: int = SHA256_ID,
    ):
        self.directory = Path(directory) if directory is not None else None
        self.max_object_bytes = max_object_bytes
        self.verify_on_read = verify_on_read
        self.segment_bytes = segment_bytes
        self.algorithm_id = algorithm_id
        self.stats = WriteStats()
        self.access_log = AccessLog()
        self.recording = False
        self.total_read_steps = 0
        self._cache = _LruCache(cache_entries) if cache_entries > 0 else None
        self._cache_lock = threading.Lock()
        self._put_lock = threading.Lock()
        self._closed = False
        self._next_seg_id = 0
        self._segments: list = []
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)
            existing = sorted(self.directory.glob("seg-*.pack"))
            for path in existing:
                seg_id = int(path.stem.split("-")[1])
                self._segments.append(_FileSegment(seg_id, path, algorithm_id))
                self._next_seg_id = max(self._next_seg_id, seg_id + 1)
        if not self._segments:
            self._new_segment(count_header=True)

    # -- segment plumbing ---------------------------------------------------

    def _new_segment(self, count_header: bool = True):
        seg_id = self._next_seg_id
        self._next_seg_id += 1
        if self.directory is not None:
            seg = _FileSegment(seg_id, self.directory / f"seg-{seg_id:06d}.pack", self.algorithm_id)
        else:
            seg = _MemorySegment(seg_id, self.algorithm_id)
        self._segments.append(seg)
        if count_header:
            self.stats.physical_bytes += HEADER_LEN
        return seg

    def roll_segment(self) -> int:
        """Start a fresh active segment; returns its id."""
        self._check_open()
        with self._put_lock:
            return self._new_segment().seg_id

    @property
    def segment_count(self) -> int:
        return len(self._segments)

    def segment_ids(self) -> list[int]:
        return [seg.seg_id for seg in self._segments]

    def segment_bytes_total(self) -> int:
        return sum(seg.size for seg in self._segments)

    def _check_open(self) -> None:
        if self._closed:
            raise StoreClosed("store is closed")

    # -- core operations ----------------------------------------------------

    def put(self, content: bytes) -> ContentHash:
        """Idempotent insert: returns the digest; duplicates append nothing."""
        self._check_open()
        if len(content) > self.max_object_bytes:
            raise ObjectTooLarge(len(content), self.max_object_bytes)
        ch = ContentHash.of(content, self.algorithm_id)
        with self._put_lock:
            self.stats.logical_bytes += len(content)
            for seg in reversed(self._segments):
                if ch.digest in seg.index:
                    return ch
            active = self._segments[-1]
            if (
                self.segment_bytes is not None
                and active.size > HEADER_LEN
                and active.size + ENTRY_HEADER_LEN + len(content) > self.segment_bytes
            ):
                active = self._new_segment()
            self.stats.physical_bytes += active.append(ch.digest, content)
        return ch

    def contains(self, content_hash: ContentHash) -> bool:
        return any(content_hash.digest in seg.index for seg in self._segments)

    def locate(self, content_hash: ContentHash) -> int | None:
        """Segment id holding the hash (first match newest-first), or None."""
        for seg in reversed(self._segments):
            if content_hash.digest in seg.index:
                return seg.seg_id
        return None

    def get(self, content_hash: ContentHash) -> bytes:
        """Instrumented read: LRU probe first, then newest-first segment chase."""
        self._check_open()
        t0 = time.perf_counter_ns() if self.recording else 0
        if self._cache is not None:
            with self._cache_lock:
                cached = self._cache.get(content_hash.digest)
            if cached is not None:
                if self.recording:
                    self.access_log.record(True, 1, time.perf_counter_ns() - t0)
                    self.total_read_steps += 1
                return cached
        depth = 0
        for seg in reversed(self._segments):
            depth += 1
            loc = seg.index.get(content_hash.digest)
            if loc is None:
                continue
            payload = seg.read(*loc)
            if self.verify_on_read and hashlib.sha256(payload).digest() != content_hash.digest:
                raise CorruptEntry(content_hash)
            if self._cache is not None:
                with self._cache_lock:
                    self._cache.put(content_hash.digest, payload)
            if self.recording:
                self.access_log.record(False, depth, time.perf_counter_ns() - t0)
                self.total_read_steps += 1 + depth
            return payload
        raise NotFound(content_hash)

    def read_raw(self, content_hash: ContentHash) -> bytes:
        """Uninstrumented read used by system machinery (replay, views, oracles)."""
        self._check_open()
        for seg in reversed(self._segments):
            loc = seg.index.get(content_hash.digest)
            if loc is not None:
                payload = seg.read(*loc)
                if self.verify_on_read and hashlib.sha256(payload).digest() != content_hash.digest:
                    raise CorruptEntry(content_hash)
                return payload
        raise NotFound(content_hash)

    # -- physical reorganization --------------------------------------------

    def rewrite(self, hashes: list[ContentHash], k: int) -> dict[bytes, int]:
        """Compaction primitive: copy the given live content into <= k fresh
        segments (contiguous split), returning digest -> new segment id.

        Old segments keep their bytes (space is not reclaimed); the rewrite
        is charged to physical bytes but not to logical bytes.
        """
        self._check_open()
        if k < 1:
            raise ValueError("k must be >= 1")
        with self._put_lock:
            payloads = []
            for ch in hashes:
                payloads.append((ch.digest, self.read_raw(ch)))
            groups = max(1, min(k, len(payloads)))
            locations: dict[bytes, int] = {}
            if not payloads:
                seg = self._new_segment()
                return locations
            per = -(-len(payloads) // groups)  # ceil division
            for g in range(groups):
                chunk = payloads[g * per : (g + 1) * per]
                if not chunk:
                    break
                seg = self._new_segment()
                for digest, payload in chunk:
                    self.stats.physical_bytes += seg.append(digest, payload)
                    locations[digest] = seg.seg_id
            return locations

    def merge_oldest(self) -> dict[bytes, int]:
        """Merge the two oldest segments into one (dedup union, stable order).

        A no-op when fewer than two segments exist.  Returns digest -> new
        segment id for relocated entries.
        """
        self._check_open()
        with self._put_lock:
            if len(self._segments) < 2:
                return {}
            a, b = self._segments[0], self._segments[1]
            seg_id = self._next_seg_id
            self._next_seg_id += 1
            if self.directory is not None:
                merged = _FileSegment(seg_id, self.directory / f"seg-{seg_id:06d}.pack", self.algorithm_id)
            else:
                merged = _MemorySegment(seg_id, self.algorithm_id)
            self.stats.physical_bytes += HEADER_LEN
            moved: dict[bytes, int] = {}
            for seg in (a, b):
                for digest in seg.order:
                    if digest in merged.index:
                        continue
                    off, length = seg.index[digest]
                    self.stats.physical_bytes += merged.append(digest, seg.read(off, length))
                    moved[digest] = seg_id
            if self.directory is not None:
                a.close()
                b.close()
                a.path.unlink()
                b.path.unlink()
            self._segments[0:2] = [merged]
            return moved

    # -- export / lifecycle ---------------------------------------------------

    def to_pack(self) -> Pack:
        """Whole-store contents as a single pack value (dedup union)."""
        pack = Pack((), self.algorithm_id)
        for seg in self._segments:
            entries = tuple((d, seg.read(*seg.index[d])) for d in seg.order)
            pack = pack_concat(pack, Pack(entries, self.algorithm_id))
        return pack

    def retrievable(self) -> dict[bytes, bytes]:
        """Map of digest -> payload over everything stored (order-free view)."""
        out: dict[bytes, bytes] = {}
        for seg in self._segments:
            for digest in seg.order:
                if digest not in out:
                    out[digest] = seg.read(*seg.index[digest])
        return out

    def set_recording(self, on: bool) -> None:
        self.recording = on

    def clone(self) -> "PackStore":
        """Deep copy of an in-memory store (used by the measurement harness)."""
        if self.directory is not None:
            raise ValueError("only in-memory stores can be cloned")
        fresh = PackStore.__new__(PackStore)
        fresh.directory = None
        fresh.max_object_bytes = self.max_object_bytes
        fresh.verify_on_read = self.verify_on_read
        fresh.segment_bytes = self.segment_bytes
        fresh.algorithm_id = self.algorithm_id
        fresh.stats = WriteStats(self.stats.logical_bytes, self.stats.physical_bytes)
        fresh.access_log = AccessLog()
        fresh.recording = False
        fresh.total_read_steps = 0
        fresh._cache = self._cache.clone() if self._cache is not None else None
        fresh._cache_lock = threading.Lock()
        fresh._put_lock = threading.Lock()
        fresh._closed = self._closed
        fresh._next_seg_id = self._next_seg_id
        fresh._segments = [seg.clone() for seg in self._segments]
        return fresh

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        if self.directory is not None:
            for seg in self._segments:
                seg.close()
