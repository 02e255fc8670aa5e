"""All-pairs truncated graph distances over the undirected training graph.

Distances are hop counts, relation-agnostic and direction-agnostic, computed
by breadth-first search from every entity and truncated at ``cap``: anything
not reached in fewer than ``cap`` hops is reported as ``cap``. Only pairs
with distance < cap are stored, so memory stays proportional to the
truncated neighbourhood sizes.

The index serializes to a little-endian binary cache (magic ``VLPD``) keyed
by a hash of the raw training file so stale caches are never reused.
"""

from __future__ import annotations

import concurrent.futures
import logging
import struct

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

logger = logging.getLogger(__name__)

DEFAULT_CAP = 8

MAGIC = b"VLPD"
VERSION = 1

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_U64 = (1 << 64) - 1

_PAIR_DTYPE = np.dtype([("id", "<u4"), ("d", "u1")])


class CacheError(Exception):
    """A cache file is missing, truncated, or fails validation."""


def fnv1a64(data):
    """64-bit FNV-1a hash of a bytes-like object."""
    h = FNV_OFFSET
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & _U64
    return h


def hash_file(path, chunk_size=1 << 20):
    """FNV-1a hash of a file's raw bytes, streamed in chunks."""
    h = FNV_OFFSET
    with open(path, "rb") as handle:
        while True:
            chunk = handle.read(chunk_size)
            if not chunk:
                break
            for b in chunk:
                h = ((h ^ b) * FNV_PRIME) & _U64
    return h


class DistanceIndex:
    """Per-source truncated distance rows.

    Each row holds the ids within distance cap-1 of the source (the source
    itself included at distance 0), sorted by (distance, id), plus bucket
    offsets so all ids at one exact distance are a contiguous slice.
    """

    def __init__(self, n_entities, cap, row_ids, row_dists, train_hash=0):
        self.n_entities = int(n_entities)
        self.cap = int(cap)
        self.train_hash = int(train_hash)
        self._ids = row_ids          # list of uint32 arrays, (distance, id) sorted
        self._dists = row_dists      # list of uint8 arrays, aligned with _ids
        self._offsets = [
            np.searchsorted(d, np.arange(cap + 1)) for d in self._dists
        ]

    def row(self, source):
        """(ids, dists) arrays for one source, sorted by (distance, id)."""
        return self._ids[source], self._dists[source]

    def ring(self, source, distance):
        """Ids at exactly ``distance`` from source, ascending (empty if none)."""
        if distance >= self.cap:
            raise ValueError("rings are only stored for distance < cap")
        off = self._offsets[source]
        return self._ids[source][off[distance]:off[distance + 1]]

    def ring_sizes(self, source):
        """Count of ids at each exact distance 0..cap-1, plus the remainder
        bucket at index cap (everything at distance >= cap)."""
        off = self._offsets[source]
        sizes = np.diff(off).astype(np.int64)
        sizes = np.append(sizes, self.n_entities - len(self._ids[source]))
        return sizes

    def distance(self, a, b):
        """Hop count between a and b, saturated at cap."""
        off = self._offsets[a]
        ids = self._ids[a]
        for d in range(self.cap):
            lo, hi = off[d], off[d + 1]
            pos = np.searchsorted(ids[lo:hi], b)
            if pos < hi - lo and ids[lo + pos] == b:
                return d
        return self.cap

    def distances_from(self, source):
        """Dense (n_entities,) distance vector from one source."""
        out = np.full(self.n_entities, self.cap, dtype=np.int64)
        ids, dists = self.row(source)
        out[ids] = dists
        return out

    def save(self, path):
        with open(path, "wb") as handle:
            handle.write(MAGIC)
            handle.write(struct.pack("<IIQQ", VERSION, self.cap,
                                     self.n_entities, self.train_hash))
            for ids, dists in zip(self._ids, self._dists):
                handle.write(struct.pack("<I", len(ids)))
                rec = np.empty(len(ids), dtype=_PAIR_DTYPE)
                rec["id"] = ids
                rec["d"] = dists
                handle.write(rec.tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as handle:
            data = handle.read()
        if len(data) < 28 or data[:4] != MAGIC:
            raise CacheError(f"{path}: not a distance cache")
        version, cap, n_entities, train_hash = struct.unpack_from("<IIQQ", data, 4)
        if version != VERSION:
            raise CacheError(f"{path}: unsupported version {version}")
        pos = 28
        row_ids, row_dists = [], []
        try:
            for _ in range(n_entities):
                (count,) = struct.unpack_from("<I", data, pos)
                pos += 4
                rec = np.frombuffer(data, dtype=_PAIR_DTYPE, count=count, offset=pos)
                pos += count * _PAIR_DTYPE.itemsize
                row_ids.append(rec["id"].astype(np.uint32))
                row_dists.append(rec["d"].copy())
        except (struct.error, ValueError) as exc:
            raise CacheError(f"{path}: truncated distance cache") from exc
        if pos != len(data):
            raise CacheError(f"{path}: trailing bytes in distance cache")
        return cls(n_entities, cap, row_ids, row_dists, train_hash)


def compute_distances(kg, cap=DEFAULT_CAP, threads=1, train_hash=0,
                      chunk=512):
    """Truncated BFS from every entity on the undirected training graph.

    Backed by scipy's unweighted shortest-path machinery on a symmetric CSR
    adjacency matrix, parallelised over source chunks; results are identical
    to a plain per-source BFS.
    """
    if cap < 1 or cap > 255:
        raise ValueError("cap must be in [1, 255]")
    n = kg.n_entities
    edges = kg.undirected_edges()
    weights = np.ones(2 * len(edges), dtype=np.int8)
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    graph = csr_matrix((weights, (rows, cols)), shape=(n, n))

    row_ids = [None] * n
    row_dists = [None] * n

    def run_chunk(start):
        sources = np.arange(start, min(start + chunk, n))
        # limit keeps distances <= cap-1; everything else comes back inf
        dmat = dijkstra(graph, directed=False, unweighted=True,
                        indices=sources, limit=cap - 1)
        for i, src in enumerate(sources):
            drow = dmat[i]
            ids = np.flatnonzero(np.isfinite(drow)).astype(np.uint32)
            dists = drow[ids].astype(np.uint8)
            order = np.lexsort((ids, dists))
            row_ids[src] = ids[order]
            row_dists[src] = dists[order]

    starts = range(0, n, chunk)
    if threads > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_chunk, starts))
    else:
        for start in starts:
            run_chunk(start)
    return DistanceIndex(n, cap, row_ids, row_dists, train_hash)
