"""Exact k-nearest-neighbor search under squared L2 distance.

Distances are accumulated in float64 one coordinate at a time, in a fixed
order, so a query's distances do not depend on how queries are batched.
Ties are broken by entry id ascending.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .core import Datastore
from .errors import EmptyDatastore, InvalidArgument, StateError

# Upper bound on elements in one (queries x entries) distance block.
BLOCK_ELEMENTS = 1 << 22


@dataclass(frozen=True)
class Neighbor:
    entry_id: int
    distance: float
    value: int
    known: bool


@dataclass(frozen=True)
class NeighborSet:
    """Neighbors sorted by (distance, entry_id)."""

    ids: np.ndarray
    distances: np.ndarray
    values: np.ndarray
    known: np.ndarray

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    def __iter__(self) -> Iterator[Neighbor]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i: int) -> Neighbor:
        return Neighbor(
            int(self.ids[i]), float(self.distances[i]), int(self.values[i]), bool(self.known[i])
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, NeighborSet):
            return NotImplemented
        return bool(
            np.array_equal(self.ids, other.ids) and np.array_equal(self.distances, other.distances)
        )

    __hash__ = None  # type: ignore[assignment]


class Index:
    """Brute-force index over a frozen, non-empty datastore.

    :meth:`search` is the backend boundary; everything else in the package
    goes through it or through :meth:`distances`.
    """

    def __init__(self, store: Datastore) -> None:
        if not store.frozen:
            raise StateError("index requires a frozen datastore")
        if len(store) == 0:
            raise EmptyDatastore("cannot index an empty datastore")
        self.store = store
        # (dim, n) so each coordinate is one contiguous row.
        self._cols = np.ascontiguousarray(store.keys.T, dtype=np.float64)
        self._ids = np.arange(len(store), dtype=np.int64)

    def __len__(self) -> int:
        return len(self.store)

    @property
    def dim(self) -> int:
        return self.store.dim

    def check_queries(self, queries) -> np.ndarray:
        q = np.asarray(queries)
        if q.ndim == 1:
            q = q[None, :]
        if q.ndim != 2 or q.shape[1] != self.dim:
            raise InvalidArgument(f"query dimension mismatch: expected {self.dim}, got shape {np.shape(queries)}")
        q = q.astype(np.float32, copy=False)
        bad = ~np.all(np.isfinite(q), axis=1)
        if bad.any():
            raise InvalidArgument(f"query {int(np.flatnonzero(bad)[0])} contains NaN or Inf")
        return q

    def block_size(self) -> int:
        return max(1, BLOCK_ELEMENTS // len(self))

    def distances(self, queries: np.ndarray) -> np.ndarray:
        """Squared L2 distances, shape (len(queries), n), float64.

        ``queries`` must already be validated float32 rows.
        """
        q = queries.astype(np.float64)
        out = np.zeros((q.shape[0], len(self)), dtype=np.float64)
        diff = np.empty_like(out)
        for j in range(self.dim):
            np.subtract(self._cols[j][None, :], q[:, j, None], out=diff)
            np.multiply(diff, diff, out=diff)
            out += diff
        return out

    def search(self, queries, k: int, exclude=None) -> list[tuple[np.ndarray, np.ndarray]]:
        """Return per-query ``(ids, distances)`` of the k nearest entries.

        ``exclude`` is None or one entry id per query (negative means none).
        """
        if int(k) != k or k < 1:
            raise InvalidArgument(f"k must be a positive integer, got {k!r}")
        q = self.check_queries(queries)
        m = q.shape[0]
        if exclude is None:
            excl = np.full(m, -1, dtype=np.int64)
        else:
            excl = np.asarray(exclude, dtype=np.int64).reshape(-1)
            if excl.shape[0] != m:
                raise InvalidArgument("need one exclusion per query")
            if np.any(excl >= len(self)):
                bad = int(np.flatnonzero(excl >= len(self))[0])
                raise InvalidArgument(f"query {bad}: exclude id {int(excl[bad])} out of range")
        results: list[tuple[np.ndarray, np.ndarray]] = []
        step = self.block_size()
        for start in range(0, m, step):
            block_excl = excl[start : start + step]
            d = self.distances(q[start : start + step])
            rows = np.flatnonzero(block_excl >= 0)
            d[rows, block_excl[rows]] = np.inf
            for r in range(d.shape[0]):
                available = len(self) - (1 if block_excl[r] >= 0 else 0)
                results.append(_top_k(d[r], min(int(k), available)))
        return results


def _top_k(row: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """k smallest entries of ``row`` ordered by (value, position)."""
    if k == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64)
    if k < row.shape[0]:
        kth = np.partition(row, k - 1)[k - 1]
        cand = np.flatnonzero(row <= kth)
    else:
        cand = np.flatnonzero(np.isfinite(row))
    # cand is ascending, so a stable sort on distance keeps ids ascending within ties.
    order = np.argsort(row[cand], kind="stable")[:k]
    ids = cand[order]
    return ids, row[ids]


def build_index(store: Datastore) -> Index:
    """Build an exact index over a frozen, non-empty store."""
    return Index(store)


def _neighbor_set(index: Index, ids: np.ndarray, dists: np.ndarray) -> NeighborSet:
    store = index.store
    return NeighborSet(ids, dists, store.values[ids].astype(np.int64), store.known[ids].copy())


def knn(index: Index, query, k: int, exclude: int | None = None) -> NeighborSet:
    """The k nearest entries to ``query``, optionally skipping entry ``exclude``."""
    q = np.asarray(query)
    if q.ndim != 1:
        raise InvalidArgument("knn takes a single query vector")
    excl = None if exclude is None else [exclude]
    if exclude is not None and not 0 <= exclude < len(index):
        raise InvalidArgument(f"exclude id {exclude} out of range")
    (ids, dists), = index.search(q, k, excl)
    return _neighbor_set(index, ids, dists)


def batch_knn(
    index: Index, queries, k: int, exclusions: Sequence[int | None] | None = None
) -> list[NeighborSet]:
    """Elementwise :func:`knn` over a batch of queries."""
    q = np.asarray(queries)
    if q.size == 0 and (q.ndim < 2 or q.shape[0] == 0):
        return []
    if q.ndim != 2:
        raise InvalidArgument("queries must be a 2-D array")
    excl = None
    if exclusions is not None:
        excl = np.array([-1 if e is None else e for e in exclusions], dtype=np.int64)
        if np.any(excl < -1):
            bad = int(np.flatnonzero(excl < -1)[0])
            raise InvalidArgument(f"query {bad}: exclude id out of range")
    return [_neighbor_set(index, ids, d) for ids, d in index.search(q, k, excl)]
