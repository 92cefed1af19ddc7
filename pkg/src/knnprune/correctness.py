"""Entry correctness labels and the knowledge margin.

The knowledge margin of a point is the largest m <= k_bar such that its m
nearest datastore neighbors are all known. For a datastore entry the entry
itself is not counted as a neighbor.

Two routes are provided and must agree:

* :func:`entry_margins` / :func:`query_margins` find the first unknown
  neighbor in (distance, id) order with one linear scan and count the
  entries ranked before it; no sorting is needed.
* :func:`margin_at_least` / :func:`candidate_mask` retrieve exactly ``k_p``
  neighbors and test that all are known (the early-exit threshold test
  used by pruning).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Datastore
from .errors import InsufficientData, InvalidArgument, StateError
from .index import Index

DEFAULT_K_BAR = 2048


def label_known(record) -> bool:
    """An entry is known when the model's argmax equals the gold token."""
    return int(record.model_argmax) == int(record.gold)


def build_datastore(trace) -> Datastore:
    """Frozen datastore from a build trace, with known flags set per record."""
    known = np.asarray(trace.gold) == np.asarray(trace.model_argmax)
    return Datastore.from_arrays(
        trace.keys, trace.gold, known, vocab_size=trace.header.vocab_size
    )


def _check_cap(k_bar: int, name: str = "k_bar") -> int:
    if int(k_bar) != k_bar or k_bar < 1:
        raise InvalidArgument(f"{name} must be a positive integer, got {k_bar!r}")
    return int(k_bar)


def _margins_from_distances(
    d: np.ndarray, unknown: np.ndarray, k_bar: int, available: np.ndarray
) -> np.ndarray:
    """Margins for each row of ``d``; excluded entries are +inf in ``d``."""
    n = d.shape[1]
    du_all = np.where(unknown[None, :], d, np.inf)
    iu = np.argmin(du_all, axis=1)  # first occurrence -> smallest id among ties
    du = du_all[np.arange(d.shape[0]), iu]
    before = np.count_nonzero(d < du[:, None], axis=1)
    ids = np.arange(n)
    before += np.count_nonzero((d == du[:, None]) & (ids[None, :] < iu[:, None]), axis=1)
    # Rows without a reachable unknown neighbor: every available entry is known.
    no_unknown = ~np.isfinite(du)
    before[no_unknown] = available[no_unknown]
    return np.minimum(before, k_bar)


def entry_margins(index: Index, k_bar: int = DEFAULT_K_BAR, ids=None) -> np.ndarray:
    """Knowledge margins of datastore entries (self excluded), capped at ``k_bar``."""
    k_bar = _check_cap(k_bar)
    store = index.store
    n = len(store)
    if n < 2:
        raise InsufficientData("entry margins need at least 2 entries")
    ids = np.arange(n) if ids is None else np.asarray(ids, dtype=np.int64).reshape(-1)
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise InvalidArgument("entry id out of range")
    unknown = ~store.known
    out = np.empty(ids.shape[0], dtype=np.int64)
    step = index.block_size()
    for start in range(0, ids.shape[0], step):
        block = ids[start : start + step]
        d = index.distances(store.keys[block])
        d[np.arange(block.shape[0]), block] = np.inf
        avail = np.full(block.shape[0], n - 1)
        out[start : start + step] = _margins_from_distances(d, unknown, k_bar, avail)
    return out


def entry_margin(index: Index, entry_id: int, k_bar: int = DEFAULT_K_BAR) -> int:
    """Knowledge margin of one entry."""
    if int(entry_id) != entry_id or not 0 <= entry_id < len(index):
        raise InvalidArgument(f"entry id {entry_id!r} out of range")
    return int(entry_margins(index, k_bar, [entry_id])[0])


def query_margins(index: Index, queries, k_bar: int = DEFAULT_K_BAR) -> np.ndarray:
    """Knowledge margins of arbitrary points; no entry is excluded."""
    k_bar = _check_cap(k_bar)
    q = index.check_queries(queries)
    unknown = ~index.store.known
    out = np.empty(q.shape[0], dtype=np.int64)
    step = index.block_size()
    for start in range(0, q.shape[0], step):
        d = index.distances(q[start : start + step])
        avail = np.full(d.shape[0], len(index))
        out[start : start + step] = _margins_from_distances(d, unknown, k_bar, avail)
    return out


def query_margin(index: Index, query, k_bar: int = DEFAULT_K_BAR) -> int:
    q = np.asarray(query)
    if q.ndim != 1:
        raise InvalidArgument("query_margin takes a single query vector")
    return int(query_margins(index, q, k_bar)[0])


def candidate_mask(index: Index, k_p: int, ids=None) -> np.ndarray:
    """Whether each entry's ``k_p`` nearest non-self neighbors are all known."""
    k_p = _check_cap(k_p, "k_p")
    store = index.store
    n = len(store)
    if n < 2:
        raise InsufficientData("margin tests need at least 2 entries")
    ids = np.arange(n) if ids is None else np.asarray(ids, dtype=np.int64).reshape(-1)
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise InvalidArgument("entry id out of range")
    if k_p > n - 1:
        return np.zeros(ids.shape[0], dtype=bool)
    found = index.search(store.keys[ids], k_p, ids)
    return np.fromiter(
        (nb.shape[0] == k_p and bool(store.known[nb].all()) for nb, _ in found),
        dtype=bool,
        count=ids.shape[0],
    )


def margin_at_least(index: Index, entry_id: int, k_p: int) -> bool:
    """True iff the entry's margin is at least ``k_p``."""
    if int(entry_id) != entry_id or not 0 <= entry_id < len(index):
        raise InvalidArgument(f"entry id {entry_id!r} out of range")
    return bool(candidate_mask(index, k_p, [entry_id])[0])


def compute_margins(index: Index, k_bar: int = DEFAULT_K_BAR) -> Datastore:
    """Copy of the indexed store with its margin column filled at cap ``k_bar``."""
    return index.store.with_margins(entry_margins(index, k_bar), k_bar)


def margin_buckets(k_bar: int) -> list[tuple[int, int]]:
    """Half-open buckets ``[lo, hi)``: 0, 1, [2,4), [4,8), ..., [2^j, k_bar), {k_bar}."""
    k_bar = _check_cap(k_bar)
    edges = [0, 1]
    while edges[-1] * 2 < k_bar:
        edges.append(edges[-1] * 2)
    edges = [e for e in edges if e < k_bar] + [k_bar, k_bar + 1]
    return list(zip(edges[:-1], edges[1:]))


def bucket_of(margins, k_bar: int) -> np.ndarray:
    """Bucket position of each margin within :func:`margin_buckets`."""
    lows = np.array([lo for lo, _ in margin_buckets(k_bar)])
    return np.searchsorted(lows, np.asarray(margins), side="right") - 1


@dataclass(frozen=True)
class MarginReport:
    k_bar: int
    buckets: list[tuple[int, int]]
    known_counts: list[int]
    unknown_counts: list[int]

    @property
    def n_known(self) -> int:
        return sum(self.known_counts)

    @property
    def n_unknown(self) -> int:
        return sum(self.unknown_counts)

    def fraction_below(self, margin: int, known: bool) -> float:
        """Fraction of known (or unknown) entries whose margin is < ``margin``."""
        counts = self.known_counts if known else self.unknown_counts
        total = sum(counts)
        if total == 0:
            return 0.0
        below = sum(c for (lo, hi), c in zip(self.buckets, counts) if hi <= margin)
        return below / total

    def rows(self) -> list[dict]:
        return [
            {"bucket_lo": lo, "bucket_hi": hi, "known_count": kc, "unknown_count": uc}
            for (lo, hi), kc, uc in zip(self.buckets, self.known_counts, self.unknown_counts)
        ]

    def to_dict(self) -> dict:
        return {
            "k_bar": self.k_bar,
            "n_known": self.n_known,
            "n_unknown": self.n_unknown,
            "histogram": self.rows(),
        }

    def write_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            writer = csv.DictWriter(
                fh, ["bucket_lo", "bucket_hi", "known_count", "unknown_count"], lineterminator="\n"
            )
            writer.writeheader()
            writer.writerows(self.rows())


def margin_histogram(store: Datastore, k_bar: int | None = None) -> MarginReport:
    """Bucketed margin counts split by known/unknown."""
    if store.margins is None:
        raise StateError("datastore has no margins; compute them first")
    cap = store.margin_cap
    if k_bar is not None and k_bar != cap:
        raise StateError(f"margins were computed with k_bar={cap}, not {k_bar}")
    buckets = margin_buckets(cap)
    pos = bucket_of(store.margins, cap)
    known = store.known
    kc = np.bincount(pos[known], minlength=len(buckets))
    uc = np.bincount(pos[~known], minlength=len(buckets))
    return MarginReport(cap, buckets, [int(c) for c in kc], [int(c) for c in uc])
