"""Datastore pruning: PLAC and the comparison strategies.

Every strategy defines an eligible pool of entry ids and removes
``round(ratio * n)`` of them (round half to even), drawn uniformly without
replacement. Draws use SplitMix64 seeded with ``PruneSpec.seed``, feeding a
partial Fisher-Yates shuffle over the pool sorted by id, so the same seed
selects the same entries in any implementation of that procedure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import Datastore
from .correctness import candidate_mask, entry_margins
from .errors import InsufficientData, InvalidArgument, StateError
from .index import Index

STRATEGIES = ("plac", "random", "known_random", "all_known", "reverse")
_NEEDS_KP = {"plac", "reverse"}
_MASK64 = (1 << 64) - 1


class SplitMix64:
    """SplitMix64 generator (Steele, Lea and Flood) with unbiased bounded draws."""

    def __init__(self, seed: int) -> None:
        self.state = int(seed) & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def below(self, bound: int) -> int:
        """Uniform integer in ``[0, bound)`` by rejection of the biased tail."""
        if bound < 1:
            raise InvalidArgument("bound must be positive")
        threshold = (1 << 64) % bound
        while True:
            x = self.next_u64()
            if x >= threshold:
                return x % bound


def sample_without_replacement(pool: np.ndarray, m: int, seed: int) -> np.ndarray:
    """First ``m`` positions of a seeded partial Fisher-Yates shuffle of ``pool``."""
    arr = np.array(pool, dtype=np.int64)
    rng = SplitMix64(seed)
    n = arr.shape[0]
    for i in range(min(m, n)):
        j = i + rng.below(n - i)
        arr[i], arr[j] = arr[j], arr[i]
    return arr[:m]


def target_count(ratio: float, n: int) -> int:
    # Python's round() is round-half-to-even.
    return int(round(ratio * n))


@dataclass(frozen=True)
class PruneSpec:
    strategy: str
    ratio: float = 0.0
    k_p: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise InvalidArgument(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if not 0.0 <= self.ratio < 1.0:
            raise InvalidArgument(f"ratio must lie in [0, 1), got {self.ratio!r}")
        if self.strategy in _NEEDS_KP:
            if self.k_p is None or int(self.k_p) != self.k_p or self.k_p < 1:
                raise InvalidArgument(f"strategy {self.strategy} needs a positive integer k_p")
        elif self.k_p is not None:
            raise InvalidArgument(f"strategy {self.strategy} does not take k_p")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidArgument("seed must be a 64-bit unsigned integer")


@dataclass
class PruneReport:
    n_before: int
    n_after: int
    n_candidates: int
    requested_ratio: float
    achieved_ratio: float
    strategy: str
    k_p: int | None
    seed: int
    partial: bool = False
    removed_ids: np.ndarray = field(default=None, repr=False)

    @property
    def n_removed(self) -> int:
        return self.n_before - self.n_after

    def to_dict(self) -> dict:
        return {
            "n_before": self.n_before,
            "n_after": self.n_after,
            "n_candidates": self.n_candidates,
            "requested_ratio": self.requested_ratio,
            "achieved_ratio": self.achieved_ratio,
            "strategy": self.strategy,
            "k_p": self.k_p,
            "seed": self.seed,
            "partial": self.partial,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _require_frozen(store: Datastore) -> None:
    if not store.frozen:
        raise StateError("datastore must be frozen")


def collect_candidates(store: Datastore, index: Index, k_p: int) -> np.ndarray:
    """Ids of known entries whose ``k_p`` nearest non-self neighbors are all known.

    Unknown entries are never candidates, whatever their margin.
    """
    _require_frozen(store)
    if index.store is not store:
        raise InvalidArgument("index was not built from this datastore")
    if len(store) < 2:
        raise InsufficientData("pruning by margin needs at least 2 entries")
    known_ids = np.flatnonzero(store.known)
    if known_ids.size == 0:
        return known_ids
    ok = candidate_mask(index, k_p, known_ids)
    return known_ids[ok]


def eligible_pool(store: Datastore, index: Index | None, spec: PruneSpec) -> np.ndarray:
    """Ascending ids the strategy may remove."""
    if spec.strategy == "plac":
        return collect_candidates(store, index, spec.k_p)
    if spec.strategy == "random":
        return np.arange(len(store), dtype=np.int64)
    if spec.strategy in ("known_random", "all_known"):
        return np.flatnonzero(store.known).astype(np.int64)
    # reverse: entries whose margin is below k_p, known or not
    if index is None or index.store is not store:
        raise InvalidArgument("reverse pruning needs an index over this datastore")
    if len(store) < 2:
        raise InsufficientData("pruning by margin needs at least 2 entries")
    return np.flatnonzero(~candidate_mask(index, spec.k_p)).astype(np.int64)


def prune(
    store: Datastore, index: Index | None, spec: PruneSpec, pool: np.ndarray | None = None
) -> tuple[Datastore, PruneReport]:
    """Remove entries per ``spec``; returns the new store and a report.

    ``pool`` may pass a precomputed :func:`eligible_pool` for repeated runs.
    When the pool is smaller than the target, the whole pool is removed and
    the report is flagged ``partial``. Survivors keep their order; margins
    are dropped unless nothing was removed.
    """
    _require_frozen(store)
    n = len(store)
    if n == 0:
        raise InsufficientData("cannot prune an empty datastore")
    if pool is None:
        pool = eligible_pool(store, index, spec)
    pool = np.asarray(pool, dtype=np.int64)
    if spec.strategy == "all_known":
        target = pool.shape[0]
    else:
        target = target_count(spec.ratio, n)
    partial = target > pool.shape[0]
    removed = np.sort(sample_without_replacement(pool, min(target, pool.shape[0]), spec.seed))
    if removed.size == 0:
        out = store
    else:
        keep = np.ones(n, dtype=bool)
        keep[removed] = False
        out = store.subset(np.flatnonzero(keep))
    report = PruneReport(
        n_before=n,
        n_after=len(out),
        n_candidates=int(pool.shape[0]),
        requested_ratio=float(spec.ratio),
        achieved_ratio=1.0 - len(out) / n,
        strategy=spec.strategy,
        k_p=spec.k_p,
        seed=int(spec.seed),
        partial=bool(partial),
        removed_ids=removed,
    )
    return out, report


@dataclass
class Verification:
    ok: bool
    problems: list[str]

    def __bool__(self) -> bool:
        return self.ok


def _align(original: Datastore, pruned: Datastore) -> np.ndarray | None:
    """Ids of ``original`` matching ``pruned`` as an ordered subsequence, or None."""
    orig = list(
        zip(
            [r.tobytes() for r in original.keys],
            original.values.tolist(),
            original.known.tolist(),
        )
    )
    pkeys = [r.tobytes() for r in pruned.keys]
    pvalues = pruned.values.tolist()
    pknown = pruned.known.tolist()
    matched = np.empty(len(pruned), dtype=np.int64)
    j = 0
    for i in range(len(pruned)):
        row = (pkeys[i], pvalues[i], pknown[i])
        while j < len(orig) and orig[j] != row:
            j += 1
        if j == len(orig):
            return None
        matched[i] = j
        j += 1
    return matched


def verify_prune(
    original: Datastore,
    pruned: Datastore,
    report: PruneReport,
    index: Index | None = None,
    margins: np.ndarray | None = None,
) -> Verification:
    """Check a pruning result against the original store and its report.

    Margin rules are re-derived on the original through the linear-scan
    margin route (not the threshold test pruning used). ``margins`` may
    supply precomputed original margins at cap >= ``report.k_p``.
    """
    problems: list[str] = []
    if not (original.frozen and pruned.frozen):
        return Verification(False, ["both datastores must be frozen"])
    if (original.dim, original.vocab_size) != (pruned.dim, pruned.vocab_size):
        return Verification(False, ["dimension or vocabulary differs"])
    matched = _align(original, pruned)
    if matched is None:
        return Verification(False, ["pruned store contains entries not in the original (in order)"])
    n = len(original)
    removed = np.setdiff1d(np.arange(n), matched)
    if report.n_before != n:
        problems.append(f"report n_before={report.n_before}, original has {n}")
    if report.n_after != len(pruned):
        problems.append(f"report n_after={report.n_after}, pruned has {len(pruned)}")
    if report.removed_ids is not None and not np.array_equal(report.removed_ids, removed):
        problems.append("removed ids differ from the report")
    if report.strategy != "all_known" and not report.partial:
        expected = target_count(report.requested_ratio, n)
        if removed.size != expected:
            problems.append(f"removed {removed.size} entries, expected round(r*n)={expected}")
    known = original.known
    if report.strategy in ("plac", "known_random", "all_known"):
        bad = removed[~known[removed]]
        if bad.size:
            problems.append(f"{bad.size} removed entries were unknown, e.g. id {int(bad[0])}")
    if report.strategy == "all_known" and removed.size != int(known.sum()):
        problems.append("all_known must remove every known entry")
    if report.strategy in ("plac", "reverse") and removed.size:
        k_p = report.k_p
        if margins is None:
            if index is None:
                from .index import build_index

                index = build_index(original)
            m = entry_margins(index, k_p, removed)
        else:
            m = np.minimum(np.asarray(margins)[removed], k_p)
        if report.strategy == "plac":
            low = removed[m < k_p]
            if low.size:
                problems.append(f"{low.size} removed entries had margin < k_p, e.g. id {int(low[0])}")
        else:
            high = removed[m >= k_p]
            if high.size:
                problems.append(f"{high.size} removed entries had margin >= k_p, e.g. id {int(high[0])}")
    return Verification(not problems, problems)
