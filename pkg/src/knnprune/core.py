"""Datastore of (key, value) entries with known flags and optional margins.

Keys are held columnar as one ``(n, dim)`` float32 block. Entry ids are the
ingestion order and are what every downstream tie-break refers to.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyDatastore, InvalidArgument, StateError

_INITIAL_CAPACITY = 64


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def check_key(key, dim: int) -> np.ndarray:
    """Return ``key`` as a float32 vector after checking length and finiteness."""
    arr = np.asarray(key)
    if arr.ndim != 1 or arr.shape[0] != dim:
        raise InvalidArgument(f"key must have shape ({dim},), got {arr.shape}")
    arr = arr.astype(np.float32, copy=False)
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument("key contains NaN or Inf")
    return arr


@dataclass(frozen=True)
class DatastoreStats:
    n_total: int
    n_known: int
    n_unknown: int
    known_ratio: float

    def to_dict(self) -> dict:
        return {
            "n_total": self.n_total,
            "n_known": self.n_known,
            "n_unknown": self.n_unknown,
            "known_ratio": self.known_ratio,
        }


class Datastore:
    """Columnar key-value memory.

    An unfrozen store accepts :meth:`append`; once frozen it is immutable and
    every transformation (attaching margins, pruning) returns a new store.
    """

    def __init__(self, dim: int, vocab_size: int) -> None:
        if int(dim) != dim or dim < 1:
            raise InvalidArgument(f"dim must be a positive integer, got {dim!r}")
        if int(vocab_size) != vocab_size or vocab_size < 2:
            raise InvalidArgument(f"vocab_size must be >= 2, got {vocab_size!r}")
        self._dim = int(dim)
        self._vocab_size = int(vocab_size)
        self._n = 0
        self._keys = np.empty((_INITIAL_CAPACITY, self._dim), dtype=np.float32)
        self._values = np.empty(_INITIAL_CAPACITY, dtype=np.uint32)
        self._known = np.empty(_INITIAL_CAPACITY, dtype=bool)
        self._margins: np.ndarray | None = None
        self._margin_cap: int | None = None
        self._frozen = False

    @classmethod
    def from_arrays(
        cls,
        keys,
        values,
        known,
        *,
        vocab_size: int,
        margins=None,
        margin_cap: int | None = None,
    ) -> "Datastore":
        """Build a frozen store directly from column arrays (copied)."""
        keys = np.asarray(keys)
        if keys.ndim != 2:
            raise InvalidArgument("keys must be a 2-D array")
        store = cls(keys.shape[1], vocab_size)
        keys = np.ascontiguousarray(keys, dtype=np.float32)
        if not np.all(np.isfinite(keys)):
            raise InvalidArgument("keys contain NaN or Inf")
        values = np.asarray(values)
        known = np.asarray(known)
        n = keys.shape[0]
        if values.shape != (n,) or known.shape != (n,):
            raise InvalidArgument("values and known must have one element per key")
        if n and (values.min() < 0 or values.max() >= vocab_size):
            raise InvalidArgument(f"values must lie in [0, {vocab_size})")
        store._keys = keys.copy()
        store._values = values.astype(np.uint32)
        store._known = known.astype(bool)
        store._n = n
        store.freeze()
        if margins is not None:
            if margin_cap is None:
                raise InvalidArgument("margin_cap is required when margins are given")
            store._set_margins(margins, margin_cap)
        return store

    # -- basic properties -------------------------------------------------

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def vocab_size(self) -> int:
        return self._vocab_size

    @property
    def frozen(self) -> bool:
        return self._frozen

    def __len__(self) -> int:
        return self._n

    @property
    def keys(self) -> np.ndarray:
        return self._keys[: self._n]

    @property
    def values(self) -> np.ndarray:
        return self._values[: self._n]

    @property
    def known(self) -> np.ndarray:
        return self._known[: self._n]

    @property
    def margins(self) -> np.ndarray | None:
        return self._margins

    @property
    def margin_cap(self) -> int | None:
        return self._margin_cap

    @property
    def has_margins(self) -> bool:
        return self._margins is not None

    # -- mutation ---------------------------------------------------------

    def append(self, key, value: int, known: bool) -> int:
        """Append one entry and return its id."""
        if self._frozen:
            raise StateError("cannot append to a frozen datastore")
        key = check_key(key, self._dim)
        if int(value) != value or not 0 <= value < self._vocab_size:
            raise InvalidArgument(f"value must be an integer in [0, {self._vocab_size}), got {value!r}")
        if self._n == self._keys.shape[0]:
            cap = 2 * self._keys.shape[0]
            self._keys = np.resize(self._keys, (cap, self._dim))
            self._values = np.resize(self._values, cap)
            self._known = np.resize(self._known, cap)
        entry_id = self._n
        self._keys[entry_id] = key
        self._values[entry_id] = value
        self._known[entry_id] = bool(known)
        self._n += 1
        return entry_id

    def freeze(self) -> "Datastore":
        """Make the store immutable. Calling it again is a no-op."""
        if not self._frozen:
            self._keys = _readonly(np.ascontiguousarray(self._keys[: self._n]))
            self._values = _readonly(self._values[: self._n].copy())
            self._known = _readonly(self._known[: self._n].copy())
            self._frozen = True
        return self

    def _set_margins(self, margins, cap: int) -> None:
        margins = np.asarray(margins)
        if margins.shape != (self._n,):
            raise InvalidArgument("margins must have one element per entry")
        if int(cap) != cap or cap < 1:
            raise InvalidArgument("margin cap must be a positive integer")
        if self._n and (margins.min() < 0 or margins.max() > cap):
            raise InvalidArgument(f"margins must lie in [0, {cap}]")
        self._margins = _readonly(margins.astype(np.uint32))
        self._margin_cap = int(cap)

    # -- derived stores ---------------------------------------------------

    def _require_frozen(self) -> None:
        if not self._frozen:
            raise StateError("datastore must be frozen")

    def with_margins(self, margins, margin_cap: int) -> "Datastore":
        """Return a copy of this frozen store carrying the given margin column."""
        self._require_frozen()
        if self._margins is not None:
            raise StateError("margins are already attached to this datastore")
        out = Datastore.__new__(Datastore)
        out.__dict__.update(self.__dict__)
        out._set_margins(margins, margin_cap)
        return out

    def subset(self, ids) -> "Datastore":
        """Return a new frozen store holding ``ids`` (ascending) without margins."""
        self._require_frozen()
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (np.any(np.diff(ids) <= 0) or ids[0] < 0 or ids[-1] >= self._n):
            raise InvalidArgument("subset ids must be strictly increasing and in range")
        return Datastore.from_arrays(
            self.keys[ids].reshape(-1, self._dim),
            self.values[ids],
            self.known[ids],
            vocab_size=self._vocab_size,
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Datastore):
            return NotImplemented
        if (self.dim, self.vocab_size, len(self), self.margin_cap) != (
            other.dim,
            other.vocab_size,
            len(other),
            other.margin_cap,
        ):
            return False
        if (self._margins is None) != (other._margins is None):
            return False
        same = (
            self.keys.tobytes() == other.keys.tobytes()
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.known, other.known)
        )
        if same and self._margins is not None:
            same = np.array_equal(self._margins, other._margins)
        return bool(same)

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        state = "frozen" if self._frozen else "open"
        return f"Datastore(n={self._n}, dim={self._dim}, vocab_size={self._vocab_size}, {state})"


def new_datastore(dim: int, vocab_size: int) -> Datastore:
    """Create an empty, unfrozen datastore."""
    return Datastore(dim, vocab_size)


def stats(store: Datastore) -> DatastoreStats:
    """Known/unknown counts of a non-empty store."""
    n = len(store)
    if n == 0:
        raise EmptyDatastore("cannot compute stats of an empty datastore")
    n_known = int(np.count_nonzero(store.known))
    return DatastoreStats(n, n_known, n - n_known, n_known / n)
