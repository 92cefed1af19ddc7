"""kNN-augmented token prediction and per-position evaluation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .core import Datastore
from .correctness import DEFAULT_K_BAR, bucket_of, margin_buckets, query_margins
from .errors import InvalidArgument
from .index import Index, NeighborSet

_SUM_TOL = 1e-5


@dataclass(frozen=True)
class KnnParams:
    k: int = 8
    temperature: float = 10.0
    lam: float = 0.7

    def __post_init__(self) -> None:
        if int(self.k) != self.k or self.k < 1:
            raise InvalidArgument(f"k must be a positive integer, got {self.k!r}")
        if not (self.temperature > 0 and math.isfinite(self.temperature)):
            raise InvalidArgument(f"temperature must be positive, got {self.temperature!r}")
        if not 0.0 <= self.lam <= 1.0:
            raise InvalidArgument(f"lambda must lie in [0, 1], got {self.lam!r}")

    def to_dict(self) -> dict:
        return {"k": self.k, "temperature": self.temperature, "lambda": self.lam}


def _weights(distances: np.ndarray, temperature: float) -> np.ndarray:
    # Shifting by the minimum distance cancels in the normalization.
    d = np.asarray(distances, dtype=np.float64)
    return np.exp(-(d - d.min()) / temperature)


def knn_distribution(neighbors: NeighborSet, temperature: float, vocab_size: int) -> np.ndarray:
    """Distance-weighted distribution over neighbor values."""
    if len(neighbors) == 0:
        raise InvalidArgument("knn_distribution needs at least one neighbor")
    if not (temperature > 0 and math.isfinite(temperature)):
        raise InvalidArgument(f"temperature must be positive, got {temperature!r}")
    values = np.asarray(neighbors.values, dtype=np.int64)
    if values.max() >= vocab_size or values.min() < 0:
        raise InvalidArgument("neighbor value outside the vocabulary")
    w = _weights(neighbors.distances, temperature)
    p = np.bincount(values, weights=w, minlength=vocab_size)
    return p / p.sum()


def interpolate(p_knn, p_model, lam: float) -> np.ndarray:
    """``lam * p_knn + (1 - lam) * p_model``."""
    p_knn = np.asarray(p_knn, dtype=np.float64)
    p_model = np.asarray(p_model, dtype=np.float64)
    if p_knn.ndim != 1 or p_knn.shape != p_model.shape:
        raise InvalidArgument(f"distribution shapes differ: {p_knn.shape} vs {p_model.shape}")
    if not 0.0 <= lam <= 1.0:
        raise InvalidArgument(f"lambda must lie in [0, 1], got {lam!r}")
    for name, p in (("p_knn", p_knn), ("p_model", p_model)):
        if abs(p.sum() - 1.0) > _SUM_TOL or (p < 0).any():
            raise InvalidArgument(f"{name} is not a probability vector")
    return lam * p_knn + (1.0 - lam) * p_model


class Prediction(NamedTuple):
    token: int
    margin: int
    fallback: bool


def _check_record(store: Datastore, key, model_dist) -> None:
    if np.shape(key) != (store.dim,):
        raise InvalidArgument(f"record key must have shape ({store.dim},)")
    if np.shape(model_dist) != (store.vocab_size,):
        raise InvalidArgument(f"model_dist must have length {store.vocab_size}")


def predict(
    index: Index | None,
    store: Datastore,
    record,
    params: KnnParams,
    k_bar: int = DEFAULT_K_BAR,
) -> Prediction:
    """Argmax of the interpolated distribution and the query's margin.

    ``index`` may be None for an empty store; the model argmax is then
    returned with ``fallback=True`` and margin 0.
    """
    _check_record(store, record.key, record.model_dist)
    p_model = np.asarray(record.model_dist, dtype=np.float64)
    if index is None or len(store) == 0:
        return Prediction(int(np.argmax(p_model)), 0, True)
    found = index.search(record.key, params.k)
    ids, dists = found[0]
    nb = NeighborSet(ids, dists, store.values[ids].astype(np.int64), store.known[ids])
    p = interpolate(knn_distribution(nb, params.temperature, store.vocab_size), p_model, params.lam)
    margin = int(query_margins(index, record.key, k_bar)[0])
    return Prediction(int(np.argmax(p)), margin, False)


@dataclass
class EvalSummary:
    params: KnnParams
    k_bar: int
    n_positions: int
    accuracy_overall: float
    accuracy_model_only: float
    accuracy_knn_only: float
    accuracy_by_margin: list[dict]
    n_fallback: int = 0
    margins: np.ndarray = field(default=None, repr=False)
    correct: np.ndarray = field(default=None, repr=False)

    def accuracy_in(self, lo: int, hi: int | None = None) -> tuple[int, float]:
        """(count, accuracy) of positions with ``lo <= margin < hi``."""
        sel = self.margins >= lo
        if hi is not None:
            sel &= self.margins < hi
        n = int(sel.sum())
        return n, (float(self.correct[sel].mean()) if n else float("nan"))

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "k_bar": self.k_bar,
            "n_positions": self.n_positions,
            "n_fallback": self.n_fallback,
            "accuracy_overall": self.accuracy_overall,
            "accuracy_model_only": self.accuracy_model_only,
            "accuracy_knn_only": self.accuracy_knn_only,
            "accuracy_by_margin": self.accuracy_by_margin,
        }

    def write_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            writer = csv.DictWriter(
                fh, ["margin_lo", "margin_hi", "count", "accuracy"], lineterminator="\n"
            )
            writer.writeheader()
            writer.writerows(self.accuracy_by_margin)


def evaluate(
    index: Index | None,
    store: Datastore,
    eval_trace,
    params: KnnParams,
    k_bar: int = DEFAULT_K_BAR,
    with_margins: bool = True,
) -> EvalSummary:
    """Predict every eval position and aggregate accuracies.

    ``accuracy_by_margin`` is computed under ``params.lam``; model-only and
    kNN-only accuracies are reported alongside. Empty buckets are omitted.
    ``with_margins=False`` skips the query-margin pass and leaves
    ``accuracy_by_margin`` empty.
    """
    header = eval_trace.header
    if header.vocab_size != store.vocab_size:
        raise InvalidArgument(
            f"vocab mismatch: trace has {header.vocab_size}, datastore has {store.vocab_size}"
        )
    if header.dim != store.dim:
        raise InvalidArgument(f"dim mismatch: trace has {header.dim}, datastore has {store.dim}")
    n = len(eval_trace)
    gold = np.asarray(eval_trace.gold, dtype=np.int64)
    p_model = np.asarray(eval_trace.model_dist, dtype=np.float64)
    pred_model = np.argmax(p_model, axis=1)
    empty = index is None or len(store) == 0
    if empty:
        pred = pred_model.copy()
        pred_knn = pred_model.copy()
        margins = np.zeros(n, dtype=np.int64)
    else:
        found = index.search(eval_trace.keys, params.k) if n else []
        if with_margins and n:
            margins = query_margins(index, eval_trace.keys, k_bar)
        else:
            margins = np.zeros(n, dtype=np.int64)
        pred = np.empty(n, dtype=np.int64)
        pred_knn = np.empty(n, dtype=np.int64)
        values = store.values.astype(np.int64)
        for i, (ids, dists) in enumerate(found):
            w = _weights(dists, params.temperature)
            p_knn = np.bincount(values[ids], weights=w, minlength=store.vocab_size)
            p_knn /= p_knn.sum()
            pred_knn[i] = np.argmax(p_knn)
            pred[i] = np.argmax(params.lam * p_knn + (1.0 - params.lam) * p_model[i])
    correct = pred == gold
    rows = []
    pos = bucket_of(margins, k_bar)
    for b, (lo, hi) in enumerate(margin_buckets(k_bar) if with_margins else []):
        sel = pos == b
        count = int(sel.sum())
        if count:
            rows.append(
                {
                    "margin_lo": lo,
                    "margin_hi": hi,
                    "count": count,
                    "accuracy": int(correct[sel].sum()) / count,
                }
            )

    def acc(hits: np.ndarray) -> float:
        return int(hits.sum()) / n if n else 0.0

    return EvalSummary(
        params=params,
        k_bar=k_bar,
        n_positions=n,
        accuracy_overall=acc(correct),
        accuracy_model_only=acc(pred_model == gold),
        accuracy_knn_only=acc(pred_knn == gold),
        accuracy_by_margin=rows,
        n_fallback=n if empty else 0,
        margins=margins if with_margins else None,
        correct=correct,
    )
