import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_store
from oracles import margin_oracle, margin_oracle_py
from knnprune.core import stats
from knnprune.correctness import (
    DEFAULT_K_BAR,
    build_datastore,
    candidate_mask,
    compute_margins,
    entry_margin,
    entry_margins,
    label_known,
    margin_at_least,
    margin_buckets,
    margin_histogram,
    query_margin,
    query_margins,
)
from knnprune.errors import InsufficientData, InvalidArgument, StateError
from knnprune.formats import BuildTrace, BuildTraceRecord
from knnprune.index import build_index


def test_label_known():
    key = np.zeros(2, dtype=np.float32)
    assert label_known(BuildTraceRecord(key, 7, 7))
    assert not label_known(BuildTraceRecord(key, 7, 3))


def test_build_datastore_labels_and_order():
    trace = BuildTrace.from_arrays(np.arange(8.0).reshape(4, 2), [1, 2, 3, 4], [1, 0, 3, 0], 5)
    store = build_datastore(trace)
    assert store.frozen
    assert store.known.tolist() == [True, False, True, False]
    assert store.values.tolist() == [1, 2, 3, 4]
    assert store.keys.tobytes() == trace.keys.tobytes()


def test_build_datastore_full_competence():
    trace = BuildTrace.from_arrays(np.eye(3), [0, 1, 2], [0, 1, 2], 3)
    assert build_datastore(trace).known.all()


def test_line_store_margin(line_store):
    idx = build_index(line_store)
    # neighbors of 0.0 in order: 1.0 known, 2.0 unknown
    assert entry_margin(idx, 0, 3) == 1
    # entry 1: neighbors 0.0 and 2.0 tie at distance 1; id 0 ranks first
    assert entry_margin(idx, 1, 3) == 1
    # entry 2 is unknown itself, its nearest known neighbor count is 2 then 10.0
    assert entry_margin(idx, 2, 3) == 3
    assert entry_margin(idx, 3, 3) == 0


def test_margin_cap_and_boundaries():
    store = make_store(np.arange(20.0), np.ones(20, bool))
    assert entry_margins(build_index(store), 8).tolist() == [8] * 20
    store = make_store([0.0, 1.0, 5.0], [True, False, True])
    assert entry_margin(build_index(store), 0, 8) == 0


def test_fewer_neighbors_than_cap():
    store = make_store([0.0, 1.0, 2.0], [True, True, True])
    idx = build_index(store)
    assert entry_margins(idx, 8).tolist() == [2, 2, 2]
    assert query_margin(idx, np.array([0.5]), 8) == 3


def test_query_margin_examples():
    store = make_store([0.0, 1.0], [True, False])
    idx = build_index(store)
    assert query_margin(idx, np.array([0.4]), 8) == 1
    store = make_store(np.arange(5.0), np.zeros(5, bool))
    assert query_margins(build_index(store), np.arange(5.0)[:, None] + 0.3, 4).tolist() == [0] * 5


def test_query_at_entry_counts_that_entry(line_store):
    idx = build_index(line_store)
    own = entry_margin(idx, 0, 3)
    at = query_margin(idx, line_store.keys[0], 3)
    assert at >= 1
    assert at == min(own + 1, 3) == 2


def test_errors(line_store):
    idx = build_index(line_store)
    with pytest.raises(InvalidArgument):
        entry_margin(idx, 4, 3)
    with pytest.raises(InvalidArgument):
        entry_margin(idx, 0, 0)
    with pytest.raises(InvalidArgument, match="dimension"):
        query_margin(idx, np.array([0.0, 1.0]), 3)
    single = build_index(make_store([1.0], [True]))
    with pytest.raises(InsufficientData):
        entry_margin(single, 0, 3)
    with pytest.raises(InsufficientData):
        margin_at_least(single, 0, 1)
    # a query over a 1-entry store is fine: nothing is excluded
    assert query_margin(single, np.array([0.0]), 3) == 1


def test_margin_at_least_thresholds():
    idx = build_index(make_store([0.0, 1.0, 1.5, 3.5], [True, True, True, False]))
    assert entry_margin(idx, 0, 8) == 2
    assert margin_at_least(idx, 0, 2)
    assert not margin_at_least(idx, 0, 4)
    store = make_store(np.arange(3.0), [True, True, True])
    # margin 2 = n - 1: threshold 4 cannot be met
    assert margin_at_least(build_index(store), 0, 2)
    assert not margin_at_least(build_index(store), 0, 4)


def test_histogram(tmp_path):
    rng = np.random.default_rng(1)
    store = make_store(rng.normal(size=(300, 3)), rng.random(300) < 0.7)
    with pytest.raises(StateError):
        margin_histogram(store)
    marked = compute_margins(build_index(store), 64)
    rep = margin_histogram(marked)
    s = stats(store)
    assert rep.n_known == s.n_known and rep.n_unknown == s.n_unknown
    with pytest.raises(StateError):
        margin_histogram(marked, 32)
    assert rep.buckets == [(0, 1), (1, 2), (2, 4), (4, 8), (8, 16), (16, 32), (32, 64), (64, 65)]
    m, known = marked.margins, marked.known
    for (lo, hi), kc, uc in zip(rep.buckets, rep.known_counts, rep.unknown_counts):
        sel = (m >= lo) & (m < hi)
        assert kc == int((sel & known).sum()) and uc == int((sel & ~known).sum())
    assert rep.fraction_below(4, known=False) == pytest.approx(float((m[~known] < 4).mean()))
    path = tmp_path / "h.csv"
    rep.write_csv(path)
    rows = list(csv.DictReader(open(path)))
    assert list(rows[0]) == ["bucket_lo", "bucket_hi", "known_count", "unknown_count"]
    assert sum(int(r["known_count"]) + int(r["unknown_count"]) for r in rows) == 300


def test_histogram_all_zero():
    store = make_store(np.arange(6.0), np.zeros(6, bool))
    rep = margin_histogram(compute_margins(build_index(store), 8))
    assert rep.unknown_counts[0] == 6 and sum(rep.unknown_counts[1:]) == 0


def test_bucket_layout():
    assert margin_buckets(1) == [(0, 1), (1, 2)]
    assert margin_buckets(3) == [(0, 1), (1, 2), (2, 3), (3, 4)]
    b = margin_buckets(DEFAULT_K_BAR)
    assert b[-2] == (1024, 2048) and b[-1] == (2048, 2049)
    b = margin_buckets(100)
    assert b[-2:] == [(64, 100), (100, 101)]


@st.composite
def labeled_store(draw, max_n=40):
    n = draw(st.integers(2, max_n))
    dim = draw(st.integers(1, 4))
    rng = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    keys = rng.integers(-2, 3, size=(n, dim)).astype(np.float32)
    known = rng.random(n) < draw(st.sampled_from([0.3, 0.8, 0.95, 1.0]))
    return keys, known


@settings(max_examples=120, deadline=None)
@given(labeled_store(), st.sampled_from([1, 2, 3, 5, 8, 64]))
def test_entry_margins_match_oracles(kk, k_bar):
    keys, known = kk
    idx = build_index(make_store(keys, known))
    got = entry_margins(idx, k_bar)
    for e in range(keys.shape[0]):
        assert got[e] == margin_oracle(keys, known, keys[e], k_bar, exclude=e)
        assert got[e] == margin_oracle_py(keys, known, keys[e], k_bar, exclude=e)


@settings(max_examples=120, deadline=None)
@given(labeled_store(), st.integers(1, 10))
def test_threshold_route_agrees(kk, k_p):
    keys, known = kk
    idx = build_index(make_store(keys, known))
    mask = candidate_mask(idx, k_p)
    assert mask.tolist() == (entry_margins(idx, k_p) == k_p).tolist()
    assert mask.tolist() == (entry_margins(idx, 64) >= k_p).tolist()


@settings(max_examples=80, deadline=None)
@given(labeled_store(), st.sampled_from([(1, 4), (2, 8), (4, 64), (8, 9)]))
def test_cap_monotonicity(kk, caps):
    lo, hi = caps
    keys, known = kk
    idx = build_index(make_store(keys, known))
    assert entry_margins(idx, lo).tolist() == np.minimum(entry_margins(idx, hi), lo).tolist()


@settings(max_examples=80, deadline=None)
@given(labeled_store(max_n=25), st.data())
def test_leading_known_characterization(kk, data):
    keys, known = kk
    idx = build_index(make_store(keys, known))
    margins = entry_margins(idx, 64)
    e = data.draw(st.integers(0, keys.shape[0] - 1))
    order = np.lexsort((np.arange(len(keys)), ((keys - keys[e]).astype(np.float64) ** 2).sum(1)))
    order = order[order != e]
    for m in range(0, len(order) + 1):
        assert (margins[e] >= m) == bool(known[order[:m]].all())


@settings(max_examples=60, deadline=None)
@given(labeled_store(max_n=30), st.data())
def test_deleting_unknown_never_lowers_margins(kk, data):
    keys, known = kk
    if known.all():
        return
    victim = data.draw(st.sampled_from(np.flatnonzero(~known).tolist()))
    if keys.shape[0] < 3:
        return
    store = make_store(keys, known)
    before = entry_margins(build_index(store), 64)
    keep = np.flatnonzero(np.arange(keys.shape[0]) != victim)
    after = entry_margins(build_index(store.subset(keep)), 64)
    assert (after >= before[keep]).all()


@settings(max_examples=60, deadline=None)
@given(labeled_store(), st.sampled_from([1, 4, 8, 64]), st.data())
def test_query_margins_match_oracle(kk, k_bar, data):
    keys, known = kk
    idx = build_index(make_store(keys, known))
    rng = np.random.default_rng(data.draw(st.integers(0, 1000)))
    qs = rng.integers(-2, 3, size=(5, keys.shape[1])).astype(np.float32) / 2
    got = query_margins(idx, qs, k_bar)
    assert got.tolist() == [margin_oracle(keys, known, q, k_bar) for q in qs]
