"""Independent brute-force references used by the tests."""

import numpy as np


def sq_distances(keys, query):
    """Squared L2 in float64, accumulated coordinate by coordinate."""
    keys = np.asarray(keys, dtype=np.float32).astype(np.float64)
    q = np.asarray(query, dtype=np.float32).astype(np.float64)
    d = np.zeros(keys.shape[0])
    for j in range(keys.shape[1]):
        t = keys[:, j] - q[j]
        d = d + t * t
    return d


def sorted_ids(keys, query, exclude=None):
    """All entry ids ordered by (distance, id), ``exclude`` removed."""
    d = sq_distances(keys, query)
    ids = np.arange(d.shape[0])
    order = np.lexsort((ids, d))
    if exclude is not None:
        order = order[order != exclude]
    return order, d


def knn_oracle(keys, query, k, exclude=None):
    order, d = sorted_ids(keys, query, exclude)
    top = order[:k]
    return top, d[top]


def margin_oracle(keys, known, query, k_bar, exclude=None):
    """Count leading known neighbors in sorted order, capped at ``k_bar``."""
    order, _ = sorted_ids(keys, query, exclude)
    m = 0
    for i in order[:k_bar]:
        if not known[i]:
            break
        m += 1
    return m


def margin_oracle_py(keys, known, query, k_bar, exclude=None):
    """Same definition in plain Python, no numpy sorting."""
    rows = []
    for i, key in enumerate(keys):
        if i == exclude:
            continue
        d = 0.0
        for a, b in zip(key, query):
            t = float(np.float32(a)) - float(np.float32(b))
            d += t * t
        rows.append((d, i))
    rows.sort()
    m = 0
    for _, i in rows[:k_bar]:
        if not known[i]:
            break
        m += 1
    return m


def knn_distribution_oracle(values, distances, temperature, vocab_size):
    """Direct unshifted evaluation of the distance-weighted distribution."""
    p = [0.0] * vocab_size
    for v, d in zip(values, distances):
        p[int(v)] += float(np.exp(-d / temperature))
    total = sum(p)
    return np.array([x / total for x in p])
