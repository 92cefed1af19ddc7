"""
Building a datastore and searching it
=====================================

A datastore maps hidden-state keys to the gold tokens that followed them.
"""

import numpy as np

from knnprune.core import new_datastore, stats
from knnprune.index import build_index, knn

# entries are appended one at a time, then frozen before anything reads them
store = new_datastore(dim=1, vocab_size=16)
for key, token, known in [(0.0, 0, True), (1.0, 1, True), (2.0, 2, False), (10.0, 3, True)]:
    store.append(np.array([key]), token, known)
store.freeze()
print(stats(store))

index = build_index(store)

# squared L2, ties broken by entry id
for nb in knn(index, np.array([0.1]), k=3):
    print(f"id {nb.entry_id}  d={nb.distance:.4f}  token {nb.value}  known={nb.known}")

# an entry never counts as its own neighbor when excluded
print(knn(index, store.keys[2], k=1, exclude=2).ids)
