"""
When retrieval overrules the model
==================================

The model puts 90% of its mass on a wrong token. Every retrieved entry is
one the model got wrong at build time, yet each stores the right token.
"""

import numpy as np

from knnprune.core import Datastore
from knnprune.formats import EvalTraceRecord
from knnprune.index import build_index, knn
from knnprune.inference import KnnParams, interpolate, knn_distribution, predict

rng = np.random.default_rng(0)
vocab, gold, wrong = 50, 17, 49

center = rng.normal(size=8)
near = center + 0.01 * rng.normal(size=(8, 8))
far = center + 5 + rng.normal(size=(30, 8))
store = Datastore.from_arrays(
    np.vstack([near, far]),
    [gold] * 8 + list(rng.integers(0, 40, 30)),
    [False] * 8 + [True] * 30,
    vocab_size=vocab,
)
index = build_index(store)

p_model = np.full(vocab, 0.1 / (vocab - 1))
p_model[wrong] = 0.9
record = EvalTraceRecord(center.astype(np.float32), gold, p_model)

neighbors = knn(index, record.key, 8)
p_knn = knn_distribution(neighbors, temperature=10.0, vocab_size=vocab)
mixed = interpolate(p_knn, p_model, lam=0.7)
print("model says", int(np.argmax(p_model)), "| retrieval says", int(np.argmax(p_knn)),
      "| mixture says", int(np.argmax(mixed)))

pred = predict(index, store, record, KnnParams(k=8, temperature=10.0, lam=0.7))
print(pred)  # margin 0: the nearest entry is already unknown
