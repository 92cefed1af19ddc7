"""
Pruning a datastore and measuring what it costs
===============================================

High-margin known entries are redundant: the model already gets their
neighborhood right. Dropping them should barely move accuracy, while
dropping low-margin entries should hurt.
"""

from knnprune.correctness import build_datastore
from knnprune.index import build_index
from knnprune.inference import KnnParams, evaluate
from knnprune.pruning import PruneSpec, eligible_pool, prune, verify_prune
from knnprune.synth import WorldConfig, mixed_region_world

cfg = WorldConfig(
    num_classes=16, entries_per_class=200, eval_per_class=40, dim=8,
    competent_fraction=1.0, mixed_fraction=0.25, mixed_zones=1,
    regions_per_class=40, region_spread=0.05, slip_rate=0.025,
)
world = mixed_region_world(cfg)
store = build_datastore(world.build)
index = build_index(store)
params = KnnParams(k=8, temperature=10.0, lam=0.7)


def accuracy(s):
    return evaluate(build_index(s), s, world.eval, params, with_margins=False).accuracy_overall


full = accuracy(store)
print(f"full datastore: {len(store)} entries, accuracy {full:.4f}")

k_p = 8
pool = eligible_pool(store, index, PruneSpec("plac", 0.1, k_p))
safe = len(pool) / len(store)
print(f"entries with margin >= {k_p} that are known: {safe:.1%}")

for spec in [
    PruneSpec("plac", safe, k_p, seed=0),
    PruneSpec("random", safe, seed=0),
    PruneSpec("plac", 0.1, k_p, seed=0),
    PruneSpec("reverse", 0.1, k_p, seed=0),
    PruneSpec("all_known"),
]:
    pruned, rep = prune(store, index, spec)
    ok = verify_prune(store, pruned, rep, index)
    print(f"{spec.strategy:>12} removed {rep.achieved_ratio:6.1%}  "
          f"accuracy {accuracy(pruned):.4f}  verified={bool(ok)}")
