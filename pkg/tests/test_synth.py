import json
import math

import numpy as np
import pytest

from knnprune.core import stats
from knnprune.correctness import build_datastore, entry_margins, margin_histogram, compute_margins
from knnprune.errors import InvalidArgument
from knnprune.formats import read_build_trace, read_eval_trace
from knnprune.index import build_index
from knnprune.synth import (
    PACKAGED_CONFIGS,
    WorldConfig,
    generate_world,
    load_world_config,
    mixed_region_world,
    parse_config_text,
)

SMALL = dict(num_classes=10, entries_per_class=60, eval_per_class=20, dim=8)


def test_config_validation():
    for bad in [
        dict(num_classes=0),
        dict(sigma=0.0),
        dict(competent_fraction=1.5),
        dict(vocab_size=30),
        dict(mixed_fraction=-0.1),
        dict(peak_mass=0.0),
        dict(seed=-1),
        dict(region_spread=-1.0),
    ]:
        with pytest.raises(InvalidArgument):
            WorldConfig(**bad)
    with pytest.raises(InvalidArgument, match="unknown"):
        WorldConfig.from_mapping({"colour": "red"})
    with pytest.raises(InvalidArgument, match="parse"):
        WorldConfig.from_mapping({"dim": "sixteen"})
    cfg = WorldConfig.from_mapping({"dim": "4", "sigma": "0.01"})
    assert (cfg.dim, cfg.sigma) == (4, 0.01)


def test_parse_config_text():
    text = "# comment\nnum-classes = 5\n\nsigma=0.03  # inline\n"
    assert parse_config_text(text) == {"num_classes": "5", "sigma": "0.03"}
    with pytest.raises(InvalidArgument, match="line 1"):
        parse_config_text("oops")


def test_packaged_configs_load():
    for name in PACKAGED_CONFIGS:
        assert isinstance(load_world_config(name), WorldConfig)
    pure = load_world_config("pure-clusters")
    assert (pure.num_classes, pure.entries_per_class, pure.dim, pure.sigma) == (30, 500, 16, 0.02)
    assert pure.competent_fraction == 0.667 and pure.mixed_fraction == 0.0
    with pytest.raises(InvalidArgument):
        load_world_config("/nonexistent/world.cfg")


def test_trace_shapes_and_law():
    cfg = WorldConfig(**SMALL, competent_fraction=0.5, seed=3)
    w = generate_world(cfg)
    assert len(w.build) == 600 and len(w.eval) == 200
    assert w.build.gold.tolist() == np.repeat(np.arange(10), 60).tolist()
    wrong = cfg.vocab_size - 1
    assert set(w.build.model_argmax.tolist()) <= set(range(10)) | {wrong}
    dist = w.eval.model_dist.astype(np.float64)
    assert np.allclose(dist.sum(1), 1.0, atol=1e-5)
    assert np.allclose(dist.max(1), 0.9)
    rest = np.sort(dist, axis=1)[:, :-1]
    assert np.allclose(rest, 0.1 / (cfg.vocab_size - 1))
    # eval model argmax follows the class's competence
    for c in w.manifest["classes"]:
        rows = slice(c["class"] * 20, (c["class"] + 1) * 20)
        am = np.argmax(dist[rows], axis=1)
        if c["role"] == "competent":
            assert (am == c["class"]).all()
        elif c["role"] == "incompetent":
            assert (am == wrong).all()


def test_keys_centered_on_unit_sphere():
    cfg = WorldConfig(**SMALL, seed=1)
    w = generate_world(cfg)
    for c in w.manifest["classes"]:
        center = np.array(c["center"])
        assert np.linalg.norm(center) == pytest.approx(1.0)
        keys = w.build.keys[c["class"] * 60 : (c["class"] + 1) * 60]
        assert np.linalg.norm(keys.mean(0) - center) < 0.02


def test_boundaries_all_known_and_none():
    s = build_datastore(generate_world(WorldConfig(**SMALL, competent_fraction=1.0)).build)
    assert stats(s).known_ratio == 1.0
    s = build_datastore(generate_world(WorldConfig(**SMALL, competent_fraction=0.0)).build)
    assert stats(s).known_ratio == 0.0
    assert entry_margins(build_index(s), 16).max() == 0


def test_determinism_byte_identical(tmp_path):
    cfg = WorldConfig(**SMALL, mixed_fraction=0.3, regions_per_class=4, region_spread=0.05, seed=9)
    a = mixed_region_world(cfg).write(tmp_path / "a")
    b = mixed_region_world(cfg).write(tmp_path / "b")
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()
    other = mixed_region_world(WorldConfig(**{**cfg.to_dict(), "seed": 10})).write(tmp_path / "c")
    assert a[0].read_bytes() != other[0].read_bytes()
    assert read_build_trace(a[0]) == mixed_region_world(cfg).build
    assert read_eval_trace(a[1]) == mixed_region_world(cfg).eval
    manifest = json.loads(a[2].read_text())
    assert manifest["n_build"] == 600 and len(manifest["classes"]) == 10


def test_mixed_fraction_zero_matches_generate_world():
    cfg = WorldConfig(**SMALL, seed=4)
    assert mixed_region_world(cfg).build == generate_world(cfg).build
    with pytest.raises(InvalidArgument):
        generate_world(WorldConfig(**SMALL, mixed_fraction=0.5))


def test_pure_clusters_have_zero_unknown_margins():
    cfg = WorldConfig(num_classes=30, entries_per_class=80, dim=16, sigma=0.02, competent_fraction=0.667, seed=2)
    store = build_datastore(generate_world(cfg).build)
    m = entry_margins(build_index(store), 64)
    assert (m[~store.known] == 0).all()
    # known entries see their whole class before any other
    assert (m[store.known] >= 64).all()


def test_fully_mixed_world_skews_known_margins_low():
    cfg = WorldConfig(num_classes=10, entries_per_class=300, dim=8, mixed_fraction=1.0, seed=5)
    store = build_datastore(mixed_region_world(cfg).build)
    s = stats(store)
    se = math.sqrt(0.25 / s.n_total)
    assert abs(s.known_ratio - 0.5) <= 3 * se
    rep = margin_histogram(compute_margins(build_index(store), 64))
    assert rep.fraction_below(4, known=True) > 0.8


@pytest.mark.parametrize("q", [0.3, 0.56, 0.9])
def test_known_ratio_matches_expectation(q):
    cfg = WorldConfig(num_classes=20, entries_per_class=200, dim=4, competent_fraction=q, seed=11)
    w = generate_world(cfg)
    n = w.manifest["n_build"]
    ratio = w.manifest["n_build_known"] / n
    assert w.manifest["expected_known_ratio"] == pytest.approx(q)
    assert abs(ratio - q) <= 3 * math.sqrt(q * (1 - q) / n)
    assert ratio == stats(build_datastore(w.build)).known_ratio


def test_slip_rate_exact_share_per_class():
    cfg = WorldConfig(**SMALL, competent_fraction=1.0, regions_per_class=20, region_spread=0.05, slip_rate=0.1)
    w = mixed_region_world(cfg)
    for c in w.manifest["classes"]:
        assert sum(not f for f in c["region_competent"]) == 2
        # balanced region assignment: 3 build records per region
        assert c["n_build_known"] == 60 - 2 * 3
