"""Deterministic synthetic stand-ins for a model's teacher-forcing traces.

Each token class owns a center on the unit sphere. Records are drawn around
*regions*: a class has ``regions_per_class`` region centers scattered around
its class center, and a record picks one region uniformly before adding
isotropic Gaussian noise of scale ``sigma``.

Whether the simulated model predicts the gold token is decided per
competence unit: the region when ``regions_per_class > 1``, otherwise the
individual record. Each class has a competence probability:

* pure competent classes: ``1 - slip_rate``
* pure incompetent classes: 0
* one "partial" class absorbing the fractional part of
  ``competent_fraction * n_pure`` so the expected known ratio is exact
* mixed classes: ``mixed_competence``

Mixed classes can be moved into ``mixed_zones`` shared zones, where regions
of different classes interleave and retrieval has to discriminate between
neighboring tokens.

When the model fails it predicts the shared wrong token ``vocab_size - 1``.
Eval records carry a full model distribution: ``peak_mass`` on the predicted
token and the remainder spread evenly over every other token.

Randomness comes from ``numpy.random.default_rng(seed)`` (PCG64); the draw
order below is fixed, so a config always yields byte-identical traces.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import InvalidArgument
from .formats import (
    BuildTrace,
    EvalTrace,
    write_build_trace,
    write_eval_trace,
)


@dataclass(frozen=True)
class WorldConfig:
    num_classes: int = 30
    entries_per_class: int = 500
    dim: int = 16
    sigma: float = 0.02
    competent_fraction: float = 0.667
    vocab_size: int = 64
    eval_per_class: int = 100
    seed: int = 0
    mixed_fraction: float = 0.0
    mixed_competence: float = 0.5
    mixed_zones: int = 0
    regions_per_class: int = 1
    region_spread: float = 0.0
    slip_rate: float = 0.0
    peak_mass: float = 0.9

    def __post_init__(self) -> None:
        problems = []
        for name in ("num_classes", "entries_per_class", "dim", "eval_per_class", "regions_per_class"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                problems.append(f"{name} must be a positive integer")
        if not isinstance(self.mixed_zones, (int, np.integer)) or self.mixed_zones < 0:
            problems.append("mixed_zones must be a non-negative integer")
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            problems.append("sigma must be positive")
        if not (self.region_spread >= 0 and math.isfinite(self.region_spread)):
            problems.append("region_spread must be non-negative")
        for name in ("competent_fraction", "mixed_fraction", "mixed_competence", "slip_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                problems.append(f"{name} must lie in [0, 1]")
        if not 0.0 < self.peak_mass <= 1.0:
            problems.append("peak_mass must lie in (0, 1]")
        if isinstance(self.num_classes, int) and self.vocab_size <= self.num_classes:
            problems.append("vocab_size must exceed num_classes")
        if not 0 <= int(self.seed) < 2**64:
            problems.append("seed must be a 64-bit unsigned integer")
        if problems:
            raise InvalidArgument("invalid world config: " + "; ".join(problems))

    @classmethod
    def from_mapping(cls, mapping: dict) -> "WorldConfig":
        """Build a config from string or native values, rejecting unknown keys."""
        types = {f.name: f.type for f in fields(cls)}
        unknown = set(mapping) - set(types)
        if unknown:
            raise InvalidArgument(f"unknown world config keys: {sorted(unknown)}")
        kwargs = {}
        for name, raw in mapping.items():
            conv = int if types[name] in ("int", int) else float
            try:
                kwargs[name] = conv(raw)
            except (TypeError, ValueError):
                raise InvalidArgument(f"{name}: cannot parse {raw!r}") from None
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class World:
    """Generated traces plus the ground truth needed by downstream checks."""

    config: WorldConfig
    build: BuildTrace
    eval: EvalTrace
    manifest: dict

    def write(self, prefix) -> tuple[Path, Path, Path]:
        """Write ``<prefix>.btrc``, ``<prefix>.etrc`` and ``<prefix>.manifest.json``."""
        prefix = Path(prefix)
        paths = (
            prefix.with_name(prefix.name + ".btrc"),
            prefix.with_name(prefix.name + ".etrc"),
            prefix.with_name(prefix.name + ".manifest.json"),
        )
        write_build_trace(paths[0], self.build.header, self.build)
        write_eval_trace(paths[1], self.eval.header, self.eval)
        paths[2].write_text(json.dumps(self.manifest, indent=2, sort_keys=True) + "\n")
        return paths


def _unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    v = rng.standard_normal((n, dim))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return v / norms


def _class_roles(cfg: WorldConfig, rng: np.random.Generator) -> tuple[list[str], np.ndarray]:
    order = rng.permutation(cfg.num_classes)
    n_mixed = int(round(cfg.mixed_fraction * cfg.num_classes))
    roles = ["incompetent"] * cfg.num_classes
    prob = np.zeros(cfg.num_classes)
    for c in order[:n_mixed]:
        roles[c] = "mixed"
        prob[c] = cfg.mixed_competence
    pure = order[n_mixed:]
    share = cfg.competent_fraction * len(pure)
    n_full = int(math.floor(share + 1e-12))
    frac = share - n_full
    for c in pure[:n_full]:
        roles[c] = "competent"
        prob[c] = 1.0 - cfg.slip_rate
    if frac > 1e-12 and n_full < len(pure):
        c = pure[n_full]
        roles[c] = "partial"
        prob[c] = frac * (1.0 - cfg.slip_rate)
    return roles, prob


def _draw_flags(
    rng: np.random.Generator, p: float, size: int, slips: float = 0.0
) -> np.ndarray:
    if slips > 0.0:
        # Competent units: an exact share, not a Bernoulli count, fails.
        flags = np.ones(size, dtype=bool)
        flags[rng.choice(size, int(round(slips * size)), replace=False)] = False
        return flags
    if p >= 1.0:
        return np.ones(size, dtype=bool)
    if p <= 0.0:
        return np.zeros(size, dtype=bool)
    return rng.random(size) < p


def mixed_region_world(cfg: WorldConfig) -> World:
    """Generate build/eval traces and a manifest for ``cfg``."""
    rng = np.random.default_rng(int(cfg.seed))
    C, R, dim = cfg.num_classes, cfg.regions_per_class, cfg.dim
    wrong = cfg.vocab_size - 1

    centers = _unit_rows(rng, C, dim)
    roles, prob = _class_roles(cfg, rng)
    zone_of = np.full(C, -1)
    if cfg.mixed_zones:
        zones = _unit_rows(rng, cfg.mixed_zones, dim)
        mixed = [c for c in range(C) if roles[c] == "mixed"]
        for i, c in enumerate(mixed):
            zone_of[c] = i % cfg.mixed_zones
            centers[c] = zones[zone_of[c]]

    slip_of = np.where([r == "competent" for r in roles], cfg.slip_rate, 0.0)
    region_centers = centers[:, None, :] + cfg.region_spread * rng.standard_normal((C, R, dim))
    per_region = R > 1
    region_flags = np.zeros((C, R), dtype=bool)
    if per_region:
        for c in range(C):
            region_flags[c] = _draw_flags(rng, prob[c], R, slip_of[c])

    def draw(c: int, n: int, balanced: bool) -> tuple[np.ndarray, np.ndarray]:
        if balanced:
            regions = rng.permutation(np.arange(n) % R)
        else:
            regions = rng.integers(0, R, size=n)
        keys = region_centers[c, regions] + cfg.sigma * rng.standard_normal((n, dim))
        ok = region_flags[c, regions] if per_region else _draw_flags(rng, prob[c], n, slip_of[c])
        return keys, ok

    n_c, e_c = cfg.entries_per_class, cfg.eval_per_class
    b_keys = np.empty((C * n_c, dim), dtype=np.float32)
    b_ok = np.empty(C * n_c, dtype=bool)
    e_keys = np.empty((C * e_c, dim), dtype=np.float32)
    e_ok = np.empty(C * e_c, dtype=bool)
    for c in range(C):
        keys, ok = draw(c, n_c, True)
        b_keys[c * n_c : (c + 1) * n_c] = keys
        b_ok[c * n_c : (c + 1) * n_c] = ok
    for c in range(C):
        keys, ok = draw(c, e_c, False)
        e_keys[c * e_c : (c + 1) * e_c] = keys
        e_ok[c * e_c : (c + 1) * e_c] = ok

    b_gold = np.repeat(np.arange(C, dtype=np.uint32), n_c)
    e_gold = np.repeat(np.arange(C, dtype=np.uint32), e_c)
    b_argmax = np.where(b_ok, b_gold, wrong).astype(np.uint32)
    e_argmax = np.where(e_ok, e_gold, wrong)

    V = cfg.vocab_size
    rest = (1.0 - cfg.peak_mass) / (V - 1)
    dist = np.full((C * e_c, V), rest, dtype=np.float32)
    dist[np.arange(C * e_c), e_argmax] = cfg.peak_mass

    build = BuildTrace.from_arrays(b_keys, b_gold, b_argmax, V)
    evalt = EvalTrace.from_arrays(e_keys, e_gold, dist)

    known_per_class = b_ok.reshape(C, n_c).sum(axis=1)
    eval_ok_per_class = e_ok.reshape(C, e_c).sum(axis=1)
    manifest = {
        "config": cfg.to_dict(),
        "wrong_token": wrong,
        "classes": [
            {
                "class": c,
                "gold_token": c,
                "role": roles[c],
                "competence_probability": float(prob[c]),
                "zone": int(zone_of[c]),
                "center": [float(x) for x in centers[c]],
                "region_competent": [bool(f) for f in region_flags[c]] if per_region else None,
                "n_build": n_c,
                "n_build_known": int(known_per_class[c]),
                "n_eval": e_c,
                "n_eval_model_correct": int(eval_ok_per_class[c]),
            }
            for c in range(C)
        ],
        "n_build": int(C * n_c),
        "n_build_known": int(b_ok.sum()),
        "expected_known_ratio": float(prob.mean()),
        "n_eval": int(C * e_c),
        "n_eval_model_correct": int(e_ok.sum()),
    }
    return World(cfg, build, evalt, manifest)


def generate_world(cfg: WorldConfig) -> World:
    """Pure-cluster world: every class is competent, incompetent or partial.

    ``cfg.mixed_fraction`` must be 0; use :func:`mixed_region_world` otherwise.
    """
    if cfg.mixed_fraction != 0:
        raise InvalidArgument("generate_world requires mixed_fraction = 0")
    return mixed_region_world(cfg)


def parse_config_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgument(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise InvalidArgument(f"line {lineno}: empty key")
        out[key.replace("-", "_")] = value
    return out


PACKAGED_CONFIGS = ("law-analog", "pure-clusters")


def packaged_config_path(name: str) -> Path:
    if name not in PACKAGED_CONFIGS:
        raise InvalidArgument(f"unknown packaged config {name!r}; choose from {PACKAGED_CONFIGS}")
    return Path(__file__).parent / "configs" / f"{name.replace('-', '_')}.cfg"


def load_world_config(source) -> WorldConfig:
    """Load a world config from a ``key = value`` file or a packaged config name."""
    if str(source) in PACKAGED_CONFIGS:
        source = packaged_config_path(str(source))
    try:
        text = Path(source).read_text()
    except OSError as exc:
        raise InvalidArgument(f"cannot read config {source}: {exc}") from None
    return WorldConfig.from_mapping(parse_config_text(text))
