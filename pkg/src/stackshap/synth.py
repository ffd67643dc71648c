"""Seeded synthetic survey extracts with a known logistic data-generating process."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import GROUPS, KINDS, Dataset, FeatureSchema, FeatureSpec
from .errors import ConfigError
from .learners import logistic

DISCRETE_LEVELS = 5  # discrete features are uniform on 0..4


@dataclass(frozen=True)
class SynthFeature:
    name: str
    kind: str = "continuous"
    group: str = "student_family"
    effect: float = 0.0


@dataclass
class SynthSpec:
    """Generator settings.

    ``noise`` is the probability of flipping each drawn label.  Positive
    rows get ``level_pos`` and negative rows ``level_neg``; countries are
    ``C00``, ``C01`` ... assigned round-robin.  ``missing_rate`` blanks
    feature cells at random (for exercising the drop step).
    """

    n_rows: int
    features: Sequence[SynthFeature]
    intercept: float = 0.0
    noise: float = 0.0
    n_countries: int = 1
    seed: int = 0
    level_pos: int = 0
    level_neg: int = 1
    missing_rate: float = 0.0

    def __post_init__(self):
        self.features = tuple(f if isinstance(f, SynthFeature) else SynthFeature(**f) for f in self.features)
        if self.n_rows < 1:
            raise ConfigError("n_rows must be positive")
        if not self.features:
            raise ConfigError("at least one feature is required")
        for f in self.features:
            if f.kind not in KINDS or f.group not in GROUPS:
                raise ConfigError(f"feature {f.name!r}: bad kind or group")
            if not math.isfinite(f.effect):
                raise ConfigError(f"feature {f.name!r}: effect must be finite")
        if not math.isfinite(self.intercept):
            raise ConfigError("intercept must be finite")
        if not 0 <= self.noise < 0.5:
            raise ConfigError("noise must lie in [0, 0.5)")
        if not 0 <= self.missing_rate < 1:
            raise ConfigError("missing_rate must lie in [0, 1)")
        if self.n_countries < 1:
            raise ConfigError("n_countries must be positive")
        if self.level_pos == self.level_neg:
            raise ConfigError("level_pos and level_neg must differ")

    @property
    def schema(self) -> FeatureSchema:
        return FeatureSchema([FeatureSpec(f.name, f.kind, f.group) for f in self.features])

    @property
    def effects(self) -> np.ndarray:
        return np.array([f.effect for f in self.features])

    def to_dict(self) -> dict:
        return {
            "n_rows": self.n_rows,
            "features": [vars(f).copy() for f in self.features],
            "intercept": self.intercept,
            "noise": self.noise,
            "n_countries": self.n_countries,
            "seed": self.seed,
            "level_pos": self.level_pos,
            "level_neg": self.level_neg,
            "missing_rate": self.missing_rate,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthSpec":
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "SynthSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def default_spec(n_rows: int = 2000, n_features: int = 12, seed: int = 0, dominant_effect: float = 5.0,
                 n_countries: int = 2, noise: float = 0.0) -> SynthSpec:
    """A mixed-kind spec split evenly across the two covariate groups.

    Feature ``f00`` is binary with ``dominant_effect``; a handful of others
    carry modest effects and the rest are noise.
    """
    kinds = ("binary", "continuous", "discrete")
    modest = (0.8, -0.6, 0.5, -0.4, 0.3)
    feats = []
    for j in range(n_features):
        if j == 0:
            effect = dominant_effect
        elif j <= len(modest):
            effect = modest[j - 1]
        else:
            effect = 0.0
        group = GROUPS[0] if j < (n_features + 1) // 2 else GROUPS[1]
        feats.append(SynthFeature(f"f{j:02d}", kinds[j % 3], group, effect))
    intercept = -0.5 * dominant_effect  # centres the binary effect so classes stay balanced
    return SynthSpec(n_rows, feats, intercept=intercept, noise=noise, n_countries=n_countries, seed=seed)


def draw_features(spec: SynthSpec, rng) -> np.ndarray:
    n = spec.n_rows
    cols = []
    for f in spec.features:
        if f.kind == "binary":
            cols.append(rng.integers(0, 2, size=n).astype(np.float64))
        elif f.kind == "discrete":
            cols.append(rng.integers(0, DISCRETE_LEVELS, size=n).astype(np.float64))
        else:
            cols.append(rng.standard_normal(n))
    return np.column_stack(cols)


def generate(spec: SynthSpec) -> Dataset:
    """Draw features, then ``y ~ Bernoulli(logistic(intercept + X @ effects))`` with label flips."""
    rng = np.random.default_rng(spec.seed)
    X = draw_features(spec, rng)
    p = logistic(spec.intercept + X @ spec.effects)
    y = (rng.random(spec.n_rows) < p).astype(np.int64)
    flip = rng.random(spec.n_rows) < spec.noise
    y = np.where(flip, 1 - y, y)
    if spec.missing_rate > 0:
        X = np.where(rng.random(X.shape) < spec.missing_rate, np.nan, X)
    country = np.array([f"C{i % spec.n_countries:02d}" for i in range(spec.n_rows)], dtype=object)
    level = np.where(y == 1, spec.level_pos, spec.level_neg)
    return Dataset(spec.schema, X, country, level, y)
