"""Model Structural Redundancy Score and expected-MSRS budgets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import RankDeficient, UnknownProfile
from .similarity import ESTIMATORS, SimilarityMatrix, similarity_matrix
from .trace_io import ModelTrace

DEFAULT_BETA = 100.0
DEFAULT_EPSILON = {"block": 0.8, "plain": 0.7}


@dataclass(frozen=True)
class MsrsConfig:
    beta: float = DEFAULT_BETA
    epsilon: float = DEFAULT_EPSILON["plain"]
    estimator: str = "unbiased"

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}")

    @classmethod
    def for_family(cls, structure_family: str, **overrides) -> "MsrsConfig":
        """Defaults for a structure family; ``None`` overrides are ignored."""
        kw = {"epsilon": DEFAULT_EPSILON[structure_family]}
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)

    def to_dict(self) -> dict:
        return {"beta": self.beta, "epsilon": self.epsilon, "estimator": self.estimator}


@dataclass(frozen=True)
class PairScore:
    layer_a: str
    layer_b: str
    cka: float
    raw_cka: float
    score: float


@dataclass(frozen=True)
class MsrsResult:
    msrs: float
    pair_scores: tuple[PairScore, ...]
    config: MsrsConfig
    layer_count: int = field(default=0)

    def to_dict(self) -> dict:
        return {
            "msrs": self.msrs,
            "layer_count": self.layer_count,
            "pair_scores": [
                {"layer_a": p.layer_a, "layer_b": p.layer_b, "cka": p.cka, "raw_cka": p.raw_cka, "score": p.score}
                for p in self.pair_scores
            ],
            "config": self.config.to_dict(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "MsrsResult":
        pairs = tuple(
            PairScore(p["layer_a"], p["layer_b"], p["cka"], p.get("raw_cka", p["cka"]), p["score"])
            for p in obj["pair_scores"]
        )
        return cls(obj["msrs"], pairs, MsrsConfig(**obj["config"]), obj.get("layer_count", 0))


def scaled_tanh(x: float, beta: float, epsilon: float) -> float:
    """``tanh(beta * (x - epsilon))``.

    Written as the library tanh rather than a ratio of exponentials, which
    overflows once ``beta * |x - epsilon|`` gets large.
    """
    return math.tanh(beta * (x - epsilon))


def pair_score(x: float, beta: float, epsilon: float) -> float:
    """Scaled tanh mapped from (-1, 1) onto (0, 1)."""
    return 0.5 * scaled_tanh(x, beta, epsilon) + 0.5


def msrs(source: ModelTrace | SimilarityMatrix, config: MsrsConfig | None = None, threads: int | None = None) -> MsrsResult:
    """Sum of pair scores over every layer pair ``a > b``.

    ``source`` may be a trace (its similarity matrix is computed with
    ``config.estimator``) or a precomputed similarity matrix, whose clamped
    values are used as-is.  Pairs are visited and summed in (a, b)
    lexicographic order, so the result is reproducible bit for bit.
    """
    if isinstance(source, ModelTrace):
        if config is None:
            config = MsrsConfig.for_family(source.structure_family)
        sim = similarity_matrix(source, config.estimator, threads=threads)
    else:
        sim = source
        config = config or MsrsConfig()
    names = sim.layer_names
    pairs = []
    total = 0.0
    for a in range(1, len(names)):
        for b in range(a):
            x = float(sim.values[a, b])
            s = pair_score(x, config.beta, config.epsilon)
            total += s
            pairs.append(PairScore(names[a], names[b], x, float(sim.raw_values[a, b]), s))
    return MsrsResult(total, tuple(pairs), config, len(names))


# -- budgets -------------------------------------------------------------------


@dataclass(frozen=True)
class BudgetProfile:
    """Expected MSRS as a function of depth: 0 up to ``l0``, linear above."""

    l0: int
    slope: float
    intercept: float
    tag: str = "custom"

    def __call__(self, depth: int) -> float:
        if depth < 1:
            raise ValueError(f"depth must be positive, got {depth}")
        if depth <= self.l0:
            return 0.0
        return self.slope * depth + self.intercept

    @classmethod
    def from_dict(cls, obj: dict, tag: str = "custom") -> "BudgetProfile":
        try:
            return cls(int(obj["l0"]), float(obj["slope"]), float(obj["intercept"]), tag)
        except (KeyError, TypeError, ValueError) as exc:
            raise UnknownProfile(f"malformed budget profile: {exc!r}") from exc


# CIFAR-10 and CIFAR-100 fits; note C100 jumps from 0 to 1.33 at depth 4.
BUDGET_PROFILES = {
    "c10": BudgetProfile(14, 7.6, -106.4, "c10"),
    "c100": BudgetProfile(3, 2.4, -8.27, "c100"),
}


def msrs_budget(depth: int, profile: str | BudgetProfile = "c10") -> float:
    if not isinstance(profile, BudgetProfile):
        try:
            profile = BUDGET_PROFILES[str(profile).lower()]
        except KeyError:
            raise UnknownProfile(f"unknown budget profile {profile!r}; known: {sorted(BUDGET_PROFILES)}") from None
    return profile(depth)


def fit_polynomial(points: Sequence[tuple[float, float]], degree: int) -> list[float]:
    """Least-squares polynomial of MSRS against depth, lowest order first.

    Solves the normal equations ``(X^T X) c = X^T y`` for the Vandermonde
    matrix ``X``.
    """
    if degree not in (1, 2):
        raise ValueError(f"degree must be 1 or 2, got {degree}")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    depths, values = pts[:, 0], pts[:, 1]
    if len(np.unique(depths)) < degree + 1:
        raise RankDeficient(f"degree {degree} fit needs {degree + 1} distinct depths, got {len(np.unique(depths))}")
    X = np.vander(depths, degree + 1, increasing=True)
    coeffs = np.linalg.solve(X.T @ X, X.T @ values)
    return [float(c) for c in coeffs]


def polyval(coeffs: Sequence[float], x):
    return sum(c * np.asarray(x, dtype=np.float64) ** k for k, c in enumerate(coeffs))
