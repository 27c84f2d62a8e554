"""Layer-pruning plans driven by adjacent-layer similarity.

Layer indices are 1-based throughout, in forward-pass order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import MissingCost, TooFewLayers
from .msrs import DEFAULT_EPSILON
from .similarity import _cka_from_parts, clamp01, hsic_unbiased, layer_grams, self_hsics
from .trace_io import ModelTrace

MODES = ("keep_last", "literal")
COST_METRICS = ("params", "flops", "latency")


@dataclass(frozen=True)
class PruneConfig:
    mu: float = DEFAULT_EPSILON["plain"]
    mode: str = "keep_last"

    def __post_init__(self):
        if not 0.0 < self.mu < 1.0:
            raise ValueError(f"mu must lie in (0, 1), got {self.mu}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")

    @classmethod
    def for_family(cls, structure_family: str, mu: float | None = None, mode: str | None = None) -> "PruneConfig":
        return cls(DEFAULT_EPSILON[structure_family] if mu is None else mu, mode or "keep_last")


@dataclass(frozen=True)
class Mismatch:
    front: int
    next: int
    front_p: int
    expected_p: int


@dataclass(frozen=True)
class PrunePlan:
    retained: tuple[int, ...]
    dropped: tuple[int, ...]
    adjacent_cka: tuple[tuple[int, int, float], ...]
    mismatches: tuple[Mismatch, ...]
    config: PruneConfig

    def to_dict(self) -> dict:
        return {
            "mu": self.config.mu,
            "mode": self.config.mode,
            "retained": list(self.retained),
            "dropped": list(self.dropped),
            "adjacent_cka": [[i, j, c] for i, j, c in self.adjacent_cka],
            "mismatches": [
                {"front": m.front, "next": m.next, "front_p": m.front_p, "expected_p": m.expected_p}
                for m in self.mismatches
            ],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "PrunePlan":
        return cls(
            tuple(obj["retained"]),
            tuple(obj["dropped"]),
            tuple((int(i), int(j), float(c)) for i, j, c in obj["adjacent_cka"]),
            tuple(Mismatch(**m) for m in obj["mismatches"]),
            PruneConfig(obj["mu"], obj["mode"]),
        )


def adjacent_similarities(trace: ModelTrace, threads: int | None = None) -> list[tuple[int, int, float]]:
    """Clamped unbiased CKA between each layer and the next."""
    if len(trace) < 2:
        raise TooFewLayers(f"need at least 2 layers, got {len(trace)}")
    grams = layer_grams(trace, threads)
    selfs = self_hsics(trace, grams, "unbiased")
    out = []
    for k in range(len(trace) - 1):
        raw = _cka_from_parts(hsic_unbiased(grams[k], grams[k + 1]), selfs[k], selfs[k + 1])
        out.append((k + 1, k + 2, clamp01(raw)))
    return out


def plan_from_similarities(
    adjacent: Sequence[float], config: PruneConfig, widths: Sequence[int] | None = None
) -> PrunePlan:
    """Walk the adjacent-similarity chain; ``adjacent[k]`` compares layers k+1 and k+2.

    The current layer is retained when it is dissimilar from its successor,
    dropped otherwise.  The walk never decides on the last layer, so
    ``literal`` mode drops it and ``keep_last`` retains it.
    """
    l = len(adjacent) + 1
    if l < 2:
        raise TooFewLayers(f"need at least 2 layers, got {l}")
    retained, dropped = [], []
    cur = 1
    for i in range(2, l + 1):
        (retained if adjacent[i - 2] < config.mu else dropped).append(cur)
        cur = i
    (retained if config.mode == "keep_last" else dropped).append(l)

    mismatches = []
    if widths is not None:
        for front, nxt in zip(retained, retained[1:]):
            # nxt originally consumed the output of layer nxt-1
            expected = widths[nxt - 2]
            if widths[front - 1] != expected:
                mismatches.append(Mismatch(front, nxt, widths[front - 1], expected))
    pairs = tuple((k + 1, k + 2, float(c)) for k, c in enumerate(adjacent))
    return PrunePlan(tuple(retained), tuple(dropped), pairs, tuple(mismatches), config)


def prune_plan(trace: ModelTrace, config: PruneConfig | None = None, threads: int | None = None) -> PrunePlan:
    config = config or PruneConfig.for_family(trace.structure_family)
    adjacent = [c for _, _, c in adjacent_similarities(trace, threads)]
    return plan_from_similarities(adjacent, config, [layer.p for layer in trace.layers])


def expected_reduction(
    trace: ModelTrace | Sequence[str], plan: PrunePlan, cost_model: Mapping[str, Mapping[str, float]]
) -> dict[str, float]:
    """Percentage of each cost metric carried by the dropped layers.

    ``cost_model`` maps layer name to ``{"params": .., "flops": .., "latency": ..}``.
    """
    names = trace.layer_names if isinstance(trace, ModelTrace) else list(trace)
    for name in names:
        if name not in cost_model:
            raise MissingCost(f"no cost entry for layer {name!r}")
        for metric in COST_METRICS:
            if metric not in cost_model[name]:
                raise MissingCost(f"layer {name!r} lacks cost metric {metric!r}")
    dropped = set(plan.dropped)
    out = {}
    for metric in COST_METRICS:
        total = sum(float(cost_model[n][metric]) for n in names)
        removed = sum(float(cost_model[n][metric]) for k, n in enumerate(names, start=1) if k in dropped)
        out[metric] = 100.0 * removed / total if total else 0.0
    return out
