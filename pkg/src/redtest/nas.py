"""Redundancy-aware scoring and ranking of architecture candidates."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import EmptyCandidateSet, IoFailure, MissingField, NonPositiveBase

RESOURCES = ("latency", "params", "flops", "none")
_RESOURCE_FIELD = {"latency": "latency_s", "params": "params_m", "flops": "flops_m"}
_BUDGET_ATTR = {"latency": "T", "params": "P", "flops": "F"}
CSV_COLUMNS = ("id", "accuracy", "latency_s", "params_m", "flops_m", "msrs")


@dataclass(frozen=True)
class CandidateRecord:
    id: str
    accuracy: float
    latency_s: float | None = None
    params_m: float | None = None
    flops_m: float | None = None
    msrs: float | None = None

    def resource(self, kind: str) -> float | None:
        return getattr(self, _RESOURCE_FIELD[kind])


@dataclass(frozen=True)
class RankingConfig:
    resource: str = "latency"
    T: float | None = None
    P: float | None = None
    F: float | None = None
    M: float | None = None
    w: float = -0.07
    lam: float = 0.5

    def __post_init__(self):
        if self.resource not in RESOURCES:
            raise ValueError(f"unknown resource {self.resource!r}; expected one of {RESOURCES}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.resource_weight > 0:
            budget = self.budget
            if budget is None or not budget > 0:
                raise ValueError(f"resource {self.resource!r} needs a positive {_BUDGET_ATTR[self.resource]}")
        if self.resource_weight < 1 and not (self.M is not None and self.M > 0):
            raise ValueError("M must be positive when lambda < 1")

    @property
    def resource_weight(self) -> float:
        """Effective lambda; a resource of ``none`` forces pure MSRS weighting."""
        return 0.0 if self.resource == "none" else self.lam

    @property
    def budget(self) -> float | None:
        return None if self.resource == "none" else getattr(self, _BUDGET_ATTR[self.resource])

    def to_dict(self) -> dict:
        d = {"resource": self.resource, "M": self.M, "w": self.w, "lambda": self.lam}
        if self.resource != "none":
            d[_BUDGET_ATTR[self.resource]] = self.budget
        return d


@dataclass(frozen=True)
class RankedCandidate:
    record: CandidateRecord
    score: float
    rank: int


@dataclass(frozen=True)
class AggregateStats:
    avg_accuracy: float
    avg_msrs: float | None
    avg_resource: float | None


def _power(base: float, w: float) -> float:
    return math.exp(w * math.log(base))


def _require(record: CandidateRecord, name: str) -> float:
    value = getattr(record, name)
    if value is None:
        raise MissingField(f"candidate {record.id!r} has no {name}")
    return value


def score_candidate(record: CandidateRecord, config: RankingConfig) -> float:
    """``ACC * [lam * R/B + (1 - lam) * MSRS/M] ** w``.

    ``R/B`` is the configured resource over its budget.  With ``lam == 1``
    the MSRS term is skipped and this is the resource-only objective.
    """
    lam = config.resource_weight
    base = 0.0
    if lam > 0:
        base += lam * (_require(record, _RESOURCE_FIELD[config.resource]) / config.budget)
    if lam < 1:
        base += (1.0 - lam) * (_require(record, "msrs") / config.M)
    if not base > 0:
        raise NonPositiveBase(f"candidate {record.id!r}: bracketed base {base!r} is not positive")
    return record.accuracy * _power(base, config.w)


def score_resource_only(record: CandidateRecord, resource: str, budget: float, w: float) -> float:
    """``ACC * (R/B) ** w``, the objective without any MSRS term."""
    ratio = _require(record, _RESOURCE_FIELD[resource]) / budget
    if not ratio > 0:
        raise NonPositiveBase(f"candidate {record.id!r}: resource ratio {ratio!r} is not positive")
    return record.accuracy * _power(ratio, w)


def select_best(candidates: Sequence[CandidateRecord], config: RankingConfig) -> RankedCandidate:
    """Single pass keeping the first candidate that strictly beats the best so far."""
    if not candidates:
        raise EmptyCandidateSet("no candidates to select from")
    best, best_score = None, -math.inf
    for record in candidates:
        s = score_candidate(record, config)
        if s > best_score:
            best, best_score = record, s
    return RankedCandidate(best, best_score, 1)


def rank_candidates(candidates: Sequence[CandidateRecord], config: RankingConfig) -> list[RankedCandidate]:
    if not candidates:
        raise EmptyCandidateSet("no candidates to rank")
    scored = [(score_candidate(c, config), c) for c in candidates]
    scored.sort(key=lambda sc: (-sc[0], sc[1].id))
    return [RankedCandidate(c, s, k) for k, (s, c) in enumerate(scored, start=1)]


def _mean(values: list) -> float | None:
    if not values or any(v is None for v in values):
        return None
    return sum(values) / len(values)


def rank_top_fraction(
    candidates: Sequence[CandidateRecord], config: RankingConfig, permille: float = 1.0
) -> tuple[list[RankedCandidate], AggregateStats]:
    """Keep the best ``ceil(N * permille / 1000)`` candidates and average them."""
    if not 0 < permille <= 1000:
        raise ValueError(f"permille must lie in (0, 1000], got {permille}")
    ranked = rank_candidates(candidates, config)
    keep = math.ceil(len(ranked) * permille / 1000)
    top = ranked[:keep]
    recs = [r.record for r in top]
    stats = AggregateStats(
        avg_accuracy=sum(r.accuracy for r in recs) / len(recs),
        avg_msrs=_mean([r.msrs for r in recs]),
        avg_resource=None if config.resource == "none" else _mean([r.resource(config.resource) for r in recs]),
    )
    return top, stats


def ranking_payload(top: Iterable[RankedCandidate], stats: AggregateStats) -> dict:
    return {
        "top": [{"id": r.record.id, "score": r.score, "rank": r.rank} for r in top],
        "aggregates": {
            "avg_accuracy": stats.avg_accuracy,
            "avg_msrs": stats.avg_msrs,
            "avg_resource": stats.avg_resource,
        },
    }


def _float_or_none(text: str | None, column: str, row: int) -> float | None:
    if text is None or text.strip() == "":
        return None
    try:
        v = float(text)
    except ValueError:
        raise MissingField(f"row {row}: column {column!r} is not a number: {text!r}") from None
    if not math.isfinite(v):
        raise MissingField(f"row {row}: column {column!r} is not finite")
    return v


def load_candidates(path, accuracy_unit: str = "fraction") -> list[CandidateRecord]:
    """Read a candidate CSV.

    Accuracy is normalized to [0, 1].  The unit comes from an optional
    ``accuracy_unit`` column (``fraction`` or ``percent``), falling back to
    ``accuracy_unit`` here.
    """
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    records = []
    for k, row in enumerate(rows, start=2):
        cid = (row.get("id") or "").strip()
        if not cid:
            raise MissingField(f"row {k}: missing id")
        acc = _float_or_none(row.get("accuracy"), "accuracy", k)
        if acc is None:
            raise MissingField(f"candidate {cid!r} has no accuracy")
        unit = (row.get("accuracy_unit") or accuracy_unit).strip()
        if unit == "percent":
            acc /= 100.0
        elif unit != "fraction":
            raise MissingField(f"candidate {cid!r}: unknown accuracy unit {unit!r}")
        records.append(
            CandidateRecord(
                cid,
                acc,
                *(_float_or_none(row.get(col), col, k) for col in CSV_COLUMNS[2:]),
            )
        )
    return records


def write_candidates(path, records: Iterable[CandidateRecord]) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow(["" if v is None else repr(v) if isinstance(v, float) else v
                             for v in (r.id, r.accuracy, r.latency_s, r.params_m, r.flops_m, r.msrs)])
