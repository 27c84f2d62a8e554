"""Linear-kernel HSIC and CKA between layer activations.

Grams are wrapped in :class:`GramMatrix`, which caches the derived forms each
estimator needs (double-centered for the biased estimator, hollow with row
sums for the unbiased one).  Given grams, both estimators cost O(n^2).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .errors import DegenerateRepresentation, OrderMismatch, TooFewSamples
from .trace_io import ActivationMatrix, ModelTrace

ESTIMATORS = ("unbiased", "biased")
DEGENERATE_TOL = 1e-12


def _as_array(F) -> np.ndarray:
    if isinstance(F, ActivationMatrix):
        return F.data
    a = np.asarray(F, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    return a


class GramMatrix:
    """Symmetric ``n x n`` gram ``F @ F.T`` with cached derived forms."""

    def __init__(self, data):
        s = np.array(data, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise ValueError(f"gram matrix must be square, got shape {s.shape}")
        # mirror the upper triangle so symmetry is exact
        iu = np.triu_indices(s.shape[0], 1)
        s.T[iu] = s[iu]
        s.setflags(write=False)
        self.data = s

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @cached_property
    def hollow(self) -> np.ndarray:
        h = self.data.copy()
        np.fill_diagonal(h, 0.0)
        h.setflags(write=False)
        return h

    @cached_property
    def hollow_row_sums(self) -> np.ndarray:
        return self.hollow.sum(axis=1)

    @cached_property
    def hollow_total(self) -> float:
        return float(self.hollow_row_sums.sum())

    @cached_property
    def centered(self) -> np.ndarray:
        """``H S H`` computed as row/column mean subtraction."""
        s = self.data
        row = s.mean(axis=1)
        c = s - row[:, None] - row[None, :] + row.mean()
        c = 0.5 * (c + c.T)
        c.setflags(write=False)
        return c


def gram(F) -> GramMatrix:
    a = _as_array(F)
    return GramMatrix(a @ a.T)


def _check_orders(s_i: GramMatrix, s_j: GramMatrix) -> int:
    if s_i.n != s_j.n:
        raise OrderMismatch(f"gram orders differ: {s_i.n} vs {s_j.n}")
    return s_i.n


def hsic_biased(s_i: GramMatrix, s_j: GramMatrix) -> float:
    """``tr(S_i H S_j H) / (n-1)^2``."""
    n = _check_orders(s_i, s_j)
    if n < 2:
        raise TooFewSamples(f"biased HSIC needs n >= 2, got {n}")
    # every term is a commutative elementwise product summed in a fixed
    # order, so swapping the arguments is bitwise neutral
    return float(np.vdot(s_i.centered, s_j.centered)) / (n - 1) ** 2


def hsic_unbiased(s_i: GramMatrix, s_j: GramMatrix) -> float:
    """Unbiased HSIC estimator on hollow grams; may come out slightly negative."""
    n = _check_orders(s_i, s_j)
    if n < 4:
        raise TooFewSamples(f"unbiased HSIC needs n >= 4, got {n}")
    a, b = s_i, s_j
    trace_term = float(np.vdot(a.hollow, b.hollow))
    sum_term = a.hollow_total * b.hollow_total / ((n - 1) * (n - 2))
    cross_term = 2.0 / (n - 2) * float(np.dot(a.hollow_row_sums, b.hollow_row_sums))
    return (trace_term + sum_term - cross_term) / (n * (n - 3))


_HSIC = {"unbiased": hsic_unbiased, "biased": hsic_biased}


def _hsic_fn(estimator: str):
    try:
        return _HSIC[estimator]
    except KeyError:
        raise ValueError(f"unknown estimator {estimator!r}; expected one of {ESTIMATORS}") from None


def clamp01(x: float) -> float:
    return min(max(x, 0.0), 1.0)


class CkaValue(NamedTuple):
    raw: float
    clamped: float


def _cka_from_parts(cross: float, self_i: float, self_j: float) -> float:
    return cross / (math.sqrt(self_i) * math.sqrt(self_j))


def cka(F_i, F_j, estimator: str = "unbiased") -> CkaValue:
    """Linear CKA between two activation matrices over the same samples.

    Raises DegenerateRepresentation when either self-HSIC is at most 1e-12.
    """
    fn = _hsic_fn(estimator)
    a, b = _as_array(F_i), _as_array(F_j)
    if a.shape[0] != b.shape[0]:
        raise OrderMismatch(f"sample counts differ: {a.shape[0]} vs {b.shape[0]}")
    s_i = gram(a)
    same = a is b or (a.shape == b.shape and np.array_equal(a, b))
    s_j = s_i if same else gram(b)
    h_ii = fn(s_i, s_i)
    h_jj = h_ii if same else fn(s_j, s_j)
    for h, which in ((h_ii, "first"), (h_jj, "second")):
        if h <= DEGENERATE_TOL:
            raise DegenerateRepresentation(f"{which} representation has self-HSIC {h:.3g} <= {DEGENERATE_TOL}")
    if same:
        return CkaValue(1.0, 1.0)
    raw = _cka_from_parts(fn(s_i, s_j), h_ii, h_jj)
    return CkaValue(raw, clamp01(raw))


@dataclass(frozen=True)
class SimilarityMatrix:
    """Pairwise CKA between all layers of a trace."""

    layer_names: tuple[str, ...]
    values: np.ndarray
    raw_values: np.ndarray
    estimator: str = "unbiased"

    def __len__(self) -> int:
        return len(self.layer_names)

    @classmethod
    def from_raw(cls, layer_names, raw, estimator: str = "unbiased") -> "SimilarityMatrix":
        raw = np.array(raw, dtype=np.float64)
        np.fill_diagonal(raw, 1.0)
        raw.setflags(write=False)
        values = np.clip(raw, 0.0, 1.0)
        values.setflags(write=False)
        return cls(tuple(layer_names), values, raw, estimator)

    def superdiagonal(self) -> list[float]:
        return [float(self.values[k, k + 1]) for k in range(len(self) - 1)]

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "layer_names": list(self.layer_names),
            "values": self.values.tolist(),
            "raw_values": self.raw_values.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SimilarityMatrix":
        return cls.from_raw(obj["layer_names"], obj["raw_values"], obj.get("estimator", "unbiased"))


def layer_grams(trace: ModelTrace, threads: int | None = None) -> list[GramMatrix]:
    """Compute each layer's gram exactly once, optionally on a thread pool."""
    if threads == 1 or len(trace) == 1:
        return [gram(layer) for layer in trace.layers]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(gram, trace.layers))


def self_hsics(trace: ModelTrace, grams: list[GramMatrix], estimator: str) -> list[float]:
    fn = _hsic_fn(estimator)
    out = []
    for layer, s in zip(trace.layers, grams):
        h = fn(s, s)
        if h <= DEGENERATE_TOL:
            raise DegenerateRepresentation(
                f"layer {layer.layer_name!r} is degenerate (self-HSIC {h:.3g} <= {DEGENERATE_TOL})"
            )
        out.append(h)
    return out


def similarity_matrix(trace: ModelTrace, estimator: str = "unbiased", threads: int | None = None) -> SimilarityMatrix:
    fn = _hsic_fn(estimator)
    grams = layer_grams(trace, threads)
    selfs = self_hsics(trace, grams, estimator)
    l = len(trace)
    raw = np.eye(l)
    for a in range(l):
        for b in range(a + 1, l):
            r = _cka_from_parts(fn(grams[a], grams[b]), selfs[a], selfs[b])
            raw[a, b] = raw[b, a] = r
    return SimilarityMatrix.from_raw(trace.layer_names, raw, estimator)
