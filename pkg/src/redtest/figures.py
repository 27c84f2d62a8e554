"""Matplotlib figures written next to the tabular reports.

Uses the Agg backend and strips the PNG software metadata so files are
reproducible for a fixed matplotlib version.
"""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .msrs import polyval  # noqa: E402
from .similarity import SimilarityMatrix  # noqa: E402
from .trace_io import atomic_write_bytes  # noqa: E402

_RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "xtick.labelsize": 7,
    "ytick.labelsize": 7,
    "figure.dpi": 100,
    "savefig.dpi": 100,
}


def _save(fig, path) -> None:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", metadata={"Software": None})
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def similarity_figure(matrix: SimilarityMatrix, path) -> None:
    """Heatmap of the clamped similarity values; darker is more similar."""
    l = len(matrix)
    size = min(2.5 + 0.25 * l, 12.0)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(size + 1.0, size))
        im = ax.imshow(matrix.values, cmap="Blues", vmin=0.0, vmax=1.0, interpolation="nearest")
        ticks = np.arange(l)
        ax.set_xticks(ticks, labels=matrix.layer_names, rotation=90)
        ax.set_yticks(ticks, labels=matrix.layer_names)
        fig.colorbar(im, ax=ax, label=f"{matrix.estimator} CKA")
        fig.tight_layout()
        _save(fig, path)


def fit_figure(points, coeffs, path) -> None:
    """Scatter of (depth, MSRS) points with the fitted polynomial."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    xs = np.linspace(pts[:, 0].min(), pts[:, 0].max(), 200)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.0, 3.0))
        ax.plot(pts[:, 0], pts[:, 1], "o", ms=4, label="observed")
        ax.plot(xs, polyval(coeffs, xs), "-", lw=1.2, label=f"degree {len(coeffs) - 1} fit")
        ax.set_xlabel("depth")
        ax.set_ylabel("MSRS")
        ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)
