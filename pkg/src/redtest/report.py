"""Report envelopes, CSV tables and the SVG similarity heatmap.

All emitted files are byte-deterministic for identical inputs: reals are
written with 12 significant digits and nothing depends on wall-clock time
unless a timestamp is asked for explicitly.
"""

from __future__ import annotations

import json
import math
from datetime import datetime, timezone
from xml.sax.saxutils import escape

import numpy as np

from . import __version__
from .similarity import SimilarityMatrix
from .trace_io import atomic_write_bytes

SIG_DIGITS = 12
SIMILAR_RGB = (8, 48, 107)
DISSIMILAR_RGB = (255, 255, 255)


def fmt_real(x: float) -> str:
    return format(float(x), f".{SIG_DIGITS}g")


def round_reals(obj):
    """Round every float in a JSON-like tree to 12 significant digits."""
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise ValueError(f"cannot serialize non-finite value {obj!r}")
        return float(fmt_real(obj))
    if isinstance(obj, dict):
        return {k: round_reals(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_reals(v) for v in obj]
    if isinstance(obj, np.generic):
        return round_reals(obj.item())
    return obj


def build_report(command: str, config: dict, payload: dict, timestamp: bool = False) -> dict:
    """Envelope with the payload's keys merged in at top level."""
    report = {
        "tool_version": __version__,
        "command": command,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds") if timestamp else None,
        "config": config,
    }
    for k, v in payload.items():
        if k in report:
            raise ValueError(f"payload key {k!r} collides with the report envelope")
        report[k] = v
    return report


def dumps_json(obj) -> str:
    return json.dumps(round_reals(obj), indent=2) + "\n"


def write_json(path, obj) -> None:
    atomic_write_bytes(path, dumps_json(obj).encode())


def similarity_csv(matrix: SimilarityMatrix, raw: bool = False) -> str:
    values = matrix.raw_values if raw else matrix.values
    lines = [",".join(_csv_field(n) for n in matrix.layer_names)]
    lines.extend(",".join(fmt_real(v) for v in row) for row in values)
    return "\n".join(lines) + "\n"


def _csv_field(text: str) -> str:
    if any(c in text for c in ',"\n'):
        return '"' + text.replace('"', '""') + '"'
    return text


def read_similarity_csv(path) -> tuple[list[str], np.ndarray]:
    import csv

    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]])


# -- heatmap -------------------------------------------------------------------


def ramp_color(value: float) -> str:
    """Linear ramp from white (0, dissimilar) to dark blue (1, similar)."""
    t = min(max(float(value), 0.0), 1.0)
    rgb = (round(lo + (hi - lo) * t) for lo, hi in zip(DISSIMILAR_RGB, SIMILAR_RGB))
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def render_heatmap(matrix: SimilarityMatrix, cell: int = 24, char_width: float = 7.0) -> str:
    names = list(matrix.layer_names)
    l = len(names)
    label_w = int(math.ceil(max(len(n) for n in names) * char_width)) + 8
    left, top = label_w, label_w
    width, height = left + l * cell + 4, top + l * cell + 4
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="monospace" font-size="11">',
        f"<title>{escape(matrix.estimator)} CKA similarity</title>",
        '<g class="cells" stroke="#cccccc" stroke-width="0.5">',
    ]
    for a in range(l):
        for b in range(l):
            v = float(matrix.values[a, b])
            out.append(
                f'<rect x="{left + b * cell}" y="{top + a * cell}" width="{cell}" height="{cell}" '
                f'fill="{ramp_color(v)}"><title>{escape(names[a])} / {escape(names[b])}: {fmt_real(v)}</title></rect>'
            )
    out.append("</g>")
    out.append('<g class="row-labels" text-anchor="end">')
    for a, name in enumerate(names):
        out.append(f'<text x="{left - 4}" y="{top + a * cell + cell // 2 + 4}">{escape(name)}</text>')
    out.append("</g>")
    out.append('<g class="col-labels" text-anchor="start">')
    for b, name in enumerate(names):
        x, y = left + b * cell + cell // 2 + 4, top - 4
        out.append(f'<text x="{x}" y="{y}" transform="rotate(-90 {x} {y})">{escape(name)}</text>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
