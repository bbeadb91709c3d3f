"""Deterministic CSV and SVG renderings of cluster-search heatmaps."""

from __future__ import annotations

import math
from pathlib import Path

from .clustering import HeatmapGrid

_CELL_W, _CELL_H = 86, 46
_MARGIN_L, _MARGIN_T = 70, 56
_LOW = (38, 70, 120)
_HIGH = (250, 220, 90)


def write_heatmap_csv(path: str | Path, grid: HeatmapGrid) -> None:
    """Rows are cluster counts, columns reduction dims, cells silhouettes."""
    lines = ["k," + ",".join(str(d) for d in grid.dims)]
    for ki, k in enumerate(grid.k_values):
        cells = []
        for di in range(len(grid.dims)):
            value = grid.scores[ki, di]
            cells.append("" if math.isnan(value) else repr(float(value)))
        lines.append(f"{k}," + ",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _color(value: float, lo: float, hi: float) -> str:
    t = 0.5 if hi <= lo else (value - lo) / (hi - lo)
    rgb = tuple(round(a + t * (b - a)) for a, b in zip(_LOW, _HIGH))
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def write_heatmap_svg(path: str | Path, grid: HeatmapGrid) -> None:
    """Self-contained rect-grid heatmap with value labels, byte deterministic."""
    finite = [v for row in grid.scores for v in row if not math.isnan(v)]
    lo = min(finite) if finite else 0.0
    hi = max(finite) if finite else 1.0
    width = _MARGIN_L + _CELL_W * len(grid.dims) + 20
    height = _MARGIN_T + _CELL_H * len(grid.k_values) + 40
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<text x="{_MARGIN_L}" y="22" font-family="monospace" font-size="15">'
        f"silhouette by clusters x dim ({grid.method})</text>",
    ]
    for di, dim in enumerate(grid.dims):
        x = _MARGIN_L + di * _CELL_W + _CELL_W // 2
        parts.append(
            f'<text x="{x}" y="{_MARGIN_T - 10}" text-anchor="middle" '
            f'font-family="monospace" font-size="12">dim {dim}</text>'
        )
    for ki, k in enumerate(grid.k_values):
        y = _MARGIN_T + ki * _CELL_H + _CELL_H // 2 + 4
        parts.append(
            f'<text x="{_MARGIN_L - 10}" y="{y}" text-anchor="end" '
            f'font-family="monospace" font-size="12">k={k}</text>'
        )
        for di in range(len(grid.dims)):
            x = _MARGIN_L + di * _CELL_W
            top = _MARGIN_T + ki * _CELL_H
            value = grid.scores[ki, di]
            if math.isnan(value):
                fill, label = "#dddddd", "n/a"
            else:
                fill, label = _color(value, lo, hi), f"{value:.3f}"
            parts.append(
                f'<rect x="{x}" y="{top}" width="{_CELL_W - 2}" height="{_CELL_H - 2}" '
                f'fill="{fill}" stroke="#444444"/>'
            )
            parts.append(
                f'<text x="{x + _CELL_W // 2}" y="{top + _CELL_H // 2 + 4}" '
                f'text-anchor="middle" font-family="monospace" font-size="12">{label}</text>'
            )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")
