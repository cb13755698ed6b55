"""Minimal deterministic SVG writers for the viz subcommands. Presentation
only; the numeric contracts live in the paired JSON outputs."""
from __future__ import annotations

import numpy as np

from .core import GestureSequence, atomic_write_text

_COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b")


def _fmt(value: float) -> str:
    return f"{value:.2f}"


def scatter_svg(path, groups: dict[str, np.ndarray], title: str = "", size: int = 480) -> None:
    """Scatter plot of 2D point groups, one color per group."""
    all_points = np.concatenate([np.asarray(p, dtype=float) for p in groups.values()])
    lo = all_points.min(axis=0)
    hi = all_points.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)
    margin = 40
    scale = (size - 2 * margin) / span
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    if title:
        parts.append(f'<text x="{margin}" y="20" font-size="14">{title}</text>')
    for gi, (name, points) in enumerate(groups.items()):
        color = _COLORS[gi % len(_COLORS)]
        pts = np.asarray(points, dtype=float)
        for x, y in pts:
            cx = margin + (x - lo[0]) * scale[0]
            cy = size - margin - (y - lo[1]) * scale[1]
            parts.append(f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="3" fill="{color}" fill-opacity="0.7"/>')
        parts.append(
            f'<text x="{margin}" y="{38 + 16 * gi}" font-size="12" fill="{color}">{name}</text>'
        )
    parts.append("</svg>")
    atomic_write_text(path, "\n".join(parts))


def skeleton_strip_svg(path, sequences: list[GestureSequence], every: int = 8,
                       cell: int = 120, labels: list[str] | None = None) -> None:
    """Rows of stick-figure frames, one row per sequence, sampling every
    ``every``-th frame. Limbs follow the layout's hierarchy edges."""
    rows = len(sequences)
    n_cols = max(len(range(0, s.num_frames, every)) for s in sequences)
    width = n_cols * cell
    height = rows * cell
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for row, seq in enumerate(sequences):
        color = _COLORS[row % len(_COLORS)]
        edges = seq.layout.hierarchy_edges()
        coords = seq.coords
        lo = coords.reshape(-1, 2).min(axis=0)
        hi = coords.reshape(-1, 2).max(axis=0)
        span = float(np.max(np.maximum(hi - lo, 1e-9)))
        scale = (cell - 20) / span
        for col, f in enumerate(range(0, seq.num_frames, every)):
            ox = col * cell + 10
            oy = row * cell + 10
            frame = coords[f]
            for a, b in edges:
                x1 = ox + (frame[a, 0] - lo[0]) * scale
                y1 = oy + (frame[a, 1] - lo[1]) * scale
                x2 = ox + (frame[b, 0] - lo[0]) * scale
                y2 = oy + (frame[b, 1] - lo[1]) * scale
                parts.append(
                    f'<line x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" y2="{_fmt(y2)}" '
                    f'stroke="{color}" stroke-width="1.5"/>'
                )
            for x, y in frame:
                parts.append(
                    f'<circle cx="{_fmt(ox + (x - lo[0]) * scale)}" '
                    f'cy="{_fmt(oy + (y - lo[1]) * scale)}" r="1.5" fill="{color}"/>'
                )
        if labels:
            parts.append(
                f'<text x="4" y="{row * cell + 14}" font-size="11" fill="{color}">{labels[row]}</text>'
            )
    parts.append("</svg>")
    atomic_write_text(path, "\n".join(parts))
