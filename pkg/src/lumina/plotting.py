"""Minimal curve rendering: rasterize named series as colored polylines
onto a white canvas and write the result with the package's own image
codec. No interactive plotting stack involved."""

from __future__ import annotations

import numpy as np

from .imaging import save_image

_PALETTE = [
    (0.85, 0.2, 0.2),
    (0.2, 0.45, 0.85),
    (0.15, 0.65, 0.3),
    (0.8, 0.55, 0.1),
    (0.55, 0.25, 0.7),
]


def _draw_line(canvas, x0, y0, x1, y1, color):
    n = int(max(abs(x1 - x0), abs(y1 - y0), 1)) * 2
    for t in np.linspace(0.0, 1.0, n + 1):
        x = int(round(x0 + (x1 - x0) * t))
        y = int(round(y0 + (y1 - y0) * t))
        if 0 <= y < canvas.shape[0] and 0 <= x < canvas.shape[1]:
            canvas[y, x] = color
            if y + 1 < canvas.shape[0]:
                canvas[y + 1, x] = color


def render_curves(series: dict, path: str, width: int = 360, height: int = 220) -> None:
    """Render {name: [values...]} as polylines, one color per series."""
    canvas = np.ones((height, width, 3))
    margin = 12
    canvas[margin, margin:-margin] = 0.6
    canvas[-margin, margin:-margin] = 0.6
    canvas[margin:-margin, margin] = 0.6
    canvas[margin:-margin, -margin] = 0.6
    finite_vals = [v for vs in series.values() for v in vs if np.isfinite(v)]
    if finite_vals:
        lo, hi = min(finite_vals), max(finite_vals)
        if hi - lo < 1e-12:
            hi = lo + 1.0
        for k, (name, vals) in enumerate(series.items()):
            color = np.array(_PALETTE[k % len(_PALETTE)])
            pts = [
                (
                    margin + (width - 2 * margin) * i / max(len(vals) - 1, 1),
                    height - margin - (height - 2 * margin) * (v - lo) / (hi - lo),
                )
                for i, v in enumerate(vals)
                if np.isfinite(v)
            ]
            for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
                _draw_line(canvas, x0, y0, x1, y1, color)
    save_image(canvas, path)
