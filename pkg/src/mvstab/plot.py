"""Minimal dependency-free SVG line plots."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

__all__ = ["svg_line_plot"]

_COLOURS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def svg_line_plot(path, x, ys, *, labels=(), title="", logy=False, width=640, height=400) -> None:
    """Write one or more ``y(x)`` polylines to ``path``.

    Non-positive values are dropped on a log axis.
    """
    x = np.asarray(x, dtype=float)
    ys = [np.asarray(y, dtype=float) for y in (ys if isinstance(ys, (list, tuple)) else [ys])]
    pad = 50
    tr = (lambda v: np.log10(v)) if logy else (lambda v: v)
    pts_all = []
    for y in ys:
        ok = np.isfinite(y) & ((y > 0) if logy else True)
        pts_all.append((x[ok], tr(y[ok])))
    xs = np.concatenate([p[0] for p in pts_all]) if pts_all else np.zeros(1)
    vs = np.concatenate([p[1] for p in pts_all]) if pts_all else np.zeros(1)
    if xs.size == 0:
        xs, vs = np.zeros(1), np.zeros(1)
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(vs.min()), float(vs.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0

    def sx(v):
        return pad + (v - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(v):
        return height - pad - (v - y0) / (y1 - y0) * (height - 2 * pad)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" fill="none" stroke="black"/>',
        f'<text x="{width / 2}" y="{pad / 2}" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{pad}" y="{height - pad / 3}" font-size="11">{x0:.3g}</text>',
        f'<text x="{width - pad}" y="{height - pad / 3}" text-anchor="end" font-size="11">{x1:.3g}</text>',
    ]
    lo = f"1e{y0:.2g}" if logy else f"{y0:.3g}"
    hi = f"1e{y1:.2g}" if logy else f"{y1:.3g}"
    out.append(f'<text x="{pad - 4}" y="{height - pad}" text-anchor="end" font-size="11">{lo}</text>')
    out.append(f'<text x="{pad - 4}" y="{pad + 10}" text-anchor="end" font-size="11">{hi}</text>')
    for k, (px, py) in enumerate(pts_all):
        if px.size == 0:
            continue
        colour = _COLOURS[k % len(_COLOURS)]
        coords = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(px, py) if math.isfinite(b))
        out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{coords}"/>')
        if k < len(labels):
            out.append(f'<text x="{width - pad - 4}" y="{pad + 16 * (k + 1)}" text-anchor="end" '
                       f'font-size="12" fill="{colour}">{escape(str(labels[k]))}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
