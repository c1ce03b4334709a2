"""Deterministic line charts written as plain SVG text."""
from __future__ import annotations

import math

W, H = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 70, 20, 40, 50
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _range(vals):
    lo, hi = min(vals), max(vals)
    if hi == lo:
        pad = abs(lo) * 0.05 or 1.0
        return lo - pad, hi + pad
    pad = (hi - lo) * 0.05
    return lo - pad, hi + pad


def line_chart(series: dict, title: str = "", xlabel: str = "", ylabel: str = "",
               vlines: dict | None = None) -> str:
    """``series`` maps a label to ``(xs, ys)``; non-finite points are dropped.

    ``vlines`` maps a label to an x position drawn as a dashed vertical marker.
    """
    clean = {}
    for name, (xs, ys) in series.items():
        pts = [(float(x), float(y)) for x, y in zip(xs, ys) if math.isfinite(x) and math.isfinite(y)]
        if pts:
            clean[name] = pts
    allx = [p[0] for pts in clean.values() for p in pts] + list((vlines or {}).values())
    ally = [p[1] for pts in clean.values() for p in pts]
    x0, x1 = _range(allx or [0.0, 1.0])
    y0, y1 = _range(ally or [0.0, 1.0])
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM

    def sx(x):
        return LEFT + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return TOP + (y1 - y) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<rect class="plot-area" x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black" '
        f'data-xmin="{x0!r}" data-xmax="{x1!r}" data-ymin="{y0!r}" data-ymax="{y1!r}"/>',
        f'<text x="{W / 2}" y="22" text-anchor="middle" font-size="15">{title}</text>',
        f'<text x="{W / 2}" y="{H - 10}" text-anchor="middle" font-size="12">{xlabel}</text>',
        f'<text x="15" y="{TOP + ph / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 15 {TOP + ph / 2})">{ylabel}</text>',
    ]
    for i in range(5):
        xv = x0 + (x1 - x0) * i / 4
        yv = y0 + (y1 - y0) * i / 4
        out.append(f'<text x="{_fmt(sx(xv))}" y="{TOP + ph + 16}" text-anchor="middle" font-size="10">{xv:.4g}</text>')
        out.append(f'<text x="{LEFT - 6}" y="{_fmt(sy(yv) + 3)}" text-anchor="end" font-size="10">{yv:.4g}</text>')
    for i, (name, pts) in enumerate(clean.items()):
        color = COLORS[i % len(COLORS)]
        coords = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in pts)
        out.append(f'<polyline class="series" data-label="{name}" points="{coords}" fill="none" '
                   f'stroke="{color}" stroke-width="1.5"/>')
        out.append(f'<text x="{W - RIGHT - 4}" y="{TOP + 14 + 14 * i}" text-anchor="end" font-size="11" '
                   f'fill="{color}">{name}</text>')
    for name, xv in (vlines or {}).items():
        out.append(f'<line class="marker" x1="{_fmt(sx(xv))}" y1="{TOP}" x2="{_fmt(sx(xv))}" y2="{TOP + ph}" '
                   f'stroke="blue" stroke-dasharray="6,4"/>')
        out.append(f'<text x="{_fmt(sx(xv) + 4)}" y="{TOP + ph - 6}" font-size="10" fill="blue">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
