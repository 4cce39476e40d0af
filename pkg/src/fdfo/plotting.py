"""Minimal deterministic SVG line plots of metrics columns."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 400
MARGIN = dict(left=64, right=16, top=24, bottom=48)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    return [lo + (hi - lo) * k / (n - 1) for k in range(n)]


def line_plot(series: list[tuple[str, list[float], list[float]]], x_label: str = "epoch", y_label: str = "",
              title: str = "") -> str:
    """Render ``(label, xs, ys)`` series as SVG text. Non-finite points are skipped."""
    pts = [(x, y) for _, xs, ys in series for x, y in zip(xs, ys) if math.isfinite(x) and math.isfinite(y)]
    x0, x1 = (min(p[0] for p in pts), max(p[0] for p in pts)) if pts else (0.0, 1.0)
    y0, y1 = (min(p[1] for p in pts), max(p[1] for p in pts)) if pts else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    L, R, T, B = MARGIN["left"], WIDTH - MARGIN["right"], MARGIN["top"], HEIGHT - MARGIN["bottom"]

    def sx(x):
        return L + (x - x0) / (x1 - x0) * (R - L)

    def sy(y):
        return B - (y - y0) / (y1 - y0) * (B - T)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<line x1="{L}" y1="{B}" x2="{R}" y2="{B}" stroke="black"/>',
           f'<line x1="{L}" y1="{T}" x2="{L}" y2="{B}" stroke="black"/>']
    for tx in _ticks(x0, x1):
        out.append(f'<text x="{_fmt(sx(tx))}" y="{B + 16}" text-anchor="middle">{tx:.4g}</text>')
    for ty in _ticks(y0, y1):
        out.append(f'<text x="{L - 6}" y="{_fmt(sy(ty) + 4)}" text-anchor="end">{ty:.4g}</text>')
    out.append(f'<text x="{(L + R) // 2}" y="{HEIGHT - 12}" text-anchor="middle">{escape(x_label)}</text>')
    if y_label:
        out.append(f'<text x="14" y="{(T + B) // 2}" text-anchor="middle" '
                   f'transform="rotate(-90 14 {(T + B) // 2})">{escape(y_label)}</text>')
    if title:
        out.append(f'<text x="{(L + R) // 2}" y="16" text-anchor="middle">{escape(title)}</text>')
    for k, (label, xs, ys) in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        coords = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in zip(xs, ys) if math.isfinite(x) and math.isfinite(y))
        if coords:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        ly = T + 8 + 16 * k
        out.append(f'<line x1="{R - 150}" y1="{ly}" x2="{R - 130}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{R - 124}" y="{ly + 4}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
