"""Minimal deterministic SVG writers for line plots and heatmaps.

Output depends only on the input numbers (fixed float formatting, no
timestamps), so identical data gives identical bytes.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 480
MARGIN = 60
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
NEUTRAL = (247, 247, 247)
NEG = (33, 102, 172)
POS = (178, 24, 43)


def _f(x: float) -> str:
    return f"{x:.2f}"


def _header(title: str) -> list[str]:
    return [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="24" text-anchor="middle" font-family="sans-serif" '
        f'font-size="16">{escape(title)}</text>',
    ]


def _axes(xlabel, ylabel, xlim, ylim) -> list[str]:
    x0, y0 = MARGIN, HEIGHT - MARGIN
    x1, y1 = WIDTH - MARGIN, MARGIN
    return [
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
        f'<text x="{(x0 + x1) / 2}" y="{HEIGHT - 15}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13">{escape(xlabel)}</text>',
        f'<text x="15" y="{(y0 + y1) / 2}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="13" transform="rotate(-90 15 {(y0 + y1) / 2})">{escape(ylabel)}</text>',
        f'<text x="{x0}" y="{y0 + 18}" font-family="sans-serif" font-size="11">{xlim[0]:.3g}</text>',
        f'<text x="{x1}" y="{y0 + 18}" text-anchor="end" font-family="sans-serif" '
        f'font-size="11">{xlim[1]:.3g}</text>',
        f'<text x="{x0 - 5}" y="{y0}" text-anchor="end" font-family="sans-serif" '
        f'font-size="11">{ylim[0]:.3g}</text>',
        f'<text x="{x0 - 5}" y="{y1 + 10}" text-anchor="end" font-family="sans-serif" '
        f'font-size="11">{ylim[1]:.3g}</text>',
    ]


def line_plot(x, series: dict, title="", xlabel="", ylabel="", ylim=None) -> str:
    """One ``<polyline>`` per named series."""
    x = np.asarray(x, dtype=float)
    ys = {k: np.asarray(v, dtype=float) for k, v in series.items()}
    if ylim is None:
        lo = min(float(np.nanmin(v)) for v in ys.values())
        hi = max(float(np.nanmax(v)) for v in ys.values())
        if hi == lo:
            hi = lo + 1.0
        ylim = (lo, hi)
    xlim = (float(x.min()), float(x.max()) if x.max() > x.min() else float(x.min()) + 1.0)
    sx = (WIDTH - 2 * MARGIN) / (xlim[1] - xlim[0])
    sy = (HEIGHT - 2 * MARGIN) / (ylim[1] - ylim[0])
    out = _header(title) + _axes(xlabel, ylabel, xlim, ylim)
    for k, (name, y) in enumerate(ys.items()):
        color = PALETTE[k % len(PALETTE)]
        pts = " ".join(
            f"{_f(MARGIN + (xi - xlim[0]) * sx)},{_f(HEIGHT - MARGIN - (yi - ylim[0]) * sy)}"
            for xi, yi in zip(x, y) if np.isfinite(yi)
        )
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>')
        out.append(
            f'<text x="{WIDTH - MARGIN - 5}" y="{MARGIN + 16 * (k + 1)}" text-anchor="end" '
            f'font-family="sans-serif" font-size="12" fill="{color}">{escape(name)}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _mix(c0, c1, t):
    return tuple(int(round(a + (b - a) * t)) for a, b in zip(c0, c1))


def diverging_color(value: float, vmax: float) -> str:
    """Blue below zero, red above, neutral grey exactly at zero."""
    t = 0.0 if vmax == 0 else max(-1.0, min(1.0, value / vmax))
    rgb = _mix(NEUTRAL, POS, t) if t >= 0 else _mix(NEUTRAL, NEG, -t)
    return "#%02x%02x%02x" % rgb


def sequential_color(value: float, vmin: float, vmax: float) -> str:
    t = 0.0 if vmax == vmin else (value - vmin) / (vmax - vmin)
    t = max(0.0, min(1.0, t))
    return "#%02x%02x%02x" % _mix((255, 255, 217), (8, 29, 88), t)


def heatmap(values, x_axis, y_axis, diverging=False, title="", xlabel="", ylabel="",
            marker=None) -> str:
    """Grid of ``<rect>`` cells; ``values[row, col]`` with row 0 drawn at the top.

    ``marker`` is an optional (row, col) cell outlined with a square glyph.
    Missing values (NaN) are drawn hatched grey.
    """
    values = np.asarray(values, dtype=float)
    rows, cols = values.shape
    cw = (WIDTH - 2 * MARGIN) / cols
    ch = (HEIGHT - 2 * MARGIN) / rows
    finite = values[np.isfinite(values)]
    vmax = float(np.max(np.abs(finite))) if finite.size else 1.0
    vmin = float(finite.min()) if finite.size else 0.0
    vhi = float(finite.max()) if finite.size else 1.0
    xa, ya = np.asarray(x_axis, dtype=float), np.asarray(y_axis, dtype=float)
    out = _header(title) + _axes(xlabel, ylabel, (xa[0], xa[-1]), (ya[-1], ya[0]))
    for i in range(rows):
        for j in range(cols):
            v = values[i, j]
            if not np.isfinite(v):
                color = "#999999"
            elif diverging:
                color = diverging_color(v, vmax)
            else:
                color = sequential_color(v, vmin, vhi)
            out.append(
                f'<rect x="{_f(MARGIN + j * cw)}" y="{_f(MARGIN + i * ch)}" '
                f'width="{_f(cw + 0.05)}" height="{_f(ch + 0.05)}" fill="{color}"/>'
            )
    if marker is not None:
        i, j = marker
        out.append(
            f'<rect class="optimum" x="{_f(MARGIN + j * cw)}" y="{_f(MARGIN + i * ch)}" '
            f'width="{_f(cw)}" height="{_f(ch)}" fill="none" stroke="white" stroke-width="3"/>'
        )
    scale = f"range [{vmin:.4g}, {vhi:.4g}]"
    out.append(
        f'<text x="{WIDTH - MARGIN}" y="{HEIGHT - 15}" text-anchor="end" '
        f'font-family="sans-serif" font-size="11">{escape(scale)}</text>'
    )
    out.append("</svg>")
    return "\n".join(out) + "\n"
