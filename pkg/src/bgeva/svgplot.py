"""Dependency-free SVG 1.1 plots of one fitted smooth.

The document holds exactly one ``<path class="curve">`` for the estimate, one
``<polygon class="band">`` for the point-wise interval and one
``<line class="rug">`` per covariate value. Axes and ticks are plain
``<line>``/``<text>`` elements with their own classes.
"""
from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .inference import CiBand
from .splines import smooth_label

WIDTH, HEIGHT = 480, 360
MARGIN = {"left": 70, "right": 20, "top": 20, "bottom": 50}
RUG_LEN = 8


def _ticks(lo, hi, count=5):
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / count
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    start = np.ceil(lo / step) * step
    return [float(v) for v in np.arange(start, hi + 0.5 * step, step) if lo <= v <= hi + 1e-12]


def _num(v):
    return f"{v:.2f}"


def render_svg(band: CiBand, rug=None, xlabel=None) -> str:
    """Render a band as an SVG document string."""
    x0, x1 = float(band.x.min()), float(band.x.max())
    rug = np.asarray([] if rug is None else rug, dtype=float)
    if rug.size:
        x0, x1 = min(x0, float(rug.min())), max(x1, float(rug.max()))
    y0 = float(min(band.lower.min(), band.fit.min()))
    y1 = float(max(band.upper.max(), band.fit.max()))
    pad = 0.05 * (y1 - y0) if y1 > y0 else 1.0
    y0, y1 = y0 - pad, y1 + pad
    if x1 == x0:
        x1 = x0 + 1.0
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(v):
        return MARGIN["left"] + (np.asarray(v) - x0) / (x1 - x0) * pw

    def sy(v):
        return MARGIN["top"] + (y1 - np.asarray(v)) / (y1 - y0) * ph

    px, pf = sx(band.x), sy(band.fit)
    curve = "M " + " L ".join(f"{_num(a)},{_num(b)}" for a, b in zip(px, pf))
    poly_x = np.r_[px, px[::-1]]
    poly_y = np.r_[sy(band.upper), sy(band.lower)[::-1]]
    polygon = " ".join(f"{_num(a)},{_num(b)}" for a, b in zip(poly_x, poly_y))
    base = MARGIN["top"] + ph
    ylab = escape(smooth_label(band.term, band.edf))
    xlab = escape(xlabel or band.term)

    out = [
        '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" '
        f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<title>{ylab}</title>',
        f'<polygon class="band" points="{polygon}" fill="#bdbdbd" fill-opacity="0.6" '
        'stroke="none"/>',
        f'<path class="curve" d="{curve}" fill="none" stroke="black" stroke-width="1.5"/>',
    ]
    for v in sx(rug):
        out.append(f'<line class="rug" x1="{_num(v)}" y1="{_num(base)}" x2="{_num(v)}" '
                   f'y2="{_num(base - RUG_LEN)}" stroke="black" stroke-width="0.5"/>')
    out.append(f'<line class="axis" x1="{MARGIN["left"]}" y1="{_num(base)}" '
               f'x2="{MARGIN["left"] + pw}" y2="{_num(base)}" stroke="black"/>')
    out.append(f'<line class="axis" x1="{MARGIN["left"]}" y1="{MARGIN["top"]}" '
               f'x2="{MARGIN["left"]}" y2="{_num(base)}" stroke="black"/>')
    for t in _ticks(x0, x1):
        v = sx(t)
        out.append(f'<line class="tick" x1="{_num(v)}" y1="{_num(base)}" x2="{_num(v)}" '
                   f'y2="{_num(base + 5)}" stroke="black"/>')
        out.append(f'<text class="tick-label" x="{_num(v)}" y="{_num(base + 18)}" '
                   f'font-size="11" text-anchor="middle">{t:g}</text>')
    for t in _ticks(y0, y1):
        v = sy(t)
        out.append(f'<line class="tick" x1="{MARGIN["left"] - 5}" y1="{_num(v)}" '
                   f'x2="{MARGIN["left"]}" y2="{_num(v)}" stroke="black"/>')
        out.append(f'<text class="tick-label" x="{MARGIN["left"] - 8}" y="{_num(v + 4)}" '
                   f'font-size="11" text-anchor="end">{t:g}</text>')
    out.append(f'<text class="xlabel" x="{_num(MARGIN["left"] + pw / 2)}" '
               f'y="{HEIGHT - 10}" font-size="13" text-anchor="middle">{xlab}</text>')
    cy = MARGIN["top"] + ph / 2
    out.append(f'<text class="ylabel" x="16" y="{_num(cy)}" font-size="13" '
               f'text-anchor="middle" transform="rotate(-90 16 {_num(cy)})">{ylab}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(band: CiBand, path, rug=None, xlabel=None):
    Path(path).write_text(render_svg(band, rug, xlabel), encoding="utf-8")
