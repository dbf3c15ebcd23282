"""Minimal log-log scatter plots with fit lines, written as SVG."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

_COLOURS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _ticks(lo, hi, n=5):
    span = hi - lo or 1.0
    step = 10 ** math.floor(math.log10(span / n))
    for m in (1, 2, 5, 10):
        if span / (m * step) <= n:
            step *= m
            break
    start = math.ceil(lo / step) * step
    return [start + i * step for i in range(int((hi - start) / step) + 1)]


def loglog_svg(series, path, title="", width=640, height=480):
    """``series``: list of dicts with keys label, x, y (natural logs), used (bool mask), slope, intercept."""
    ml, mr, mt, mb = 70, 20, 40, 55
    xs = np.concatenate([np.asarray(s["x"], float) for s in series])
    ys = np.concatenate([np.asarray(s["y"], float) for s in series])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    padx = 0.05 * (x1 - x0 or 1.0)
    pady = 0.05 * (y1 - y0 or 1.0)
    x0, x1, y0, y1 = x0 - padx, x1 + padx, y0 - pady, y1 + pady

    def px(x):
        return ml + (x - x0) / (x1 - x0) * (width - ml - mr)

    def py(y):
        return height - mb - (y - y0) / (y1 - y0) * (height - mt - mb)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<rect x="{ml}" y="{mt}" width="{width - ml - mr}" height="{height - mt - mb}" fill="none" stroke="black"/>']
    for t in _ticks(x0, x1):
        out.append(f'<line x1="{px(t):.1f}" y1="{height - mb}" x2="{px(t):.1f}" y2="{height - mb + 5}" stroke="black"/>')
        out.append(f'<text x="{px(t):.1f}" y="{height - mb + 18}" text-anchor="middle">{t:g}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{ml - 5}" y1="{py(t):.1f}" x2="{ml}" y2="{py(t):.1f}" stroke="black"/>')
        out.append(f'<text x="{ml - 8}" y="{py(t) + 4:.1f}" text-anchor="end">{t:g}</text>')
    out.append(f'<text x="{(ml + width - mr) / 2}" y="{height - 12}" text-anchor="middle">log(1/delta)</text>')
    out.append(f'<text x="16" y="{(mt + height - mb) / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {(mt + height - mb) / 2})">log N</text>')
    for i, s in enumerate(series):
        col = _COLOURS[i % len(_COLOURS)]
        x = np.asarray(s["x"], float)
        y = np.asarray(s["y"], float)
        used = np.asarray(s.get("used", np.ones(len(x), bool)), bool)
        for xi, yi, u in zip(x, y, used):
            fill = col if u else "none"
            out.append(f'<circle cx="{px(xi):.1f}" cy="{py(yi):.1f}" r="3.5" fill="{fill}" stroke="{col}"/>')
        if s.get("slope") is not None and used.any():
            xa, xb = x[used].min(), x[used].max()
            ya, yb = s["intercept"] + s["slope"] * xa, s["intercept"] + s["slope"] * xb
            out.append(f'<line x1="{px(xa):.1f}" y1="{py(ya):.1f}" x2="{px(xb):.1f}" y2="{py(yb):.1f}" '
                       f'stroke="{col}" stroke-width="1.5"/>')
        label = s["label"] + (f"  D = {s['slope']:.3f}" if s.get("slope") is not None else "")
        out.append(f'<text x="{ml + 10}" y="{mt + 18 + 16 * i}" fill="{col}">{escape(label)}</text>')
    out.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out))
        fh.write("\n")
