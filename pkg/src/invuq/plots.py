"""Static SVG figures written as plain text.

Output depends only on the data: fixed palette, fixed number formatting and
no timestamps, so reruns produce identical files.
"""
from __future__ import annotations

from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
           "#bcbd22", "#17becf")


def _f(v: float) -> str:
    return f"{v:.2f}"


def _svg(width: float, height: float, body: list[str]) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(width)}" height="{_f(height)}" '
            f'viewBox="0 0 {_f(width)} {_f(height)}" font-family="sans-serif" font-size="11">')
    return "\n".join([head, f'<rect width="{_f(width)}" height="{_f(height)}" fill="white"/>', *body, "</svg>"]) + "\n"


def _text(x, y, s, anchor="middle", size=11, rotate=None) -> str:
    tr = f' transform="rotate({rotate} {_f(x)} {_f(y)})"' if rotate is not None else ""
    return f'<text x="{_f(x)}" y="{_f(y)}" text-anchor="{anchor}" font-size="{size}"{tr}>{escape(str(s))}</text>'


def _nice_max(v: float) -> float:
    if not np.isfinite(v) or v <= 0:
        return 1.0
    mag = 10 ** np.floor(np.log10(v))
    for m in (1, 2, 2.5, 5, 10):
        if v <= m * mag:
            return float(m * mag)
    return float(10 * mag)


def bar_chart(groups: Sequence[str], series: Sequence[str], values, title: str = "", ylabel: str = "") -> str:
    """Grouped bars: one cluster per group, one colour per series.

    ``values`` has shape (groups, series); negative values are drawn from
    zero downward.
    """
    v = np.asarray(values, dtype=float).reshape(len(groups), len(series))
    v = np.where(np.isfinite(v), v, 0.0)
    left, right, top, bottom = 60.0, 130.0, 36.0, 56.0
    gw = max(14.0 * len(series) + 16.0, 44.0)
    width = left + right + gw * len(groups)
    height = 320.0
    ph = height - top - bottom
    vmax = _nice_max(float(v.max(initial=0.0)))
    vmin = -_nice_max(-float(v.min(initial=0.0))) if v.min(initial=0.0) < 0 else 0.0
    span = vmax - vmin

    def ypos(val):
        return top + ph * (vmax - val) / span

    body = [_text(width / 2, 20, title, size=13)]
    for k in range(6):
        val = vmin + span * k / 5
        y = ypos(val)
        body.append(f'<line x1="{_f(left)}" y1="{_f(y)}" x2="{_f(width - right)}" y2="{_f(y)}" stroke="#dddddd"/>')
        body.append(_text(left - 6, y + 4, f"{val:.3g}", anchor="end", size=10))
    body.append(f'<line x1="{_f(left)}" y1="{_f(ypos(0))}" x2="{_f(width - right)}" y2="{_f(ypos(0))}" stroke="black"/>')
    bw = (gw - 16.0) / len(series)
    for g, name in enumerate(groups):
        x0 = left + g * gw + 8.0
        for s in range(len(series)):
            val = v[g, s]
            y1, y2 = sorted((ypos(val), ypos(0)))
            body.append(f'<rect x="{_f(x0 + s * bw)}" y="{_f(y1)}" width="{_f(bw * 0.9)}" height="{_f(y2 - y1)}" '
                        f'fill="{PALETTE[s % len(PALETTE)]}"/>')
        body.append(_text(x0 + (gw - 16.0) / 2, top + ph + 16, name, size=10))
    body.append(_text(16, top + ph / 2, ylabel, rotate=-90))
    for s, name in enumerate(series):
        y = top + 14 * s + 6
        body.append(f'<rect x="{_f(width - right + 12)}" y="{_f(y)}" width="10" height="10" '
                    f'fill="{PALETTE[s % len(PALETTE)]}"/>')
        body.append(_text(width - right + 28, y + 9, name, anchor="start", size=10))
    return _svg(width, height, body)


def _shade(frac: float) -> str:
    # white to dark blue
    frac = float(np.clip(frac, 0.0, 1.0))
    r = int(round(255 - frac * (255 - 8)))
    g = int(round(255 - frac * (255 - 48)))
    b = int(round(255 - frac * (255 - 107)))
    return f"#{r:02x}{g:02x}{b:02x}"


def pair_density(chain, names: Sequence[str], bins: int = 50, ranges=None, title: str = "") -> str:
    """Marginal histograms on the diagonal, binned 2-d densities below it."""
    chain = np.asarray(chain, dtype=float)
    d = chain.shape[1]
    if ranges is None:
        ranges = []
        for k in range(d):
            lo, hi = float(chain[:, k].min()), float(chain[:, k].max())
            ranges.append((lo - 0.5, hi + 0.5) if hi == lo else (lo, hi))
    cell, pad, left, top = 120.0, 10.0, 50.0, 36.0
    size = left + d * (cell + pad) + 20.0
    body = [_text(size / 2, 20, title, size=13)]
    for i in range(d):
        for j in range(i + 1):
            x0 = left + j * (cell + pad)
            y0 = top + i * (cell + pad)
            body.append(f'<rect x="{_f(x0)}" y="{_f(y0)}" width="{_f(cell)}" height="{_f(cell)}" fill="none" stroke="#888888"/>')
            if i == j:
                counts, _ = np.histogram(chain[:, i], bins=bins, range=ranges[i])
                top_c = max(int(counts.max()), 1)
                w = cell / bins
                for b, c in enumerate(counts):
                    if c == 0:
                        continue
                    h = cell * 0.92 * c / top_c
                    body.append(f'<rect x="{_f(x0 + b * w)}" y="{_f(y0 + cell - h)}" width="{_f(w)}" height="{_f(h)}" fill="{PALETTE[0]}"/>')
            else:
                counts, _, _ = np.histogram2d(chain[:, j], chain[:, i], bins=bins, range=[ranges[j], ranges[i]])
                top_c = max(float(counts.max()), 1.0)
                w = cell / bins
                for a in range(bins):
                    for b in range(bins):
                        c = counts[a, b]
                        if c == 0:
                            continue
                        body.append(f'<rect x="{_f(x0 + a * w)}" y="{_f(y0 + cell - (b + 1) * w)}" width="{_f(w)}" '
                                    f'height="{_f(w)}" fill="{_shade(c / top_c)}"/>')
        body.append(_text(left + i * (cell + pad) + cell / 2, top + d * (cell + pad) + 4, names[i], size=10))
        body.append(_text(left - 8, top + i * (cell + pad) + cell / 2, names[i], size=10, rotate=-90))
    return _svg(size, size + 20.0, body)


def write_svg(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path
