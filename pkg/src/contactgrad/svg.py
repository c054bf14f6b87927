"""Dependency-free SVG line charts.

Output is a pure function of the input: coordinates are printed with a fixed
number of decimals and nothing time- or environment-dependent is written, so
identical data gives identical bytes.
"""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 400
MARGIN = dict(left=70, right=150, top=40, bottom=50)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def _finite(vals):
    return [v for v in vals if math.isfinite(v)]


def _range(vals):
    lo, hi = min(vals), max(vals)
    if lo == hi:
        pad = abs(lo) * 0.05 or 1.0
        return lo - pad, hi + pad
    return lo, hi


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _tick(v: float) -> str:
    return f"{v:.4g}"


def render_svg(series, labels, title: str = "", xlabel: str = "", ylabel: str = "") -> str:
    """SVG text for ``series``: a list of ``(xs, ys)`` pairs, one per label.

    Non-finite points are skipped and break the polyline. A series with a
    single point is drawn as a dot.
    """
    series = [(list(map(float, xs)), list(map(float, ys))) for xs, ys in series]
    labels = list(labels)
    if not series or all(len(xs) == 0 for xs, _ in series):
        raise ValueError("nothing to plot: empty series")
    if len(labels) != len(series):
        raise ValueError("need one label per series")
    n = len(series[0][0])
    for xs, ys in series:
        if len(xs) != len(ys) or len(xs) != n:
            raise ValueError("all series must have the same length")

    all_x = _finite([x for xs, _ in series for x in xs])
    all_y = _finite([y for _, ys in series for y in ys])
    if not all_x or not all_y:
        raise ValueError("nothing to plot: no finite values")
    x0, x1 = _range(all_x)
    y0, y1 = _range(all_y)
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(x):
        return MARGIN["left"] + (x - x0) / (x1 - x0) * pw

    def py(y):
        return MARGIN["top"] + (1.0 - (y - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" '
        'fill="none" stroke="black"/>',
    ]
    if title:
        out.append(f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>')
    for i in range(5):
        fx = x0 + (x1 - x0) * i / 4
        fy = y0 + (y1 - y0) * i / 4
        out.append(
            f'<text x="{_fmt(px(fx))}" y="{HEIGHT - MARGIN["bottom"] + 16}" text-anchor="middle">{_tick(fx)}</text>'
        )
        out.append(f'<text x="{MARGIN["left"] - 6}" y="{_fmt(py(fy) + 4)}" text-anchor="end">{_tick(fy)}</text>')
    if xlabel:
        out.append(
            f'<text x="{MARGIN["left"] + pw / 2:.1f}" y="{HEIGHT - 10}" text-anchor="middle">{escape(xlabel)}</text>'
        )
    if ylabel:
        cy = MARGIN["top"] + ph / 2
        out.append(
            f'<text x="16" y="{cy:.1f}" text-anchor="middle" transform="rotate(-90 16 {cy:.1f})">'
            f"{escape(ylabel)}</text>"
        )

    for k, ((xs, ys), label) in enumerate(zip(series, labels)):
        color = PALETTE[k % len(PALETTE)]
        runs, cur = [], []
        for x, y in zip(xs, ys):
            if math.isfinite(x) and math.isfinite(y):
                cur.append((x, y))
            elif cur:
                runs.append(cur)
                cur = []
        if cur:
            runs.append(cur)
        for run in runs:
            if len(run) == 1:
                x, y = run[0]
                out.append(f'<circle cx="{_fmt(px(x))}" cy="{_fmt(py(y))}" r="3" fill="{color}"/>')
            else:
                pts = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in run)
                out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = MARGIN["top"] + 14 + 18 * k
        lx = WIDTH - MARGIN["right"] + 12
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 24}" y="{ly}" class="legend">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_svg(series, labels, path, title: str = "", xlabel: str = "", ylabel: str = "") -> Path:
    """Write :func:`render_svg` output to ``path`` and return the path."""
    path = Path(path)
    text = render_svg(series, labels, title, xlabel, ylabel)
    path.write_text(text, encoding="utf-8")
    return path
