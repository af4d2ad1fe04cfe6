"""Minimal standalone SVG bar charts with error bars."""

from __future__ import annotations

import math
from typing import Sequence
from xml.sax.saxutils import escape

COLORS = ("#4c72b0", "#dd8452", "#55a868", "#c44e52")


def _nice_range(lo: float, hi: float) -> tuple[float, float]:
    lo, hi = min(lo, 0.0), max(hi, 0.0)
    if hi == lo:
        hi = lo + 1.0
    pad = 0.05 * (hi - lo)
    return lo - (pad if lo < 0 else 0.0), hi + pad


def bar_chart_svg(labels: Sequence[str], series: Sequence[tuple], title: str = "",
                  ylabel: str = "", width: int = 640, height: int = 360) -> str:
    """Grouped bars; ``series`` holds ``(name, values, errors)`` triples, NaN errors omitted."""
    n = len(labels)
    left, right, top, bottom = 60, 20, 40, 90
    pw, ph = width - left - right, height - top - bottom
    vals = [v for _, vs, _ in series for v in vs]
    errs = [e if e == e else 0.0 for _, _, es in series for e in es]
    hi = max([v + e for v, e in zip(vals, errs)] or [1.0])
    lo = min([v - e for v, e in zip(vals, errs)] or [0.0])
    y0, y1 = _nice_range(lo, hi)

    def ypix(v):
        return top + ph * (y1 - v) / (y1 - y0)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<text x="14" y="{top + ph / 2:.1f}" transform="rotate(-90 14 {top + ph / 2:.1f})" '
           f'text-anchor="middle">{escape(ylabel)}</text>']
    for k in range(6):
        v = y0 + (y1 - y0) * k / 5
        y = ypix(v)
        out.append(f'<line x1="{left}" x2="{left + pw}" y1="{y:.1f}" y2="{y:.1f}" stroke="#ddd"/>')
        out.append(f'<text x="{left - 4}" y="{y + 4:.1f}" text-anchor="end">{v:.3g}</text>')
    zero = ypix(0.0)
    out.append(f'<line x1="{left}" x2="{left + pw}" y1="{zero:.1f}" y2="{zero:.1f}" stroke="black"/>')

    slot = pw / max(n, 1)
    bw = 0.8 * slot / max(len(series), 1)
    for i, label in enumerate(labels):
        x0 = left + i * slot + 0.1 * slot
        for s, (_, vs, es) in enumerate(series):
            v, e = vs[i], es[i]
            x = x0 + s * bw
            ytop, ybot = sorted((ypix(v), zero))
            out.append(f'<rect x="{x:.1f}" y="{ytop:.1f}" width="{bw:.1f}" height="{ybot - ytop:.1f}" '
                       f'fill="{COLORS[s % len(COLORS)]}"/>')
            if not math.isnan(e) and e > 0:
                cx = x + bw / 2
                out.append(f'<line x1="{cx:.1f}" x2="{cx:.1f}" y1="{ypix(v + e):.1f}" '
                           f'y2="{ypix(v - e):.1f}" stroke="black"/>')
        cx = left + (i + 0.5) * slot
        out.append(f'<text x="{cx:.1f}" y="{top + ph + 12}" text-anchor="end" '
                   f'transform="rotate(-35 {cx:.1f} {top + ph + 12})">{escape(str(label))}</text>')
    for s, (name, _, _) in enumerate(series):
        x = left + 10 + 90 * s
        out.append(f'<rect x="{x}" y="{height - 16}" width="10" height="10" fill="{COLORS[s % len(COLORS)]}"/>')
        out.append(f'<text x="{x + 14}" y="{height - 7}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
