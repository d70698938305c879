"""Minimal static log-log plots as SVG polylines."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def loglog_svg(series: list[tuple[str, list[float], list[float]]], title: str = "",
               width: int = 480, height: int = 360) -> str:
    """series: (label, t values, y values); nonpositive points are dropped."""
    pts = [(lab, [(math.log10(t), math.log10(y)) for t, y in zip(ts, ys) if t > 0 and y > 0])
           for lab, ts, ys in series]
    allx = [p[0] for _, ps in pts for p in ps] or [0.0, 1.0]
    ally = [p[1] for _, ps in pts for p in ps] or [0.0, 1.0]
    x0, x1 = min(allx), max(allx)
    y0, y1 = min(ally), max(ally)
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1
    pad = 50

    def sx(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>',
           f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
           f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
           f'<text x="{width / 2:.1f}" y="{height - 12}" text-anchor="middle" font-size="11">log10 t</text>',
           f'<text x="14" y="{height / 2:.1f}" font-size="11" transform="rotate(-90 14 {height / 2:.1f})">log10 norm</text>']
    for v in (x0, x1):
        out.append(f'<text x="{sx(v):.1f}" y="{height - pad + 14}" text-anchor="middle" font-size="10">{v:.2f}</text>')
    for v in (y0, y1):
        out.append(f'<text x="{pad - 4}" y="{sy(v):.1f}" text-anchor="end" font-size="10">{v:.2f}</text>')
    for i, (lab, ps) in enumerate(pts):
        color = COLORS[i % len(COLORS)]
        line = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in ps)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{line}"/>')
        out.append(f'<text x="{width - pad + 2}" y="{pad + 14 * i}" font-size="10" fill="{color}">{escape(lab)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
