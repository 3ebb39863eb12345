"""Minimal standalone SVG plots built from polyline and rect primitives."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

W, H = 480, 360
LEFT, RIGHT, TOP, BOTTOM = 60, 20, 30, 50
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _range(values, pad=0.05):
    vals = [v for v in values if math.isfinite(v)]
    if not vals:
        return 0.0, 1.0
    lo, hi = min(vals), max(vals)
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    d = (hi - lo) * pad
    return lo - d, hi + d


class _Frame:
    def __init__(self, xr, yr):
        self.x0, self.x1 = xr
        self.y0, self.y1 = yr

    def px(self, x):
        return LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)

    def py(self, y):
        return H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)


def _axes(f: _Frame, title, xlabel, ylabel):
    parts = [
        f'<rect x="{LEFT}" y="{TOP}" width="{W - LEFT - RIGHT}" height="{H - TOP - BOTTOM}" '
        'fill="none" stroke="#000"/>',
        f'<text x="{W / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<text x="{W / 2}" y="{H - 10}" text-anchor="middle" font-size="11">{escape(xlabel)}</text>',
        f'<text x="14" y="{H / 2}" text-anchor="middle" font-size="11" '
        f'transform="rotate(-90 14 {H / 2})">{escape(ylabel)}</text>',
    ]
    for i in range(5):
        xv = f.x0 + (f.x1 - f.x0) * i / 4
        yv = f.y0 + (f.y1 - f.y0) * i / 4
        parts.append(f'<text x="{f.px(xv):.1f}" y="{H - BOTTOM + 15}" text-anchor="middle" '
                     f'font-size="9">{xv:.3g}</text>')
        parts.append(f'<text x="{LEFT - 4}" y="{f.py(yv) + 3:.1f}" text-anchor="end" '
                     f'font-size="9">{yv:.3g}</text>')
    return parts


def _doc(parts):
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
            f'viewBox="0 0 {W} {H}">\n' + "\n".join(parts) + "\n</svg>\n")


def line_plot(series, title="", xlabel="", ylabel="", diagonal=False) -> str:
    """``series`` is a list of ``(xs, ys, label)``; ``diagonal`` draws y = x."""
    xs = [x for s in series for x in s[0]]
    ys = [y for s in series for y in s[1]]
    if diagonal:
        lo, hi = _range(xs + ys)
        f = _Frame((lo, hi), (lo, hi))
    else:
        f = _Frame(_range(xs), _range(ys))
    parts = _axes(f, title, xlabel, ylabel)
    if diagonal:
        parts.append(f'<polyline points="{f.px(f.x0):.1f},{f.py(f.y0):.1f} '
                     f'{f.px(f.x1):.1f},{f.py(f.y1):.1f}" fill="none" stroke="#888" '
                     'stroke-dasharray="4,3"/>')
    for k, (sx, sy, label) in enumerate(series):
        c = COLORS[k % len(COLORS)]
        pts = " ".join(f"{f.px(x):.1f},{f.py(y):.1f}" for x, y in zip(sx, sy)
                       if math.isfinite(x) and math.isfinite(y))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{c}" stroke-width="1.5"/>')
        parts.append(f'<text x="{LEFT + 8}" y="{TOP + 14 + 13 * k}" font-size="10" '
                     f'fill="{c}">{escape(str(label))}</text>')
    return _doc(parts)


def box_plot(groups, title="", ylabel="") -> str:
    """``groups`` maps a label to a dict with p10/q1/median/q3/p90."""
    labels = list(groups)
    vals = [groups[g][k] for g in labels for k in ("p10", "p90")]
    f = _Frame((0, max(len(labels), 1)), _range(vals))
    parts = _axes(f, title, "", ylabel)
    for i, g in enumerate(labels):
        s = groups[g]
        xc = f.px(i + 0.5)
        half = 0.3 * (W - LEFT - RIGHT) / max(len(labels), 1)
        top, bot = f.py(s["q3"]), f.py(s["q1"])
        parts.append(f'<polyline points="{xc:.1f},{f.py(s["p10"]):.1f} {xc:.1f},{f.py(s["p90"]):.1f}" '
                     'stroke="#000" fill="none"/>')
        parts.append(f'<rect x="{xc - half:.1f}" y="{top:.1f}" width="{2 * half:.1f}" '
                     f'height="{max(bot - top, 0.5):.1f}" fill="#9ecae1" stroke="#000"/>')
        parts.append(f'<polyline points="{xc - half:.1f},{f.py(s["median"]):.1f} '
                     f'{xc + half:.1f},{f.py(s["median"]):.1f}" stroke="#d62728" fill="none"/>')
        parts.append(f'<text x="{xc:.1f}" y="{H - BOTTOM + 28}" text-anchor="middle" '
                     f'font-size="8">{escape(g)}</text>')
    return _doc(parts)
