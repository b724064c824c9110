"""Minimal deterministic SVG plots: Love plots and multi-panel line charts with bands."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")
MARKERS = ("circle", "triangle", "square", "diamond")


def _f(x: float) -> str:
    return f"{x:.2f}"


def _marker(kind: str, x: float, y: float, color: str, r: float = 4.0) -> str:
    if kind == "circle":
        return f'<circle cx="{_f(x)}" cy="{_f(y)}" r="{_f(r)}" fill="{color}"/>'
    if kind == "triangle":
        pts = [(x, y - r * 1.2), (x - r, y + r * 0.8), (x + r, y + r * 0.8)]
    elif kind == "square":
        pts = [(x - r, y - r), (x + r, y - r), (x + r, y + r), (x - r, y + r)]
    else:
        pts = [(x, y - r * 1.3), (x + r, y), (x, y + r * 1.3), (x - r, y)]
    coords = " ".join(f"{_f(a)},{_f(b)}" for a, b in pts)
    return f'<polygon points="{coords}" fill="{color}"/>'


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=raw)
    start = step * math.floor(lo / step)
    ticks, t = [], start
    while t <= hi + step * 1e-9:
        ticks.append(round(t, 10))
        t += step
    return ticks


def _tick_label(v: float) -> str:
    s = f"{v:.3g}"
    return "0" if s in ("-0", "0") else s


class _Canvas:
    def __init__(self, width: int, height: int):
        self.width, self.height = width, height
        self.parts: list[str] = []

    def add(self, s: str) -> None:
        self.parts.append(s)

    def text(self, x, y, s, size=11, anchor="middle", rotate=None, weight="normal"):
        tr = f' transform="rotate({rotate} {_f(x)} {_f(y)})"' if rotate else ""
        self.add(f'<text x="{_f(x)}" y="{_f(y)}" font-size="{size}" text-anchor="{anchor}" '
                 f'font-family="sans-serif" font-weight="{weight}"{tr}>{escape(str(s))}</text>')

    def line(self, x1, y1, x2, y2, color="#000", width=1.0, dash=None):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.add(f'<line x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}" '
                 f'stroke="{color}" stroke-width="{width}"{d}/>')

    def render(self) -> str:
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" '
                f'height="{self.height}" viewBox="0 0 {self.width} {self.height}">')
        body = "\n".join(self.parts)
        return f'{head}\n<rect width="100%" height="100%" fill="white"/>\n{body}\n</svg>\n'


def love_plot(labels: Sequence[str], unadjusted: Sequence[float], adjusted: Sequence[float],
              title: str = "Covariate balance", xlabel: str = "Absolute standardized mean difference"
              ) -> str:
    """One row per covariate: unadjusted as circles, adjusted as triangles, reference line at 0."""
    row_h, left, right, top, bottom = 26, 150, 30, 50, 60
    width = 640
    height = top + bottom + row_h * max(len(labels), 1)
    c = _Canvas(width, height)
    finite = [v for v in list(unadjusted) + list(adjusted) if v == v]
    xmax = max(finite + [0.1]) * 1.1
    ticks = _nice_ticks(0.0, xmax)
    xmax = ticks[-1]
    sx = lambda v: left + (width - left - right) * v / xmax
    c.text(width / 2, 24, title, size=14, weight="bold")
    y0, y1 = top, height - bottom
    c.line(left, y1, width - right, y1)
    for t in ticks:
        c.line(sx(t), y1, sx(t), y1 + 4)
        c.text(sx(t), y1 + 17, _tick_label(t))
    c.line(sx(0), y0, sx(0), y1, color="#555", dash="4,3")
    for i, lab in enumerate(labels):
        y = top + row_h * (i + 0.5)
        c.line(left, y, width - right, y, color="#eee")
        c.text(left - 8, y + 4, lab, anchor="end")
        if unadjusted[i] == unadjusted[i]:
            c.add(_marker("circle", sx(unadjusted[i]), y, PALETTE[0]))
        if adjusted[i] == adjusted[i]:
            c.add(_marker("triangle", sx(adjusted[i]), y, PALETTE[3]))
    c.text((left + width - right) / 2, height - 22, xlabel)
    lx = width - right - 170
    c.add(_marker("circle", lx, 40, PALETTE[0]))
    c.text(lx + 10, 44, "Unadjusted", anchor="start", size=10)
    c.add(_marker("triangle", lx + 85, 40, PALETTE[3]))
    c.text(lx + 95, 44, "Adjusted", anchor="start", size=10)
    return c.render()


@dataclass
class Series:
    name: str
    x: list[float]
    y: list[float]
    lo: list[float] = field(default_factory=list)
    hi: list[float] = field(default_factory=list)


@dataclass
class Panel:
    title: str
    series: list[Series]


def line_panels(panels: Sequence[Panel], xlabel: str, ylabel: str, title: str = "",
                panel_width: int = 300, height: int = 320) -> str:
    """Side-by-side panels sharing a y range; each series is a line with markers and a shaded band."""
    left, right, top, bottom, gap = 60, 20, 50, 80, 20
    width = left + right + len(panels) * panel_width + (len(panels) - 1) * gap
    c = _Canvas(width, height)
    vals = [v for p in panels for s in p.series for v in (s.y + s.lo + s.hi) if v == v]
    xs = [v for p in panels for s in p.series for v in s.x]
    ylo, yhi = (min(vals), max(vals)) if vals else (0.0, 1.0)
    ylo, yhi = min(ylo, 0.0), max(yhi, 0.0)
    yticks = _nice_ticks(ylo, yhi)
    ylo, yhi = yticks[0], yticks[-1]
    xlo, xhi = (min(xs), max(xs)) if xs else (0.0, 1.0)
    if xhi == xlo:
        xlo, xhi = xlo - 0.5, xhi + 0.5
    pad = 0.05 * (xhi - xlo)
    xlo, xhi = xlo - pad, xhi + pad
    ptop, pbot = top, height - bottom
    sy = lambda v: pbot - (pbot - ptop) * (v - ylo) / (yhi - ylo)
    if title:
        c.text(width / 2, 20, title, size=14, weight="bold")
    names: list[str] = []
    for p in panels:
        for s in p.series:
            if s.name not in names:
                names.append(s.name)
    for k, panel in enumerate(panels):
        px = left + k * (panel_width + gap)
        sx = lambda v, px=px: px + panel_width * (v - xlo) / (xhi - xlo)
        c.text(px + panel_width / 2, top - 10, panel.title, size=12)
        c.line(px, pbot, px + panel_width, pbot)
        c.line(px, ptop, px, pbot)
        c.line(px, sy(0), px + panel_width, sy(0), color="#999", dash="4,3")
        for t in sorted(set(xs)):
            c.line(sx(t), pbot, sx(t), pbot + 4)
            c.text(sx(t), pbot + 16, _tick_label(t))
        for t in yticks:
            c.line(px - 4, sy(t), px, sy(t))
            if k == 0:
                c.text(px - 7, sy(t) + 4, _tick_label(t), anchor="end")
        for s in panel.series:
            i = names.index(s.name)
            color, marker = PALETTE[i % len(PALETTE)], MARKERS[i % len(MARKERS)]
            pts = [(a, b) for a, b in zip(s.x, s.y) if b == b]
            if s.lo and s.hi:
                band = [(a, l, h) for a, l, h in zip(s.x, s.lo, s.hi) if l == l and h == h]
                if band:
                    upper = " ".join(f"{_f(sx(a))},{_f(sy(h))}" for a, _, h in band)
                    lower = " ".join(f"{_f(sx(a))},{_f(sy(l))}" for a, l, _ in reversed(band))
                    c.add(f'<polygon points="{upper} {lower}" fill="{color}" fill-opacity="0.18" '
                          f'stroke="none"/>')
            if len(pts) > 1:
                path = " ".join(f"{_f(sx(a))},{_f(sy(b))}" for a, b in pts)
                c.add(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>')
            for a, b in pts:
                c.add(_marker(marker, sx(a), sy(b), color, r=3.5))
        c.text(px + panel_width / 2, pbot + 34, xlabel)
    c.text(16, (ptop + pbot) / 2, ylabel, rotate=-90)
    lx = left
    for i, name in enumerate(names):
        x = lx + i * 130
        c.add(_marker(MARKERS[i % len(MARKERS)], x, height - 18, PALETTE[i % len(PALETTE)]))
        c.text(x + 10, height - 14, name, anchor="start", size=10)
    return c.render()
