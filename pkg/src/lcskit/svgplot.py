"""Minimal deterministic SVG output: polylines, markers, multi-panel layouts.

Self-contained vector plots without a plotting dependency; coordinates are
formatted with fixed precision and elements are emitted in insertion order,
so identical inputs give byte-identical files.
"""

from __future__ import annotations

import numpy as np

# anchor colors of a small viridis-like map, dark to bright
_CMAP = [
    (68, 1, 84), (59, 82, 139), (33, 145, 140), (94, 201, 98),
    (253, 231, 37),
]


def colormap(v):
    """Map v in [0, 1] to a hex color."""
    v = min(1.0, max(0.0, float(v)))
    x = v * (len(_CMAP) - 1)
    i = min(int(x), len(_CMAP) - 2)
    f = x - i
    rgb = [round((1 - f) * a + f * b) for a, b in zip(_CMAP[i], _CMAP[i + 1])]
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def _fmt(v):
    return f"{v:.3f}"


class Panel:
    """One data panel mapping world coordinates into a pixel rectangle."""

    def __init__(self, x0, y0, w, h, world):
        self.px, self.py, self.pw, self.ph = x0, y0, w, h
        self.wx0, self.wx1, self.wy0, self.wy1 = world
        self.elements = []

    def to_px(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        sx = self.pw / (self.wx1 - self.wx0)
        sy = self.ph / (self.wy1 - self.wy0)
        x = self.px + (pts[:, 0] - self.wx0) * sx
        y = self.py + self.ph - (pts[:, 1] - self.wy0) * sy
        return x, y

    def polyline(self, pts, color="#000000", width=1.0, opacity=1.0):
        if len(pts) < 2:
            return
        x, y = self.to_px(pts)
        coords = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(x, y))
        op = "" if opacity >= 1.0 else f' stroke-opacity="{opacity:.2f}"'
        self.elements.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" '
            f'stroke-width="{width:.2f}"{op}/>')

    def markers(self, pts, color="#000000", r=2.0, stroke=None):
        x, y = self.to_px(pts)
        extra = f' stroke="{stroke}" stroke-width="0.8"' if stroke else ""
        for a, b in zip(x, y):
            self.elements.append(
                f'<circle cx="{_fmt(a)}" cy="{_fmt(b)}" r="{r:.1f}" '
                f'fill="{color}"{extra}/>')

    def frame(self, label=None):
        self.elements.insert(0, (
            f'<rect x="{_fmt(self.px)}" y="{_fmt(self.py)}" '
            f'width="{_fmt(self.pw)}" height="{_fmt(self.ph)}" fill="white" '
            'stroke="#888888" stroke-width="1.0"/>'))
        if label:
            self.elements.append(
                f'<text x="{_fmt(self.px + 4)}" y="{_fmt(self.py + 14)}" '
                f'font-family="monospace" font-size="12">{label}</text>')


class Figure:
    """A row of equally sized panels sharing one SVG document."""

    def __init__(self, n_panels, world, panel_px=420, margin=10):
        self.margin = margin
        wx0, wx1, wy0, wy1 = world
        aspect = (wy1 - wy0) / (wx1 - wx0)
        self.panel_w = panel_px
        self.panel_h = max(1, round(panel_px * aspect))
        self.width = margin + n_panels * (self.panel_w + margin)
        self.height = 2 * margin + self.panel_h
        self.panels = [
            Panel(margin + i * (self.panel_w + margin), margin,
                  self.panel_w, self.panel_h, world)
            for i in range(n_panels)
        ]

    def render(self) -> str:
        body = []
        for p in self.panels:
            body.extend(p.elements)
        inner = "\n".join(body)
        return (
            f'<svg xmlns="http://www.w3.org/2000/svg" '
            f'width="{self.width}" height="{self.height}" '
            f'viewBox="0 0 {self.width} {self.height}">\n'
            f'{inner}\n</svg>\n')

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.render())
