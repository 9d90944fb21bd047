"""Minimal SVG plots: polylines, shaded bands, level lines and circles."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


class Canvas:
    """Maps data coordinates into a fixed-size SVG viewport."""

    def __init__(self, xlim, ylim, width=720, height=360, margin=40, equal=False):
        self.w, self.h, self.mg = width, height, margin
        x0, x1 = xlim
        y0, y1 = ylim
        if x1 <= x0:
            x0, x1 = x0 - 0.5, x0 + 0.5
        if y1 <= y0:
            y0, y1 = y0 - 0.5, y0 + 0.5
        sx = (width - 2 * margin) / (x1 - x0)
        sy = (height - 2 * margin) / (y1 - y0)
        if equal:
            sx = sy = min(sx, sy)
        self.x0, self.y0, self.sx, self.sy = x0, y0, sx, sy
        self.items: list[str] = []

    def px(self, x, y):
        return self.mg + (x - self.x0) * self.sx, self.h - self.mg - (y - self.y0) * self.sy

    def _points(self, xs, ys):
        pts = []
        for x, y in zip(xs, ys):
            if math.isfinite(x) and math.isfinite(y):
                X, Y = self.px(x, y)
                pts.append(f"{X:.2f},{Y:.2f}")
        return " ".join(pts)

    def polyline(self, xs, ys, color="#1f77b4", width=1.2):
        self.items.append(f'<polyline fill="none" stroke="{color}" stroke-width="{width}" '
                          f'points="{self._points(xs, ys)}"/>')

    def band(self, xs, lo, hi, color="#999999", opacity=0.25):
        ok = np.isfinite(lo) & np.isfinite(hi)
        xs, lo, hi = np.asarray(xs)[ok], np.asarray(lo)[ok], np.asarray(hi)[ok]
        if xs.size == 0:
            return
        if xs.size == 1:  # isolated constraint: draw a vertical bar
            self.polyline([xs[0], xs[0]], [lo[0], hi[0]], color=color, width=3)
            return
        pts = self._points(np.concatenate([xs, xs[::-1]]), np.concatenate([hi, lo[::-1]]))
        self.items.append(f'<polygon fill="{color}" fill-opacity="{opacity}" stroke="none" '
                          f'points="{pts}"/>')

    def hline(self, y, x0, x1, color="#555555"):
        X0, Y = self.px(x0, y)
        X1, _ = self.px(x1, y)
        self.items.append(f'<line x1="{X0:.2f}" y1="{Y:.2f}" x2="{X1:.2f}" y2="{Y:.2f}" '
                          f'stroke="{color}" stroke-dasharray="4 3"/>')

    def circle(self, cx, cy, r, color="#999999"):
        X, Y = self.px(cx, cy)
        self.items.append(f'<ellipse cx="{X:.2f}" cy="{Y:.2f}" rx="{r * self.sx:.2f}" '
                          f'ry="{r * self.sy:.2f}" fill="{color}" fill-opacity="0.35"/>')

    def text(self, s, x=None, y=None):
        X = self.mg if x is None else x
        Y = self.mg * 0.6 if y is None else y
        self.items.append(f'<text x="{X}" y="{Y}" font-family="sans-serif" font-size="13">'
                          f'{escape(s)}</text>')

    def render(self) -> str:
        body = "\n".join(self.items)
        return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.w}" height="{self.h}" '
                f'viewBox="0 0 {self.w} {self.h}">\n<rect width="100%" height="100%" fill="white"/>\n'
                f"{body}\n</svg>\n")


def _lims(*arrays):
    vals = np.concatenate([np.ravel(np.asarray(a, float)) for a in arrays])
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        return 0.0, 1.0
    lo, hi = float(vals.min()), float(vals.max())
    pad = 0.05 * (hi - lo) if hi > lo else 0.5
    return lo - pad, hi + pad


def time_series_svg(outcome) -> str:
    """Outputs (and the first input) against ``k`` with bands and levels."""
    y = np.asarray(outcome.y, float).reshape(outcome.u.shape[0], -1)
    u = np.asarray(outcome.u, float).reshape(outcome.u.shape[0], -1)
    K = y.shape[0]
    k = np.arange(K)
    top = Canvas((0, K - 1), _lims(y, *[b for pair in outcome.bands.values() for b in pair]),
                 height=300)
    for name, (lo, hi) in outcome.bands.items():
        top.band(k, np.asarray(lo, float), np.asarray(hi, float))
    for j in range(y.shape[1]):
        top.polyline(k, y[:, j], COLORS[j % len(COLORS)])
    top.text(f"{outcome.kind}: outputs {', '.join(outcome.y_names)}")
    bottom = Canvas((0, K - 1), _lims(u[:, 0], list(outcome.levels)), height=200)
    for lv in outcome.levels:
        bottom.hline(lv, 0, K - 1)
    bottom.polyline(k, u[:, 0], COLORS[0])
    bottom.text(f"input {outcome.u_names[0]}")
    return _stack(top, bottom)


def _stack(top: Canvas, bottom: Canvas) -> str:
    h = top.h + bottom.h
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{top.w}" height="{h}" '
            f'viewBox="0 0 {top.w} {h}">\n<rect width="100%" height="100%" fill="white"/>\n'
            + "\n".join(top.items)
            + f'\n<g transform="translate(0,{top.h})">\n' + "\n".join(bottom.items) + "\n</g>\n</svg>\n")


def path_svg(outcome, extra_paths=()) -> str:
    """Planar trajectory with obstacles and optional reference paths."""
    p = np.asarray(outcome.path, float)
    pts = [p] + [np.asarray(q, float) for q in extra_paths]
    xs = np.concatenate([q[:, 0] for q in pts])
    ys = np.concatenate([q[:, 1] for q in pts])
    for ob in outcome.obstacles:
        r = ob["radius"] if ob["shape"] == "circle" else max(ob["half_axes"])
        xs = np.append(xs, [ob["center"][0] - r, ob["center"][0] + r])
        ys = np.append(ys, [ob["center"][1] - r, ob["center"][1] + r])
    cv = Canvas(_lims(xs), _lims(ys), width=520, height=520, equal=True)
    for ob in outcome.obstacles:
        if ob["shape"] == "circle":
            cv.circle(ob["center"][0], ob["center"][1], ob["radius"])
        else:
            th = np.linspace(0, 2 * np.pi, 90)
            c, s = math.cos(ob["angle"]), math.sin(ob["angle"])
            h1, h2 = ob["half_axes"]
            if ob["shape"] == "ellipse":
                qx, qy = h1 * np.cos(th), h2 * np.sin(th)
            else:
                qx = h1 * np.array([-1, 1, 1, -1, -1])
                qy = h2 * np.array([-1, -1, 1, 1, -1])
            cv.polyline(ob["center"][0] + c * qx - s * qy, ob["center"][1] + s * qx + c * qy,
                        "#999999", 2)
    for j, q in enumerate(pts[1:]):
        cv.polyline(q[:, 0], q[:, 1], "#aaaaaa", 0.8)
    cv.polyline(p[:, 0], p[:, 1], COLORS[0], 1.6)
    cv.text(f"{outcome.kind}: trajectory")
    return cv.render()


def scenario_svg(outcome, extra_paths=()) -> str:
    if outcome.path is not None:
        return path_svg(outcome, extra_paths)
    return time_series_svg(outcome)
