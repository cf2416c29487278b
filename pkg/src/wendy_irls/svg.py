"""Minimal SVG quick-look plots (polylines and axes, no plotting dependency)."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

__all__ = ["cloud_chart", "line_chart"]

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f", "#393b79"]

_W, _H = 640, 360
_ML, _MR, _MT, _MB = 64, 120, 32, 48


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    return [start + i * step for i in range(int((hi - start) / step + 1e-9) + 1)]


def _fmt(v: float) -> str:
    return f"{v:.4g}"


class _Panel:
    def __init__(self, x0: float, y0: float, w: float, h: float, xlim, ylim):
        self.x0, self.y0, self.w, self.h = x0, y0, w, h
        self.xlo, self.xhi = xlim
        self.ylo, self.yhi = ylim
        if self.xhi <= self.xlo:
            self.xhi = self.xlo + 1.0
        if self.yhi <= self.ylo:
            pad = abs(self.ylo) * 0.05 or 0.5
            self.ylo, self.yhi = self.ylo - pad, self.yhi + pad

    def px(self, x):
        return self.x0 + (np.asarray(x) - self.xlo) / (self.xhi - self.xlo) * self.w

    def py(self, y):
        return self.y0 + self.h - (np.asarray(y) - self.ylo) / (self.yhi - self.ylo) * self.h

    def axes(self, xlabel: str, ylabel: str) -> list[str]:
        out = [
            f'<rect x="{self.x0:.1f}" y="{self.y0:.1f}" width="{self.w:.1f}" height="{self.h:.1f}" fill="none" stroke="#333"/>'
        ]
        for t in _nice_ticks(self.xlo, self.xhi):
            x = float(self.px(t))
            yb = self.y0 + self.h
            out.append(f'<line x1="{x:.1f}" y1="{yb:.1f}" x2="{x:.1f}" y2="{yb + 4:.1f}" stroke="#333"/>')
            out.append(f'<text x="{x:.1f}" y="{yb + 16:.1f}" font-size="10" text-anchor="middle">{_fmt(t)}</text>')
        for t in _nice_ticks(self.ylo, self.yhi):
            y = float(self.py(t))
            out.append(f'<line x1="{self.x0 - 4:.1f}" y1="{y:.1f}" x2="{self.x0:.1f}" y2="{y:.1f}" stroke="#333"/>')
            out.append(f'<text x="{self.x0 - 6:.1f}" y="{y + 3:.1f}" font-size="10" text-anchor="end">{_fmt(t)}</text>')
        out.append(
            f'<text x="{self.x0 + self.w / 2:.1f}" y="{self.y0 + self.h + 34:.1f}" font-size="11" text-anchor="middle">{escape(xlabel)}</text>'
        )
        yc = self.y0 + self.h / 2
        out.append(
            f'<text x="{self.x0 - 48:.1f}" y="{yc:.1f}" font-size="11" text-anchor="middle" transform="rotate(-90 {self.x0 - 48:.1f} {yc:.1f})">{escape(ylabel)}</text>'
        )
        return out

    def polyline(self, x, y, color: str, width: float = 1.5, opacity: float = 1.0, dash: str | None = None) -> str:
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        ok = np.isfinite(x) & np.isfinite(y)
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(self.px(x[ok]), self.py(y[ok])))
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        return (
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}" '
            f'stroke-opacity="{opacity}"{extra}/>'
        )


def _doc(width: float, height: float, body: list[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
        f'viewBox="0 0 {width:.0f} {height:.0f}" font-family="sans-serif">'
    )
    return "\n".join([head, '<rect width="100%" height="100%" fill="white"/>', *body, "</svg>"]) + "\n"


def _limits(arrays) -> tuple[float, float]:
    vals = np.concatenate([np.asarray(a, dtype=float).ravel() for a in arrays])
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        return 0.0, 1.0
    return float(vals.min()), float(vals.max())


def line_chart(
    x,
    series: dict[str, np.ndarray],
    *,
    xlabel: str = "",
    ylabel: str = "",
    title: str = "",
    ylim: tuple[float, float] | None = None,
    hline: float | None = None,
) -> str:
    """One polyline per named series against a shared ``x``."""
    x = np.asarray(x, dtype=float)
    ylim = ylim or _limits(series.values())
    panel = _Panel(_ML, _MT, _W - _ML - _MR, _H - _MT - _MB, _limits([x]), ylim)
    body = panel.axes(xlabel, ylabel)
    if title:
        body.append(f'<text x="{_W / 2:.1f}" y="20" font-size="13" text-anchor="middle">{escape(title)}</text>')
    if hline is not None:
        body.append(panel.polyline([panel.xlo, panel.xhi], [hline, hline], "#999", 1.0, dash="4,3"))
    for k, (name, y) in enumerate(series.items()):
        color = _PALETTE[k % len(_PALETTE)]
        body.append(panel.polyline(x, y, color))
        for a, b in zip(panel.px(x), panel.py(np.asarray(y, dtype=float))):
            if math.isfinite(a) and math.isfinite(b):
                body.append(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="2.5" fill="{color}"/>')
        ly = _MT + 14 * k + 8
        body.append(f'<line x1="{_W - _MR + 10}" y1="{ly}" x2="{_W - _MR + 28}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        body.append(f'<text x="{_W - _MR + 32}" y="{ly + 4}" font-size="10">{escape(name)}</text>')
    return _doc(_W, _H, body)


def cloud_chart(
    times,
    samples: np.ndarray,
    central: np.ndarray,
    *,
    data: np.ndarray | None = None,
    truth: np.ndarray | None = None,
    title: str = "",
    state_names: list[str] | None = None,
) -> str:
    """Light sample curves behind the central fit, one panel per state."""
    times = np.asarray(times, dtype=float)
    samples = np.asarray(samples, dtype=float)
    d = central.shape[1]
    names = state_names or [f"u{i + 1}" for i in range(d)]
    ph = 220
    height = _MT + d * (ph + _MB)
    body = []
    if title:
        body.append(f'<text x="{_W / 2:.1f}" y="20" font-size="13" text-anchor="middle">{escape(title)}</text>')
    for i in range(d):
        arrays = [central[:, i]] + ([data[:, i]] if data is not None else [])
        lo, hi = _limits(arrays)
        pad = 0.25 * (hi - lo or 1.0)
        # clip the view so a few wild draws do not flatten the panel
        s_lo, s_hi = _limits([samples[:, :, i]])
        ylim = (max(lo - pad, s_lo), min(hi + pad, s_hi)) if samples.size else (lo, hi)
        ylim = (min(ylim[0], lo), max(ylim[1], hi))
        panel = _Panel(_ML, _MT + i * (ph + _MB), _W - _ML - _MR, ph, _limits([times]), ylim)
        body.append(f'<clipPath id="c{i}"><rect x="{panel.x0}" y="{panel.y0}" width="{panel.w}" height="{panel.h}"/></clipPath>')
        body.extend(panel.axes("t", names[i]))
        body.append(f'<g clip-path="url(#c{i})">')
        for s in samples:
            body.append(panel.polyline(times, s[:, i], "#888", 0.8, 0.25))
        if data is not None:
            for a, b in zip(panel.px(times), panel.py(data[:, i])):
                if math.isfinite(b):
                    body.append(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="1.5" fill="#1f77b4" fill-opacity="0.6"/>')
        if truth is not None:
            body.append(panel.polyline(times, truth[:, i], "#2ca02c", 1.5, dash="5,3"))
        body.append(panel.polyline(times, central[:, i], "#d62728", 2.0))
        body.append("</g>")
    return _doc(_W, height, body)
