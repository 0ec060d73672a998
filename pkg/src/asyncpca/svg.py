"""Static SVG line charts written directly, no plotting dependency.

Charts are pure functions of their inputs: identical data yields byte
identical files.  Geometry is the usual margin-box layout with nice-number
ticks; bands (for confidence intervals) render as translucent polygons
under the lines.  Single-point series degenerate to a marker.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

from .core import IoFailure, TypeMismatch

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

_MARGIN_L = 64.0
_MARGIN_R = 16.0
_MARGIN_T = 36.0
_MARGIN_B = 46.0


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def nice_ticks(lo: float, hi: float, target: int = 5) -> List[float]:
    """Round tick positions covering [lo, hi] at a 1/2/5 step."""
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise TypeMismatch("tick range must be finite")
    if hi <= lo:
        hi = lo + (abs(lo) if lo != 0 else 1.0)
    span = hi - lo
    raw = span / max(target, 2)
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 5.0, 10.0):
        step = mult * mag
        if span / step <= target + 1:
            break
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-9 * step:
        ticks.append(0.0 if abs(t) < 1e-12 * step else t)
        t += step
    return ticks


@dataclass
class Series:
    """One labeled line, optionally with a shaded band around it."""

    label: str
    x: Sequence[float]
    y: Sequence[float]
    band_lo: Optional[Sequence[float]] = None
    band_hi: Optional[Sequence[float]] = None

    def __post_init__(self) -> None:
        if len(self.x) != len(self.y) or len(self.x) == 0:
            raise TypeMismatch("series needs matching non-empty x and y")
        has_lo, has_hi = self.band_lo is not None, self.band_hi is not None
        if has_lo != has_hi:
            raise TypeMismatch("band needs both lo and hi")
        if has_lo and (len(self.band_lo) != len(self.x) or len(self.band_hi) != len(self.x)):
            raise TypeMismatch("band length must match the series")


def line_chart(
    series: Sequence[Series],
    *,
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    width: int = 720,
    height: int = 460,
    path: Optional[Union[str, Path]] = None,
) -> str:
    """Render labeled series into one SVG document; returns the markup."""
    if not series:
        raise TypeMismatch("chart needs at least one series")
    xs: List[float] = []
    ys: List[float] = []
    for s in series:
        xs.extend(float(v) for v in s.x)
        ys.extend(float(v) for v in s.y)
        if s.band_lo is not None:
            ys.extend(float(v) for v in s.band_lo)
            ys.extend(float(v) for v in s.band_hi)
    if not all(math.isfinite(v) for v in xs + ys):
        raise TypeMismatch("chart data must be finite")
    x_ticks = nice_ticks(min(xs), max(xs))
    y_ticks = nice_ticks(min(ys), max(ys))
    x_lo, x_hi = min(min(xs), x_ticks[0]), max(max(xs), x_ticks[-1])
    y_lo, y_hi = min(min(ys), y_ticks[0]), max(max(ys), y_ticks[-1])
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5

    plot_w = width - _MARGIN_L - _MARGIN_R
    plot_h = height - _MARGIN_T - _MARGIN_B

    def px(v: float) -> float:
        return _MARGIN_L + (v - x_lo) / (x_hi - x_lo) * plot_w

    def py(v: float) -> float:
        return _MARGIN_T + plot_h - (v - y_lo) / (y_hi - y_lo) * plot_h

    out: List[str] = []
    out.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">'
    )
    out.append(f'<rect width="{width}" height="{height}" fill="#ffffff"/>')
    if title:
        out.append(
            f'<text x="{_fmt(width / 2)}" y="20" text-anchor="middle" '
            f'font-size="14">{_escape(title)}</text>'
        )

    for t in x_ticks:
        gx = _fmt(px(t))
        out.append(
            f'<line x1="{gx}" y1="{_fmt(_MARGIN_T)}" x2="{gx}" '
            f'y2="{_fmt(_MARGIN_T + plot_h)}" stroke="#dddddd" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{gx}" y="{_fmt(_MARGIN_T + plot_h + 16)}" '
            f'text-anchor="middle">{t:g}</text>'
        )
    for t in y_ticks:
        gy = _fmt(py(t))
        out.append(
            f'<line x1="{_fmt(_MARGIN_L)}" y1="{gy}" x2="{_fmt(_MARGIN_L + plot_w)}" '
            f'y2="{gy}" stroke="#dddddd" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{_fmt(_MARGIN_L - 6)}" y="{_fmt(py(t) + 4)}" '
            f'text-anchor="end">{t:g}</text>'
        )
    out.append(
        f'<rect x="{_fmt(_MARGIN_L)}" y="{_fmt(_MARGIN_T)}" width="{_fmt(plot_w)}" '
        f'height="{_fmt(plot_h)}" fill="none" stroke="#333333" stroke-width="1"/>'
    )
    if xlabel:
        out.append(
            f'<text x="{_fmt(_MARGIN_L + plot_w / 2)}" y="{_fmt(height - 10)}" '
            f'text-anchor="middle">{_escape(xlabel)}</text>'
        )
    if ylabel:
        cx, cy = 16.0, _MARGIN_T + plot_h / 2
        out.append(
            f'<text x="{_fmt(cx)}" y="{_fmt(cy)}" text-anchor="middle" '
            f'transform="rotate(-90 {_fmt(cx)} {_fmt(cy)})">{_escape(ylabel)}</text>'
        )

    for i, s in enumerate(series):
        color = COLORS[i % len(COLORS)]
        if s.band_lo is not None and len(s.x) > 1:
            fwd = [f"{_fmt(px(float(x)))},{_fmt(py(float(v)))}" for x, v in zip(s.x, s.band_hi)]
            bwd = [f"{_fmt(px(float(x)))},{_fmt(py(float(v)))}" for x, v in
                   zip(reversed(list(s.x)), reversed(list(s.band_lo)))]
            out.append(
                f'<polygon points="{" ".join(fwd + bwd)}" fill="{color}" '
                f'fill-opacity="0.15" stroke="none"/>'
            )
        if len(s.x) == 1:
            out.append(
                f'<circle cx="{_fmt(px(float(s.x[0])))}" cy="{_fmt(py(float(s.y[0])))}" '
                f'r="3.5" fill="{color}"/>'
            )
        else:
            pts = " ".join(f"{_fmt(px(float(x)))},{_fmt(py(float(v)))}" for x, v in zip(s.x, s.y))
            out.append(
                f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.6"/>'
            )

    legend_x = _MARGIN_L + plot_w - 132.0
    legend_y = _MARGIN_T + 10.0
    for i, s in enumerate(series):
        color = COLORS[i % len(COLORS)]
        ly = legend_y + 16.0 * i
        out.append(
            f'<line x1="{_fmt(legend_x)}" y1="{_fmt(ly)}" x2="{_fmt(legend_x + 22)}" '
            f'y2="{_fmt(ly)}" stroke="{color}" stroke-width="2"/>'
        )
        out.append(
            f'<text x="{_fmt(legend_x + 28)}" y="{_fmt(ly + 4)}">{_escape(s.label)}</text>'
        )
    out.append("</svg>")
    text = "\n".join(out) + "\n"
    if path is not None:
        try:
            Path(path).write_text(text)
        except OSError as exc:
            raise IoFailure(f"cannot write {path}: {exc}") from exc
    return text
