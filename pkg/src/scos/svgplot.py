"""Minimal deterministic SVG figures: waveform overlays and scatter+hinge panels.

Hand-rolled on purpose: the two figure styles needed here (polyline overlays
and log-x scatter with a fitted hinge) do not justify a plotting dependency,
and emitting the markup directly keeps outputs byte-reproducible up to the
build-info comment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import __version__

_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 64, 16, 34, 46
_PANEL_W, _PANEL_H = 480, 300
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b")


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / max(n - 1, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        if mult * mag >= raw:
            step = mult * mag
            break
    start = math.ceil(lo / step) * step
    ticks = []
    v = start
    while v <= hi + 1e-9 * step:
        ticks.append(0.0 if abs(v) < 1e-12 * step else v)
        v += step
    return ticks


@dataclass
class _Axes:
    """Maps data coordinates into one panel's pixel box."""

    x0: float
    y0: float
    xlo: float
    xhi: float
    ylo: float
    yhi: float
    log_x: bool = False

    def px(self, x: float) -> float:
        if self.log_x:
            x = math.log10(x)
        span = self.xhi - self.xlo or 1.0
        return self.x0 + _MARGIN_L + (x - self.xlo) / span * _PANEL_W

    def py(self, y: float) -> float:
        span = self.yhi - self.ylo or 1.0
        return self.y0 + _MARGIN_T + (self.yhi - y) / span * _PANEL_H


def _axes_markup(ax: _Axes, title: str, xlabel: str, ylabel: str) -> list[str]:
    parts = []
    left, right = ax.x0 + _MARGIN_L, ax.x0 + _MARGIN_L + _PANEL_W
    top, bottom = ax.y0 + _MARGIN_T, ax.y0 + _MARGIN_T + _PANEL_H
    parts.append(
        f'<rect x="{_fmt(left)}" y="{_fmt(top)}" width="{_PANEL_W}" height="{_PANEL_H}" '
        'fill="none" stroke="#444" stroke-width="1"/>'
    )
    parts.append(
        f'<text x="{_fmt((left + right) / 2)}" y="{_fmt(ax.y0 + 20)}" text-anchor="middle" '
        f'font-size="14" font-family="sans-serif">{title}</text>'
    )
    if ax.log_x:
        lo_exp = math.floor(ax.xlo)
        hi_exp = math.ceil(ax.xhi)
        xticks = []
        for e in range(int(lo_exp), int(hi_exp) + 1):
            for m in (1, 2, 5):
                v = e + math.log10(m)
                if ax.xlo - 1e-9 <= v <= ax.xhi + 1e-9:
                    xticks.append(v)
        labels = [(_fmt(10.0**v), v) for v in xticks]
    else:
        xticks = _nice_ticks(ax.xlo, ax.xhi)
        labels = [(_fmt(v), v) for v in xticks]
    for text, v in labels:
        px = ax.x0 + _MARGIN_L + (v - ax.xlo) / ((ax.xhi - ax.xlo) or 1.0) * _PANEL_W
        parts.append(
            f'<line x1="{_fmt(px)}" y1="{_fmt(bottom)}" x2="{_fmt(px)}" y2="{_fmt(bottom + 4)}" '
            'stroke="#444"/>'
        )
        parts.append(
            f'<text x="{_fmt(px)}" y="{_fmt(bottom + 17)}" text-anchor="middle" '
            f'font-size="11" font-family="sans-serif">{text}</text>'
        )
    for v in _nice_ticks(ax.ylo, ax.yhi):
        py = ax.py(v)
        parts.append(
            f'<line x1="{_fmt(left - 4)}" y1="{_fmt(py)}" x2="{_fmt(left)}" y2="{_fmt(py)}" '
            'stroke="#444"/>'
        )
        parts.append(
            f'<text x="{_fmt(left - 7)}" y="{_fmt(py + 4)}" text-anchor="end" '
            f'font-size="11" font-family="sans-serif">{_fmt(v)}</text>'
        )
    parts.append(
        f'<text x="{_fmt((left + right) / 2)}" y="{_fmt(bottom + 36)}" text-anchor="middle" '
        f'font-size="12" font-family="sans-serif">{xlabel}</text>'
    )
    parts.append(
        f'<text x="{_fmt(ax.x0 + 14)}" y="{_fmt((top + bottom) / 2)}" text-anchor="middle" '
        f'font-size="12" font-family="sans-serif" '
        f'transform="rotate(-90 {_fmt(ax.x0 + 14)} {_fmt((top + bottom) / 2)})">{ylabel}</text>'
    )
    return parts


def _document(width: float, height: float, body: list[str]) -> str:
    head = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(width)}" '
        f'height="{_fmt(height)}" viewBox="0 0 {_fmt(width)} {_fmt(height)}">',
        f"<!-- build-info: scos {__version__} -->",
        f'<rect width="{_fmt(width)}" height="{_fmt(height)}" fill="white"/>',
    ]
    return "\n".join(head + body + ["</svg>"]) + "\n"


def waveform_figure(
    t, series: list[tuple[str, "list[float]"]], title: str, ylabel: str = "amplitude"
) -> str:
    """Overlay labelled time series on one panel."""
    t = list(map(float, t))
    ys = [list(map(float, y)) for _, y in series]
    ylo = min(min(y) for y in ys)
    yhi = max(max(y) for y in ys)
    if yhi == ylo:
        yhi = ylo + 1.0
    pad = 0.05 * (yhi - ylo)
    ax = _Axes(0, 0, min(t), max(t), ylo - pad, yhi + pad)
    body = _axes_markup(ax, title, "time (s)", ylabel)
    for i, ((label, _), y) in enumerate(zip(series, ys)):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{_fmt(ax.px(a))},{_fmt(ax.py(b))}" for a, b in zip(t, y))
        body.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.2"/>'
        )
        lx = ax.x0 + _MARGIN_L + _PANEL_W - 8
        ly = ax.y0 + _MARGIN_T + 16 + 16 * i
        body.append(
            f'<text x="{_fmt(lx)}" y="{_fmt(ly)}" text-anchor="end" font-size="12" '
            f'font-family="sans-serif" fill="{color}">{label}</text>'
        )
    return _document(
        _MARGIN_L + _PANEL_W + _MARGIN_R, _MARGIN_T + _PANEL_H + _MARGIN_B, body
    )


def scatter_hinge_figure(panels: list[dict]) -> str:
    """Side-by-side panels of VFSI^2 scatter on a log signal axis with the
    fitted two-segment line.

    Each panel dict carries: title, levels, values, and optionally fit (a
    ThresholdFit) whose hinge is drawn with the threshold marked.
    """
    width_one = _MARGIN_L + _PANEL_W + _MARGIN_R
    body: list[str] = []
    for pi, panel in enumerate(panels):
        levels = [float(v) for v in panel["levels"]]
        values = [float(v) for v in panel["values"]]
        xlo = math.log10(min(levels)) - 0.05
        xhi = math.log10(max(levels)) + 0.05
        yhi = max(max(values), 0.05) * 1.1
        ax = _Axes(pi * width_one, 0, xlo, xhi, 0.0, yhi, log_x=True)
        body += _axes_markup(
            ax, panel["title"], "signal level (e-/px)", "VFSI^2"
        )
        for lv, v in zip(levels, values):
            body.append(
                f'<circle cx="{_fmt(ax.px(lv))}" cy="{_fmt(ax.py(v))}" r="3" '
                f'fill="{_COLORS[0]}" fill-opacity="0.75"/>'
            )
        fit = panel.get("fit")
        if fit is not None:
            b = math.log10(fit.threshold_e_per_px)
            y_at = fit.left_intercept + fit.left_slope * b
            seg = []
            for x_a, x_b, slope, icpt in (
                (xlo, min(b, xhi), fit.left_slope, fit.left_intercept),
                (max(b, xlo), xhi, fit.right_slope, fit.right_intercept),
            ):
                if x_b <= x_a:
                    continue
                ya = max(min(icpt + slope * x_a, ax.yhi), ax.ylo)
                yb = max(min(icpt + slope * x_b, ax.yhi), ax.ylo)
                seg.append(
                    f'<polyline points="{_fmt(ax.px(10 ** x_a))},{_fmt(ax.py(ya))} '
                    f'{_fmt(ax.px(10 ** x_b))},{_fmt(ax.py(yb))}" fill="none" '
                    f'stroke="{_COLORS[1]}" stroke-width="1.6"/>'
                )
            body += seg
            if xlo <= b <= xhi:
                body.append(
                    f'<line x1="{_fmt(ax.px(10 ** b))}" y1="{_fmt(ax.py(ax.ylo))}" '
                    f'x2="{_fmt(ax.px(10 ** b))}" y2="{_fmt(ax.py(ax.yhi))}" '
                    'stroke="#888" stroke-dasharray="4 3"/>'
                )
                tag = f"threshold {_fmt(fit.threshold_e_per_px)} e-/px"
                if not fit.reliable:
                    tag += " (unreliable)"
                body.append(
                    f'<text x="{_fmt(ax.px(10 ** b) + 5)}" y="{_fmt(ax.py(y_at) - 8)}" '
                    f'font-size="11" font-family="sans-serif" fill="#555">{tag}</text>'
                )
    return _document(
        width_one * len(panels), _MARGIN_T + _PANEL_H + _MARGIN_B, body
    )
