"""Minimal SVG learning-curve charts (axes, polylines, optional min/max band)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from html import escape
from pathlib import Path
from typing import Optional, Sequence

WIDTH = 640
HEIGHT = 400
MARGIN_LEFT = 60
MARGIN_RIGHT = 150
MARGIN_TOP = 40
MARGIN_BOTTOM = 50
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf")


@dataclass(frozen=True)
class CurveSeries:
    label: str
    xs: Sequence[float]
    ys: Sequence[float]
    lower: Optional[Sequence[float]] = None
    upper: Optional[Sequence[float]] = None


def _fmt(value: float) -> str:
    return f"{value:.2f}"


def _nice_ticks(maximum: float, count: int = 5) -> list[float]:
    if maximum <= 0:
        return [0.0]
    raw = maximum / count
    magnitude = 10 ** math.floor(math.log10(raw))
    step = next(m * magnitude for m in (1, 2, 5, 10) if m * magnitude >= raw)
    ticks = []
    value = 0.0
    while value <= maximum + 1e-9:
        ticks.append(value)
        value += step
    return ticks


def render_learning_curves(
    series: Sequence[CurveSeries],
    *,
    title: str,
    x_label: str = "episodes",
    y_label: str = "trailing success rate",
    threshold: Optional[float] = 0.9,
) -> str:
    plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
    x_max = max((max(s.xs) for s in series if len(s.xs)), default=1.0) or 1.0

    def px(x: float) -> float:
        return MARGIN_LEFT + plot_w * x / x_max

    def py(y: float) -> float:
        return MARGIN_TOP + plot_h * (1.0 - min(max(y, 0.0), 1.0))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.0f}" y="22" text-anchor="middle" font-size="14">'
        f"{escape(title)}</text>",
        f'<line x1="{MARGIN_LEFT}" y1="{MARGIN_TOP + plot_h}" x2="{MARGIN_LEFT + plot_w}" '
        f'y2="{MARGIN_TOP + plot_h}" stroke="black"/>',
        f'<line x1="{MARGIN_LEFT}" y1="{MARGIN_TOP}" x2="{MARGIN_LEFT}" '
        f'y2="{MARGIN_TOP + plot_h}" stroke="black"/>',
    ]
    for tick in _nice_ticks(x_max):
        parts.append(
            f'<text x="{_fmt(px(tick))}" y="{MARGIN_TOP + plot_h + 16}" '
            f'text-anchor="middle">{tick:g}</text>'
        )
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        parts.append(
            f'<text x="{MARGIN_LEFT - 6}" y="{_fmt(py(tick) + 4)}" '
            f'text-anchor="end">{tick:g}</text>'
        )
    parts.append(
        f'<text x="{MARGIN_LEFT + plot_w / 2:.0f}" y="{HEIGHT - 12}" '
        f'text-anchor="middle">{escape(x_label)}</text>'
    )
    parts.append(
        f'<text x="16" y="{MARGIN_TOP + plot_h / 2:.0f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {MARGIN_TOP + plot_h / 2:.0f})">{escape(y_label)}</text>'
    )
    if threshold is not None:
        parts.append(
            f'<line x1="{MARGIN_LEFT}" y1="{_fmt(py(threshold))}" '
            f'x2="{MARGIN_LEFT + plot_w}" y2="{_fmt(py(threshold))}" '
            'stroke="gray" stroke-dasharray="4 4"/>'
        )

    for i, curve in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        if curve.lower is not None and curve.upper is not None and len(curve.xs):
            upper = [f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(curve.xs, curve.upper)]
            lower = [
                f"{_fmt(px(x))},{_fmt(py(y))}"
                for x, y in zip(reversed(curve.xs), reversed(curve.lower))
            ]
            parts.append(
                f'<polygon points="{" ".join(upper + lower)}" fill="{color}" '
                'fill-opacity="0.15" stroke="none"/>'
            )
        points = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(curve.xs, curve.ys))
        parts.append(
            f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="2"/>'
        )
        legend_y = MARGIN_TOP + 16 * i + 8
        legend_x = MARGIN_LEFT + plot_w + 12
        parts.append(
            f'<line x1="{legend_x}" y1="{legend_y}" x2="{legend_x + 18}" y2="{legend_y}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{legend_x + 24}" y="{legend_y + 4}">{escape(curve.label)}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_learning_curves(
    path: str | Path, series: Sequence[CurveSeries], **kwargs: object
) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(render_learning_curves(series, **kwargs))  # type: ignore[arg-type]
    return target
