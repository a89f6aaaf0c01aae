"""Static SVG rate-distortion plots and BD scatter plots.

Output is plain text built in a fixed order with fixed number formatting, so
identical inputs give byte-identical files.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .bd import pchip_fit, prepare_curve
from .core import MetricKind, RDCurve
from .csvio import atomic_write_text
from .errors import DegenerateCurveError

WIDTH, HEIGHT = 720, 480
MARGIN = dict(left=70, right=170, top=40, bottom=55)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
           "#e377c2", "#17becf", "#7f7f7f", "#bcbd22")


def _f(x: float) -> str:
    s = f"{x:.2f}".rstrip("0").rstrip(".")
    return "0" if s == "-0" else s


@dataclass(frozen=True)
class _Axes:
    x0: float
    x1: float
    y0: float
    y1: float

    def px(self, x: float) -> float:
        w = WIDTH - MARGIN["left"] - MARGIN["right"]
        return MARGIN["left"] + (x - self.x0) / (self.x1 - self.x0) * w

    def py(self, y: float) -> float:
        h = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
        return HEIGHT - MARGIN["bottom"] - (y - self.y0) / (self.y1 - self.y0) * h


def _nice_step(span: float, target: int = 6) -> float:
    raw = span / target
    mag = 10 ** math.floor(math.log10(raw))
    for m in (1, 2, 2.5, 5, 10):
        if m * mag >= raw:
            return m * mag
    return 10 * mag


def _linear_ticks(lo: float, hi: float) -> list[float]:
    step = _nice_step(hi - lo)
    start = math.ceil(lo / step - 1e-9) * step
    out = []
    t = start
    while t <= hi + 1e-9 * step:
        out.append(round(t, 10))
        t += step
    return out


def _log_ticks(lo: float, hi: float) -> list[float]:
    """Ticks (in log10 units) at 1, 2 and 5 times each decade inside [lo, hi]."""
    out = []
    for d in range(math.floor(lo), math.ceil(hi) + 1):
        for m in (1, 2, 5):
            t = d + math.log10(m)
            if lo - 1e-12 <= t <= hi + 1e-12:
                out.append(t)
    if len(out) < 2:
        out = [lo, hi]
    return out


def _rate_label(log_rate: float) -> str:
    v = 10 ** log_rate
    if v >= 1000:
        return f"{v / 1000:g}M"
    return f"{v:.3g}"


def _pad(lo: float, hi: float, frac: float = 0.05) -> tuple[float, float]:
    if hi <= lo:
        return lo - 1, hi + 1
    d = (hi - lo) * frac
    return lo - d, hi + d


def _frame(ax: _Axes, xticks, yticks, xlabel, ylabel, title, xfmt, yfmt) -> list[str]:
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>',
           f'<text x="{_f(WIDTH / 2)}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>']
    left, right = MARGIN["left"], WIDTH - MARGIN["right"]
    top, bottom = MARGIN["top"], HEIGHT - MARGIN["bottom"]
    out.append('<g class="grid" stroke="#dddddd" stroke-width="1">')
    for t in xticks:
        out.append(f'<line x1="{_f(ax.px(t))}" y1="{top}" x2="{_f(ax.px(t))}" y2="{bottom}"/>')
    for t in yticks:
        out.append(f'<line x1="{left}" y1="{_f(ax.py(t))}" x2="{right}" y2="{_f(ax.py(t))}"/>')
    out.append("</g>")
    out.append(f'<rect x="{left}" y="{top}" width="{right - left}" height="{bottom - top}" '
               'fill="none" stroke="#000000"/>')
    out.append('<g class="ticks">')
    for t in xticks:
        out.append(f'<text x="{_f(ax.px(t))}" y="{bottom + 16}" text-anchor="middle">{xfmt(t)}</text>')
    for t in yticks:
        out.append(f'<text x="{left - 6}" y="{_f(ax.py(t) + 4)}" text-anchor="end">{yfmt(t)}</text>')
    out.append("</g>")
    out.append(f'<text x="{_f((left + right) / 2)}" y="{HEIGHT - 12}" text-anchor="middle">'
               f'{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{_f((top + bottom) / 2)}" text-anchor="middle" '
               f'transform="rotate(-90 16 {_f((top + bottom) / 2)})">{escape(ylabel)}</text>')
    return out


def _curve_path(ax: _Axes, curve: RDCurve, metric: MetricKind, samples: int = 64) -> str | None:
    """PCHIP of quality over log10 rate, sampled densely; None when not interpolable."""
    try:
        q, r = prepare_curve(curve, metric)
    except DegenerateCurveError:
        return None
    f = pchip_fit(r, q)
    xs = np.linspace(r[0], r[-1], samples)
    ys = f(xs)
    pts = " ".join(f"{_f(ax.px(x))},{_f(ax.py(y))}" for x, y in zip(xs, ys))
    return pts


def rd_plot_svg(pairs: Sequence[tuple[RDCurve | None, RDCurve | None]], metric: MetricKind,
                title: str) -> str:
    """RD plot of baseline (open markers, dashed) against variant (filled markers, solid).

    ``pairs`` holds one (baseline, variant) per sequence; either side may be None.
    """
    metric = MetricKind(metric)
    curves = [c for pair in pairs for c in pair if c is not None]
    if not curves:
        raise ValueError("nothing to plot")
    logs = [math.log10(p.bitrate_kbps) for c in curves for p in c.points]
    vals = [p.score(metric) for c in curves for p in c.points]
    x0, x1 = _pad(min(logs), max(logs))
    y0, y1 = _pad(min(vals), max(vals))
    ax = _Axes(x0, x1, y0, y1)
    out = _frame(ax, _log_ticks(x0, x1), _linear_ticks(y0, y1), "bitrate (kbps, log scale)",
                 metric.label, title, _rate_label, lambda t: f"{t:g}")
    legend = []
    for i, (base, var) in enumerate(pairs):
        color = PALETTE[i % len(PALETTE)]
        seq = (base or var).sequence_id
        for curve, dashed, filled in ((base, True, False), (var, False, True)):
            if curve is None:
                continue
            role = "baseline" if dashed else "variant"
            out.append(f'<g class="series {role}" data-sequence="{escape(seq)}" '
                       f'data-variant="{escape(curve.variant_id)}">')
            pts = _curve_path(ax, curve, metric)
            if pts:
                dash = ' stroke-dasharray="5,4"' if dashed else ""
                out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>')
            fill = color if filled else "#ffffff"
            for p in curve.points:
                out.append(f'<circle class="marker {role}" cx="{_f(ax.px(math.log10(p.bitrate_kbps)))}" '
                           f'cy="{_f(ax.py(p.score(metric)))}" r="4" fill="{fill}" stroke="{color}" '
                           f'stroke-width="1.5"/>')
            out.append("</g>")
        legend.append((seq, color))
    lx = WIDTH - MARGIN["right"] + 12
    out.append('<g class="legend">')
    for k, (seq, color) in enumerate(legend):
        y = MARGIN["top"] + 14 + 18 * k
        out.append(f'<rect x="{lx}" y="{y - 9}" width="10" height="10" fill="{color}"/>')
        out.append(f'<text x="{lx + 16}" y="{y}">{escape(seq)}</text>')
    y = MARGIN["top"] + 14 + 18 * len(legend) + 8
    out.append(f'<circle cx="{lx + 5}" cy="{y - 4}" r="4" fill="#ffffff" stroke="#000000"/>'
               f'<text x="{lx + 16}" y="{y}">baseline</text>')
    out.append(f'<circle cx="{lx + 5}" cy="{y + 14}" r="4" fill="#000000" stroke="#000000"/>'
               f'<text x="{lx + 16}" y="{y + 18}">variant</text>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", name) or "_"


def plot_family(curves: dict[str, dict[str, RDCurve]], metric: MetricKind, out_dir: str | Path,
                baseline: str = "baseline", variant: str | None = None) -> list[Path]:
    """One combined plot plus one panel per sequence for ``metric``.

    ``curves`` maps sequence -> variant -> curve. With a single sequence the
    combined plot and the panel are the same file content.
    """
    metric = MetricKind(metric)
    out_dir = Path(out_dir)
    pairs = []
    for seq in curves:
        legs = curves[seq]
        others = [v for v in legs if v != baseline]
        pick = variant if variant is not None else (others[0] if others else None)
        pairs.append((legs.get(baseline), legs.get(pick) if pick else None))
    pairs = [p for p in pairs if p != (None, None)]
    paths = []
    if len(pairs) == 1:
        combined_title = _title(pairs[0], metric)
    else:
        combined_title = f"{metric.label}: all sequences"
    path = out_dir / f"rd_{metric.value}_combined.svg"
    atomic_write_text(path, rd_plot_svg(pairs, metric, combined_title))
    paths.append(path)
    for pair in pairs:
        path = out_dir / f"rd_{metric.value}_{_safe((pair[0] or pair[1]).sequence_id)}.svg"
        atomic_write_text(path, rd_plot_svg([pair], metric, _title(pair, metric)))
        paths.append(path)
    return paths


def _title(pair, metric: MetricKind) -> str:
    return f"{metric.label}: {(pair[0] or pair[1]).sequence_id}"


def scatter_svg(points: Sequence[tuple[str, float, float]], title: str = "BD-VMAF vs BD-VMAF-NEG",
                xlabel: str = "BD-VMAF (%)", ylabel: str = "BD-VMAF-NEG (%)") -> str:
    """Labelled scatter with zero lines; points are (label, x, y)."""
    if not points:
        raise ValueError("nothing to plot")
    xs = [p[1] for p in points] + [0.0]
    ys = [p[2] for p in points] + [0.0]
    x0, x1 = _pad(min(xs), max(xs), 0.08)
    y0, y1 = _pad(min(ys), max(ys), 0.08)
    ax = _Axes(x0, x1, y0, y1)
    out = _frame(ax, _linear_ticks(x0, x1), _linear_ticks(y0, y1), xlabel, ylabel, title,
                 lambda t: f"{t:g}", lambda t: f"{t:g}")
    out.append(f'<line class="zero" x1="{_f(ax.px(0))}" y1="{MARGIN["top"]}" x2="{_f(ax.px(0))}" '
               f'y2="{HEIGHT - MARGIN["bottom"]}" stroke="#555555" stroke-dasharray="3,3"/>')
    out.append(f'<line class="zero" x1="{MARGIN["left"]}" y1="{_f(ax.py(0))}" '
               f'x2="{WIDTH - MARGIN["right"]}" y2="{_f(ax.py(0))}" stroke="#555555" stroke-dasharray="3,3"/>')
    for label, x, y in points:
        quadrant = ("upper" if y > 0 else "lower") + "-" + ("right" if x > 0 else "left")
        out.append(f'<circle class="marker point {quadrant}" data-label="{escape(label)}" '
                   f'cx="{_f(ax.px(x))}" cy="{_f(ax.py(y))}" r="4" fill="#1f77b4"/>')
        out.append(f'<text x="{_f(ax.px(x) + 6)}" y="{_f(ax.py(y) - 6)}" font-size="10">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
