"""Monotone cubic (PCHIP) RD-curve interpolation and Bjøntegaard deltas.

BD-rate interpolates log10(bitrate) as a function of quality score for each
curve and averages the gap over the shared quality interval; BD-quality is
the dual with the axes swapped. Neither ever extrapolates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import MetricKind, RDCurve, RDPoint
from .errors import DegenerateCurveError, InvalidInputError, NoOverlapError

MERGE_EPS = 1e-6
QUAD_TOL = 1e-8


@dataclass(frozen=True)
class Interpolant:
    """C1 piecewise-cubic Hermite interpolant."""

    knots_x: tuple[float, ...]
    knots_y: tuple[float, ...]
    derivs: tuple[float, ...]

    def __call__(self, x):
        xs = np.asarray(self.knots_x)
        ys = np.asarray(self.knots_y)
        ds = np.asarray(self.derivs)
        xq = np.asarray(x, dtype=float)
        k = np.clip(np.searchsorted(xs, xq, side="right") - 1, 0, xs.size - 2)
        h = xs[k + 1] - xs[k]
        t = (xq - xs[k]) / h
        t2 = t * t
        t3 = t2 * t
        h00 = 2 * t3 - 3 * t2 + 1
        h10 = t3 - 2 * t2 + t
        h01 = -2 * t3 + 3 * t2
        h11 = t3 - t2
        out = h00 * ys[k] + h10 * h * ds[k] + h01 * ys[k + 1] + h11 * h * ds[k + 1]
        # exact knot reproduction regardless of rounding in the basis
        hit = np.isin(xq, xs)
        if np.any(hit):
            out = np.where(hit, ys[np.clip(np.searchsorted(xs, xq), 0, xs.size - 1)], out)
        return float(out) if np.ndim(out) == 0 else out

    @property
    def span(self) -> tuple[float, float]:
        return self.knots_x[0], self.knots_x[-1]


def _endpoint_slope(h0: float, h1: float, m0: float, m1: float) -> float:
    # three-point one-sided estimate, limited to keep the end interval monotone
    d = ((2 * h0 + h1) * m0 - h0 * m1) / (h0 + h1)
    if np.sign(d) != np.sign(m0):
        return 0.0
    if np.sign(m0) != np.sign(m1) and abs(d) > abs(3 * m0):
        return 3 * m0
    return d


def pchip_fit(xs, ys) -> Interpolant:
    """Shape-preserving PCHIP through (xs, ys).

    Interior derivatives are the weighted harmonic mean of neighbouring
    secant slopes (zero at local extrema), so monotone data yields a
    monotone interpolant. Two knots give the straight line.
    """
    x = np.asarray(xs, dtype=float).ravel()
    y = np.asarray(ys, dtype=float).ravel()
    if x.size != y.size:
        raise InvalidInputError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise InvalidInputError("PCHIP needs at least 2 knots")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InvalidInputError("non-finite knot")
    h = np.diff(x)
    if np.any(h <= 0):
        raise InvalidInputError("knot abscissae must be strictly increasing")
    m = np.diff(y) / h
    n = x.size
    d = np.zeros(n)
    if n == 2:
        d[:] = m[0]
    else:
        for k in range(1, n - 1):
            if m[k - 1] * m[k] <= 0:
                d[k] = 0.0
            else:
                w1 = 2 * h[k] + h[k - 1]
                w2 = h[k] + 2 * h[k - 1]
                d[k] = (w1 + w2) / (w1 / m[k - 1] + w2 / m[k])
        d[0] = _endpoint_slope(h[0], h[1], m[0], m[1])
        d[-1] = _endpoint_slope(h[-1], h[-2], m[-1], m[-2])
    return Interpolant(tuple(x.tolist()), tuple(y.tolist()), tuple(d.tolist()))


def _simpson(a, fa, b, fb, fm):
    return (b - a) / 6.0 * (fa + 4.0 * fm + fb)


def adaptive_simpson(f, a: float, b: float, tol: float = QUAD_TOL, max_depth: int = 50) -> float:
    """Adaptive Simpson quadrature with absolute tolerance ``tol``."""
    if a == b:
        return 0.0
    fa, fb = f(a), f(b)
    m = 0.5 * (a + b)
    fm = f(m)
    whole = _simpson(a, fa, b, fb, fm)
    return _asr(f, a, fa, b, fb, m, fm, whole, tol, max_depth)


def _asr(f, a, fa, b, fb, m, fm, whole, tol, depth):
    lm, rm = 0.5 * (a + m), 0.5 * (m + b)
    flm, frm = f(lm), f(rm)
    left = _simpson(a, fa, m, fm, flm)
    right = _simpson(m, fm, b, fb, frm)
    delta = left + right - whole
    if depth <= 0 or abs(delta) <= 15.0 * tol:
        return left + right + delta / 15.0
    return (_asr(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)
            + _asr(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1))


def _integrate_difference(p: Interpolant, q: Interpolant, lo: float, hi: float, tol: float) -> float:
    """Integral of q - p over [lo, hi], split at every knot inside the window."""
    cuts = sorted({lo, hi, *(x for x in p.knots_x + q.knots_x if lo < x < hi)})
    f = lambda x: q(x) - p(x)  # noqa: E731
    per_piece = tol / max(1, len(cuts) - 1)
    return math.fsum(adaptive_simpson(f, a, b, per_piece) for a, b in zip(cuts, cuts[1:]))


@dataclass(frozen=True)
class BDResult:
    metric: MetricKind
    bd_rate_percent: float
    quality_lo: float
    quality_hi: float


def prepare_curve(curve: RDCurve, metric: MetricKind) -> tuple[np.ndarray, np.ndarray]:
    """Return (quality, log10 bitrate), both strictly increasing.

    Points are re-sorted by quality; neighbours closer than 1e-6 in quality
    (metric ceiling saturation) collapse to the lower-bitrate point.
    """
    if len(curve.points) < 2:
        raise DegenerateCurveError(f"{curve.sequence_id}/{curve.variant_id}: need >= 2 points")
    pairs = sorted(((p.score(metric), math.log10(p.bitrate_kbps)) for p in curve.points),
                   key=lambda qr: (qr[0], qr[1]))
    merged: list[tuple[float, float]] = [pairs[0]]
    for q, r in pairs[1:]:
        pq, pr = merged[-1]
        if abs(q - pq) < MERGE_EPS:
            merged[-1] = (pq, min(pr, r))
        else:
            merged.append((q, r))
    if len(merged) < 2:
        raise DegenerateCurveError(
            f"{curve.sequence_id}/{curve.variant_id}: {metric.label} collapses to one point")
    quality = np.array([q for q, _ in merged])
    lograte = np.array([r for _, r in merged])
    if np.any(np.diff(lograte) <= 0):
        raise DegenerateCurveError(
            f"{curve.sequence_id}/{curve.variant_id}: {metric.label} not monotone in bitrate")
    return quality, lograte


def _overlap(a: np.ndarray, b: np.ndarray, what: str) -> tuple[float, float]:
    lo = max(a[0], b[0])
    hi = min(a[-1], b[-1])
    if not lo < hi:
        raise NoOverlapError(f"no {what} overlap: [{lo:.6g}, {hi:.6g}]")
    return float(lo), float(hi)


def bd_rate(baseline: RDCurve, variant: RDCurve, metric: MetricKind,
            tol: float = QUAD_TOL) -> BDResult:
    """Average bitrate difference (percent) at matched quality; negative saves bits."""
    metric = MetricKind(metric)
    qb, rb = prepare_curve(baseline, metric)
    qv, rv = prepare_curve(variant, metric)
    lo, hi = _overlap(qb, qv, f"{metric.label}")
    pb, pv = pchip_fit(qb, rb), pchip_fit(qv, rv)
    mean_log_diff = _integrate_difference(pb, pv, lo, hi, tol) / (hi - lo)
    return BDResult(metric, (10.0 ** mean_log_diff - 1.0) * 100.0, lo, hi)


def bd_quality(baseline: RDCurve, variant: RDCurve, metric: MetricKind,
               tol: float = QUAD_TOL) -> float:
    """Average quality difference (variant - baseline) at matched bitrate."""
    metric = MetricKind(metric)
    qb, rb = prepare_curve(baseline, metric)
    qv, rv = prepare_curve(variant, metric)
    lo, hi = _overlap(rb, rv, "log-rate")
    pb, pv = pchip_fit(rb, qb), pchip_fit(rv, qv)
    return _integrate_difference(pb, pv, lo, hi, tol) / (hi - lo)


def operating_point_saving(baseline: RDPoint, variant: RDPoint) -> float:
    """Percent bitrate saved by ``variant`` relative to ``baseline``."""
    return (1.0 - variant.bitrate_kbps / baseline.bitrate_kbps) * 100.0
