"""Core RD domain types and the elementary statistics shared by every module.

All sums go through :func:`math.fsum`, so results are independent of input
order (calibration pools hundreds of measurements).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DegenerateFitError, InvalidInputError, UndefinedCorrelationError

CANONICAL_QPS: tuple[int, ...] = (22, 27, 32, 37)


class MetricKind(str, enum.Enum):
    VMAF = "vmaf"
    VMAF_NEG = "vmaf_neg"
    PSNR_Y = "psnr_y"
    MS_SSIM = "ms_ssim"

    @property
    def bounds(self) -> tuple[float, float]:
        return _METRIC_BOUNDS[self]

    @property
    def label(self) -> str:
        return _METRIC_LABELS[self]

    @classmethod
    def parse(cls, text: str) -> "MetricKind":
        key = text.strip().lower().replace("-", "_")
        for m in cls:
            if key in (m.value, m.name.lower()):
                return m
        raise InvalidInputError(f"unknown metric {text!r}; expected one of "
                                f"{', '.join(m.value for m in cls)}")


_METRIC_BOUNDS = {
    MetricKind.VMAF: (0.0, 100.0),
    MetricKind.VMAF_NEG: (0.0, 100.0),
    MetricKind.PSNR_Y: (0.0, 100.0),
    MetricKind.MS_SSIM: (0.0, 1.0),
}

_METRIC_LABELS = {
    MetricKind.VMAF: "VMAF",
    MetricKind.VMAF_NEG: "VMAF-NEG",
    MetricKind.PSNR_Y: "PSNR-Y",
    MetricKind.MS_SSIM: "MS-SSIM",
}


def check_score(metric: MetricKind, value: float) -> float:
    lo, hi = metric.bounds
    value = float(value)
    if not math.isfinite(value) or value < lo or value > hi:
        raise InvalidInputError(f"{metric.label} score {value!r} outside [{lo}, {hi}]")
    return value


@dataclass(frozen=True)
class RDPoint:
    qp: int
    bitrate_kbps: float
    scores: Mapping[MetricKind, float] = field(default_factory=dict)

    def __post_init__(self):
        if not (math.isfinite(self.bitrate_kbps) and self.bitrate_kbps > 0):
            raise InvalidInputError(f"bitrate must be positive, got {self.bitrate_kbps!r}")
        scores = {MetricKind(m): check_score(MetricKind(m), v) for m, v in self.scores.items()}
        object.__setattr__(self, "scores", scores)

    def score(self, metric: MetricKind) -> float:
        try:
            return self.scores[metric]
        except KeyError:
            raise InvalidInputError(f"point at qp={self.qp} has no {metric.label} score") from None


@dataclass(frozen=True)
class RDCurve:
    """Four (canonically) constant-QP samples for one (sequence, variant).

    Points must be in ascending QP order with strictly decreasing bitrate.
    """

    sequence_id: str
    variant_id: str
    points: tuple[RDPoint, ...]

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        pts = self.points
        for a, b in zip(pts, pts[1:]):
            if b.qp <= a.qp:
                raise InvalidInputError(
                    f"{self.sequence_id}/{self.variant_id}: QPs not strictly ascending ({a.qp}, {b.qp})")
            if b.bitrate_kbps >= a.bitrate_kbps:
                raise InvalidInputError(
                    f"{self.sequence_id}/{self.variant_id}: bitrate does not decrease "
                    f"from qp {a.qp} to qp {b.qp}")

    @classmethod
    def from_unsorted(cls, sequence_id: str, variant_id: str,
                      points: Sequence[RDPoint]) -> "RDCurve":
        return cls(sequence_id, variant_id, tuple(sorted(points, key=lambda p: p.qp)))

    @property
    def qps(self) -> tuple[int, ...]:
        return tuple(p.qp for p in self.points)

    @property
    def is_canonical(self) -> bool:
        return self.qps == CANONICAL_QPS

    def bitrates(self) -> np.ndarray:
        return np.array([p.bitrate_kbps for p in self.points], dtype=float)

    def scores(self, metric: MetricKind) -> np.ndarray:
        return np.array([p.score(metric) for p in self.points], dtype=float)


@dataclass(frozen=True)
class CorrelationReport:
    spearman_rho: float
    pearson_r: float
    mae: float
    n: int


def _pair(xs, ys, min_n: int = 2) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(xs, dtype=float).ravel()
    y = np.asarray(ys, dtype=float).ravel()
    if x.shape != y.shape:
        raise InvalidInputError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < min_n:
        raise InvalidInputError(f"need at least {min_n} samples, got {x.size}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InvalidInputError("non-finite input")
    return x, y


def _mean(a: np.ndarray) -> float:
    return math.fsum(a) / a.size


def average_ranks(values) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    a = np.asarray(values, dtype=float).ravel()
    order = np.argsort(a, kind="mergesort")
    ranks = np.empty(a.size, dtype=float)
    s = a[order]
    i = 0
    while i < a.size:
        j = i
        while j + 1 < a.size and s[j + 1] == s[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _product_moment(x: np.ndarray, y: np.ndarray) -> float:
    mx, my = _mean(x), _mean(y)
    dx, dy = x - mx, y - my
    sxx = math.fsum(dx * dx)
    syy = math.fsum(dy * dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("correlation undefined: zero variance")
    r = math.fsum(dx * dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def pearson(xs, ys) -> float:
    x, y = _pair(xs, ys)
    return _product_moment(x, y)


def spearman(xs, ys) -> float:
    x, y = _pair(xs, ys)
    try:
        return _product_moment(average_ranks(x), average_ranks(y))
    except UndefinedCorrelationError:
        raise UndefinedCorrelationError("Spearman rho undefined: zero rank variance") from None


def affine_fit(xs, ys) -> tuple[float, float]:
    """Ordinary least-squares ``y ~ slope * x + intercept``."""
    x, y = _pair(xs, ys)
    mx, my = _mean(x), _mean(y)
    dx = x - mx
    sxx = math.fsum(dx * dx)
    if sxx == 0.0:
        raise DegenerateFitError("affine fit undefined: zero variance in x")
    slope = math.fsum(dx * (y - my)) / sxx
    return slope, my - slope * mx


def mae_after_affine(xs, ys, slope: float, intercept: float) -> float:
    x, y = _pair(xs, ys, min_n=1)
    return math.fsum(np.abs(y - (slope * x + intercept))) / x.size


def correlation_report(xs, ys) -> tuple[float, float, CorrelationReport]:
    """Affine-fit ``ys`` on ``xs`` and report rho, r and post-fit MAE."""
    slope, intercept = affine_fit(xs, ys)
    report = CorrelationReport(
        spearman_rho=spearman(xs, ys),
        pearson_r=pearson(xs, ys),
        mae=mae_after_affine(xs, ys, slope, intercept),
        n=len(xs),
    )
    return slope, intercept, report
