"""Corpus aggregation over named slices, failure-mode taxonomy, gaming detection."""

from __future__ import annotations

import enum
import math
import re
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import MetricKind
from .errors import InvalidInputError, InvalidSliceError


@dataclass(frozen=True)
class SequenceRecord:
    sequence_id: str
    bd: Mapping[MetricKind, float]
    # baseline metric score at the lowest QP; None when unknown
    baseline_top_quality: float | None = None
    smooth_fraction: float | None = None
    chroma_saturation: float | None = None

    def __post_init__(self):
        bd = {MetricKind(m): float(v) for m, v in self.bd.items()}
        for m, v in bd.items():
            if not math.isfinite(v):
                raise InvalidInputError(f"{self.sequence_id}: non-finite BD {m.label}")
        object.__setattr__(self, "bd", bd)
        if self.smooth_fraction is not None and not 0.0 <= self.smooth_fraction <= 1.0:
            raise InvalidInputError(f"{self.sequence_id}: smooth_fraction outside [0, 1]")


@dataclass(frozen=True)
class SliceSpec:
    name: str
    exclude: tuple[str, ...] = ()

    @classmethod
    def from_mapping(cls, data: Mapping) -> "SliceSpec":
        try:
            return cls(str(data["name"]), tuple(str(s) for s in data.get("exclude", ())))
        except (KeyError, TypeError) as exc:
            raise InvalidSliceError(f"bad slice spec {data!r}") from exc


# MCL-JCV cuts: all clips, the two regressions removed, and the saturated clip also removed
MCL_JCV_SLICES = (
    SliceSpec("all"),
    SliceSpec("excl-regressions", ("SRC09", "SRC13")),
    SliceSpec("excl-regressions-saturation", ("SRC09", "SRC13", "SRC29")),
)


@dataclass(frozen=True)
class MetricStats:
    n: int
    mean: float
    median: float
    median_low: float
    std: float
    min: float
    max: float
    wins: int


@dataclass(frozen=True)
class CorpusSlice:
    name: str
    included: tuple[str, ...]
    stats: Mapping[MetricKind, MetricStats]

    @property
    def win_count(self) -> dict[MetricKind, int]:
        return {m: s.wins for m, s in self.stats.items()}


def _matches(sequence_id: str, pattern: str) -> bool:
    # "SRC09" also matches "videoSRC09_1920x1080" but never "SRC090"
    if sequence_id == pattern:
        return True
    return re.search(rf"(?<!\d){re.escape(pattern)}(?!\d)", sequence_id) is not None


def metric_stats(values: Sequence[float]) -> MetricStats:
    v = np.sort(np.asarray(values, dtype=float))
    n = v.size
    if n == 0:
        raise InvalidSliceError("no values to aggregate")
    mean = math.fsum(v) / n
    mid = (n - 1) // 2
    median = float(v[mid]) if n % 2 else (float(v[mid]) + float(v[mid + 1])) / 2
    std = math.sqrt(math.fsum((v - mean) ** 2) / n)
    return MetricStats(n, mean, median, float(v[mid]), std, float(v[0]), float(v[-1]),
                       int(np.count_nonzero(v < 0)))


def aggregate(records: Iterable[SequenceRecord], spec: SliceSpec = SliceSpec("all")) -> CorpusSlice:
    """Per-metric mean, median, population std, range and win counts over one slice.

    A record lacking a metric (e.g. an errored BD) is left out of that
    metric's statistics only.
    """
    records = list(records)
    included = [r for r in records if not any(_matches(r.sequence_id, x) for x in spec.exclude)]
    if not included:
        raise InvalidSliceError(f"slice {spec.name!r} is empty after exclusions")
    stats = {}
    for m in MetricKind:
        vals = [r.bd[m] for r in included if m in r.bd]
        if vals:
            stats[m] = metric_stats(vals)
    if not stats:
        raise InvalidSliceError(f"slice {spec.name!r} has no BD values")
    return CorpusSlice(spec.name, tuple(r.sequence_id for r in included), stats)


# ---------------------------------------------------------------- taxonomy

class FailureKind(str, enum.Enum):
    RATE_FLOOR_VIOLATION = "RateFloorViolation"
    DISTRIBUTION_SHIFT = "DistributionShift"
    METRIC_SATURATION = "MetricSaturation"
    NO_FAILURE = "NoFailure"


@dataclass(frozen=True)
class TaxonomyThresholds:
    # BD-VMAF and BD-VMAF-NEG (pp) both above this => regression
    regression_pp: float = 10.0
    # smooth-block fraction at or above this => rate-floor rather than shift
    smooth_fraction: float = 0.5
    # baseline VMAF at the lowest QP at or above this => near the metric ceiling
    saturation_quality: float = 98.0
    # |BD-VMAF - BD-VMAF-NEG| (pp) at or above this counts as strong disagreement
    disagreement_pp: float = 20.0

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class FailureLabel:
    sequence_id: str
    kind: FailureKind
    confidence: str
    evidence: tuple[str, ...]
    thresholds: TaxonomyThresholds = field(default_factory=TaxonomyThresholds)


def classify_failure(record: SequenceRecord,
                     thresholds: TaxonomyThresholds = TaxonomyThresholds()) -> FailureLabel:
    t = thresholds
    ev = []
    vmaf = record.bd.get(MetricKind.VMAF)
    neg = record.bd.get(MetricKind.VMAF_NEG)
    if vmaf is None or neg is None:
        ev.append("BD-VMAF and/or BD-VMAF-NEG missing; only NoFailure is reachable")
        return FailureLabel(record.sequence_id, FailureKind.NO_FAILURE, "low", tuple(ev), t)

    if vmaf > t.regression_pp and neg > t.regression_pp:
        ev.append(f"BD-VMAF {vmaf:+.2f}% and BD-VMAF-NEG {neg:+.2f}% both exceed "
                  f"+{t.regression_pp:g} pp")
        if record.smooth_fraction is None:
            ev.append("no smooth_fraction supplied; rate-floor cannot be tested")
            return FailureLabel(record.sequence_id, FailureKind.DISTRIBUTION_SHIFT, "low", tuple(ev), t)
        if record.smooth_fraction >= t.smooth_fraction:
            ev.append(f"smooth_fraction {record.smooth_fraction:.3f} >= {t.smooth_fraction:g}: "
                      "content already coded near the rate floor")
            return FailureLabel(record.sequence_id, FailureKind.RATE_FLOOR_VIOLATION, "high", tuple(ev), t)
        ev.append(f"smooth_fraction {record.smooth_fraction:.3f} < {t.smooth_fraction:g}: "
                  "textured content regressed")
        if record.chroma_saturation is not None:
            ev.append(f"chroma_saturation {record.chroma_saturation:.3f}")
        return FailureLabel(record.sequence_id, FailureKind.DISTRIBUTION_SHIFT, "medium", tuple(ev), t)

    spread = abs(vmaf - neg)
    top = record.baseline_top_quality
    if top is None:
        ev.append("no baseline_top_quality supplied; saturation not tested")
    elif top >= t.saturation_quality and spread >= t.disagreement_pp:
        ev.append(f"baseline top quality {top:.2f} >= {t.saturation_quality:g} and "
                  f"|BD-VMAF - BD-VMAF-NEG| = {spread:.2f} >= {t.disagreement_pp:g} pp")
        return FailureLabel(record.sequence_id, FailureKind.METRIC_SATURATION, "medium", tuple(ev), t)
    ev.append(f"BD-VMAF {vmaf:+.2f}%, BD-VMAF-NEG {neg:+.2f}%")
    return FailureLabel(record.sequence_id, FailureKind.NO_FAILURE,
                        "high" if top is not None else "medium", tuple(ev), t)


# ---------------------------------------------------------------- gaming signature

@dataclass(frozen=True)
class GamingVerdict:
    flagged: bool
    mean_bd_vmaf: float
    mean_bd_vmaf_neg: float
    neg_positive_fraction: float
    sign_pattern: str
    evidence: tuple[str, ...]


def gaming_signature(bd_vmaf: Sequence[float], bd_vmaf_neg: Sequence[float],
                     threshold_pp: float = 5.0, positive_share: float = 0.8) -> GamingVerdict:
    """Flag VMAF gains that VMAF-NEG reverses, across a set of sequences.

    Flagged when mean BD-VMAF <= -T, mean BD-VMAF-NEG >= +T, and BD-VMAF-NEG
    is positive on at least ``positive_share`` of the sequences.
    """
    a = np.asarray(bd_vmaf, dtype=float)
    b = np.asarray(bd_vmaf_neg, dtype=float)
    if a.size == 0 or a.shape != b.shape:
        raise InvalidInputError("need equal-length, non-empty BD vectors")
    mv = math.fsum(a) / a.size
    mn = math.fsum(b) / b.size
    npos = int(np.count_nonzero(b > 0))
    share = npos / b.size
    pattern = "".join("+" if x > 0 else "-" if x < 0 else "0" for x in sorted(b))
    flagged = mv <= -threshold_pp and mn >= threshold_pp and share >= positive_share
    ev = (f"mean BD-VMAF {mv:+.2f}% (gate <= -{threshold_pp:g})",
          f"mean BD-VMAF-NEG {mn:+.2f}% (gate >= +{threshold_pp:g})",
          f"BD-VMAF-NEG positive on {npos} of {b.size} (gate {positive_share:.0%})")
    return GamingVerdict(flagged, mv, mn, share, pattern, ev)


# ---------------------------------------------------------------- content statistics

def smooth_fraction(luma: np.ndarray, variance_threshold: float = 4.0) -> float:
    """Fraction of 8x8 luma blocks whose sample variance (n-1) is below the threshold."""
    y = np.asarray(luma, dtype=float)
    if y.ndim != 2:
        raise InvalidInputError("luma plane must be 2-D")
    h, w = y.shape
    if h % 8 or w % 8 or h == 0 or w == 0:
        raise InvalidInputError(f"luma plane {w}x{h} is not tileable by 8x8 blocks")
    blocks = y.reshape(h // 8, 8, w // 8, 8).swapaxes(1, 2).reshape(-1, 64)
    return float(np.count_nonzero(blocks.var(axis=1, ddof=1) < variance_threshold)) / blocks.shape[0]


def chroma_saturation(cb: np.ndarray, cr: np.ndarray) -> float:
    """Mean chroma distance from neutral grey, normalized to [0, 1]."""
    u = np.asarray(cb, dtype=float) - 128.0
    v = np.asarray(cr, dtype=float) - 128.0
    return float(np.mean(np.hypot(u, v)) / math.hypot(128.0, 128.0))


def sequence_aux(path, width: int, height: int, frames: int, max_frames: int = 16,
                 variance_threshold: float = 4.0) -> tuple[float, float]:
    """(smooth_fraction, chroma_saturation) averaged over evenly spaced frames of a raw clip."""
    frame_bytes = width * height * 3 // 2
    raw = np.memmap(path, dtype=np.uint8, mode="r")
    if raw.size < frame_bytes * frames:
        raise InvalidInputError(f"{path}: shorter than {frames} frames of {width}x{height}")
    idx = np.unique(np.linspace(0, frames - 1, min(frames, max_frames)).round().astype(int))
    ch = (height // 2) * (width // 2)
    sf, cs = [], []
    for i in idx:
        base = int(i) * frame_bytes
        y = raw[base:base + width * height].reshape(height, width)
        h8, w8 = height - height % 8, width - width % 8
        sf.append(smooth_fraction(y[:h8, :w8], variance_threshold))
        cb = raw[base + width * height:base + width * height + ch]
        cr = raw[base + width * height + ch:base + frame_bytes]
        cs.append(chroma_saturation(cb, cr))
    return math.fsum(sf) / len(sf), math.fsum(cs) / len(cs)
