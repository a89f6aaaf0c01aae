"""DCT-domain encoder rate estimator and its calibration against real bpp.

The score of a patch at a given QP is ``mean(log(1 + |q|))`` over every
quantized 8x8 DCT coefficient of every plane, where coefficients are divided
by a JPEG quantization table whose quality is derived from the QP. Only the
rank ordering of this score matters; an affine fit maps it onto bits/pixel.
"""

from __future__ import annotations

import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .core import CANONICAL_QPS, CorrelationReport, correlation_report, spearman
from .csvio import parse_float, parse_int, read_rows, write_csv
from .errors import InvalidInputError, JobError, UndefinedCorrelationError

if TYPE_CHECKING:
    from .harness import Harness

QP_MIN, QP_MAX = 18, 40

# ITU-T T.81 Annex K, tables K.1 and K.2
LUMA_BASE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.int64)

CHROMA_BASE = np.array([
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
], dtype=np.int64)


def _dct_matrix(n: int = 8) -> np.ndarray:
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    c = np.sqrt(2.0 / n) * np.cos((2 * i + 1) * k * np.pi / (2 * n))
    c[0, :] = np.sqrt(1.0 / n)
    return c


DCT8 = _dct_matrix()


def dct8x8(block) -> np.ndarray:
    """Orthonormal 2-D DCT-II of an 8x8 (or stacked ...x8x8) array."""
    b = np.asarray(block, dtype=float)
    if b.shape[-2:] != (8, 8):
        raise InvalidInputError(f"expected trailing 8x8 shape, got {b.shape}")
    return DCT8 @ b @ DCT8.T


def idct8x8(coeffs) -> np.ndarray:
    c = np.asarray(coeffs, dtype=float)
    return DCT8.T @ c @ DCT8


@dataclass(frozen=True)
class QualityMapping:
    """Piecewise-linear QP -> JPEG quality map, rounded half-up to an integer.

    Must be strictly decreasing so lower QP always means finer quantization.
    """

    anchors: tuple[tuple[float, float], ...] = ((18, 75), (40, 10))

    def __post_init__(self):
        pts = tuple(sorted((float(q), float(v)) for q, v in self.anchors))
        if len(pts) < 2:
            raise InvalidInputError("quality mapping needs at least two anchors")
        for (q0, v0), (q1, v1) in zip(pts, pts[1:]):
            if q1 <= q0 or v1 >= v0:
                raise InvalidInputError("quality mapping must be strictly decreasing in QP")
        if any(not 1 <= v <= 100 for _, v in pts):
            raise InvalidInputError("JPEG quality anchors must lie in [1, 100]")
        object.__setattr__(self, "anchors", pts)

    def __call__(self, qp: float) -> int:
        qs = [q for q, _ in self.anchors]
        vs = [v for _, v in self.anchors]
        return int(math.floor(float(np.interp(qp, qs, vs)) + 0.5))


DEFAULT_MAPPING = QualityMapping()


def scale_table(base: np.ndarray, quality: int) -> np.ndarray:
    """IJG quality scaling of a base table, entries clamped to [1, 255]."""
    if not 1 <= quality <= 100:
        raise InvalidInputError(f"JPEG quality {quality} outside [1, 100]")
    scale = 5000 // quality if quality < 50 else 200 - 2 * quality
    return np.clip((base * scale + 50) // 100, 1, 255)


def quant_table(qp: int, chroma: bool = False,
                mapping: QualityMapping = DEFAULT_MAPPING) -> np.ndarray:
    if not QP_MIN <= qp <= QP_MAX:
        raise InvalidInputError(f"qp {qp} outside [{QP_MIN}, {QP_MAX}]")
    return scale_table(CHROMA_BASE if chroma else LUMA_BASE, mapping(qp))


@dataclass(frozen=True)
class YuvPatch:
    """8-bit planar 4:2:0 image. Chroma planes may be omitted (luma-only)."""

    y: np.ndarray
    cb: np.ndarray | None = None
    cr: np.ndarray | None = None
    patch_id: str = ""

    def __post_init__(self):
        if self.y.ndim != 2:
            raise InvalidInputError("Y plane must be 2-D")
        if (self.cb is None) != (self.cr is None):
            raise InvalidInputError("supply both chroma planes or neither")
        if self.cb is not None:
            want = (self.height // 2, self.width // 2)
            if self.height % 2 or self.width % 2 or self.cb.shape != want or self.cr.shape != want:
                raise InvalidInputError(f"chroma planes must be {want} for a {self.width}x{self.height} patch")

    @property
    def width(self) -> int:
        return self.y.shape[1]

    @property
    def height(self) -> int:
        return self.y.shape[0]

    def planes(self) -> list[tuple[np.ndarray, bool]]:
        out = [(self.y, False)]
        if self.cb is not None:
            out += [(self.cb, True), (self.cr, True)]
        return out

    def with_neutral_chroma(self) -> "YuvPatch":
        if self.cb is not None:
            return self
        c = np.full((self.height // 2, self.width // 2), 128, dtype=np.uint8)
        return YuvPatch(self.y, c, c.copy(), self.patch_id)

    def to_bytes(self) -> bytes:
        p = self.with_neutral_chroma()
        return b"".join(np.ascontiguousarray(a, dtype=np.uint8).tobytes() for a in (p.y, p.cb, p.cr))

    @classmethod
    def from_bytes(cls, buf: bytes, width: int, height: int, patch_id: str = "") -> "YuvPatch":
        ysz = width * height
        csz = (width // 2) * (height // 2)
        if len(buf) != ysz + 2 * csz:
            raise InvalidInputError(f"{len(buf)} bytes is not one {width}x{height} 4:2:0 frame")
        a = np.frombuffer(buf, dtype=np.uint8)
        return cls(a[:ysz].reshape(height, width),
                   a[ysz:ysz + csz].reshape(height // 2, width // 2),
                   a[ysz + csz:].reshape(height // 2, width // 2),
                   patch_id)


def _blocks(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    if h % 8 or w % 8:
        raise InvalidInputError(f"plane {w}x{h} is not tileable by 8x8 blocks")
    return plane.reshape(h // 8, 8, w // 8, 8).swapaxes(1, 2).reshape(-1, 8, 8)


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantized_coefficients(patch: YuvPatch, qp: int,
                           mapping: QualityMapping = DEFAULT_MAPPING) -> list[np.ndarray]:
    out = []
    for plane, is_chroma in patch.planes():
        coeffs = dct8x8(_blocks(plane.astype(float) - 128.0))
        out.append(round_half_away(coeffs / quant_table(qp, is_chroma, mapping)))
    return out


def rate_score(patch: YuvPatch, qp: int, mapping: QualityMapping = DEFAULT_MAPPING) -> float:
    """Mean log(1 + |quantized coefficient|) over all planes' coefficients."""
    total = []
    count = 0
    for q in quantized_coefficients(patch, qp, mapping):
        total.append(math.fsum(np.log1p(np.abs(q)).ravel()))
        count += q.size
    return math.fsum(total) / count


# ---------------------------------------------------------------- patch files

_DIMS = re.compile(r"(\d+)x(\d+)")


def patch_geometry(path: str | Path) -> tuple[int, int]:
    """Width and height from a ``<path>.json`` sidecar or ``WxH`` in the filename."""
    path = Path(path)
    sidecar = path.with_name(path.name + ".json")
    if sidecar.exists():
        import json
        meta = json.loads(sidecar.read_text(encoding="utf-8"))
        return int(meta["width"]), int(meta["height"])
    m = None
    for m in _DIMS.finditer(path.stem):
        pass
    if m is None:
        raise InvalidInputError(f"{path.name}: no WxH in filename and no sidecar descriptor")
    return int(m.group(1)), int(m.group(2))


def read_patch(path: str | Path) -> YuvPatch:
    w, h = patch_geometry(path)
    return YuvPatch.from_bytes(Path(path).read_bytes(), w, h, Path(path).stem)


def write_patch(patch: YuvPatch, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{patch.patch_id or 'patch'}_{patch.width}x{patch.height}.yuv"
    path.write_bytes(patch.to_bytes())
    return path


def extract_patches(source: str | Path, width: int, height: int, count: int,
                    size: int = 256, seed: int = 0) -> list[YuvPatch]:
    """Seeded random ``size``x``size`` crops from a raw 4:2:0 8-bit video."""
    if size % 16:
        raise InvalidInputError("patch size must be a multiple of 16")
    if size > width or size > height:
        raise InvalidInputError(f"patch size {size} exceeds frame {width}x{height}")
    frame_bytes = width * height * 3 // 2
    raw = np.memmap(source, dtype=np.uint8, mode="r")
    if raw.size == 0 or raw.size % frame_bytes:
        raise InvalidInputError(f"{source}: size {raw.size} is not a whole number of "
                                f"{width}x{height} 4:2:0 frames")
    frames = raw.size // frame_bytes
    rng = np.random.default_rng(seed)
    cw, ch = width // 2, height // 2
    out = []
    for i in range(count):
        f = int(rng.integers(frames))
        x = 2 * int(rng.integers((width - size) // 2 + 1))
        y = 2 * int(rng.integers((height - size) // 2 + 1))
        base = f * frame_bytes
        yp = raw[base:base + width * height].reshape(height, width)
        cb = raw[base + width * height:base + width * height + cw * ch].reshape(ch, cw)
        cr = raw[base + width * height + cw * ch:base + frame_bytes].reshape(ch, cw)
        s2 = size // 2
        out.append(YuvPatch(np.array(yp[y:y + size, x:x + size]),
                            np.array(cb[y // 2:y // 2 + s2, x // 2:x // 2 + s2]),
                            np.array(cr[y // 2:y // 2 + s2, x // 2:x // 2 + s2]),
                            f"patch_{i:04d}"))
    return out


# ---------------------------------------------------------------- real encoder bpp

def bits_per_pixel(stream_bytes: int, width: int, height: int, frames: int = 1) -> float:
    if stream_bytes <= 0:
        raise JobError("encoded stream is empty; refusing to report 0 bpp")
    return 8.0 * stream_bytes / (width * height * frames)


def measure_real_bpp(patch: YuvPatch, qp: int, encoder: "Harness") -> float:
    """Encode the patch as a one-frame clip and return stream bits per luma pixel."""
    result = encoder.encode_patch(patch, qp)
    return bits_per_pixel(result.stream_bytes, patch.width, patch.height, 1)


# ---------------------------------------------------------------- calibration

@dataclass(frozen=True)
class RateMeasurement:
    patch_id: str
    qp: int
    real_bpp: float
    proxy_raw: float

    def __post_init__(self):
        if not self.real_bpp > 0:
            raise InvalidInputError(f"{self.patch_id}@{self.qp}: real_bpp must be > 0")
        if not self.proxy_raw >= 0:
            raise InvalidInputError(f"{self.patch_id}@{self.qp}: proxy_raw must be >= 0")


@dataclass(frozen=True)
class CalibrationFit:
    slope: float
    intercept: float
    report: CorrelationReport
    per_qp_rho: dict[int, float]
    monotone_fraction: float
    # fraction of patches whose per-patch proxy/real rank correlation is exactly 1
    concordant_fraction: float
    n_patches: int
    excluded_patches: tuple[str, ...] = ()
    notes: tuple[str, ...] = field(default_factory=tuple)

    def predict(self, proxy_raw):
        return self.slope * np.asarray(proxy_raw, dtype=float) + self.intercept


def calibrate(measurements: Sequence[RateMeasurement]) -> CalibrationFit:
    by_patch: dict[str, list[RateMeasurement]] = defaultdict(list)
    by_qp: dict[int, list[RateMeasurement]] = defaultdict(list)
    for m in measurements:
        by_patch[m.patch_id].append(m)
        by_qp[m.qp].append(m)
    if len(by_patch) < 2:
        raise InvalidInputError("calibration needs at least two distinct patches")

    proxy = [m.proxy_raw for m in measurements]
    real = [m.real_bpp for m in measurements]
    slope, intercept, report = correlation_report(proxy, real)

    notes = []
    per_qp = {}
    for qp in sorted(by_qp):
        ms = by_qp[qp]
        try:
            per_qp[qp] = spearman([m.proxy_raw for m in ms], [m.real_bpp for m in ms])
        except (InvalidInputError, UndefinedCorrelationError) as exc:
            notes.append(f"qp {qp}: per-QP rho undefined ({exc})")

    excluded = []
    monotone = concordant = 0
    for pid, ms in sorted(by_patch.items()):
        ms = sorted(ms, key=lambda m: m.qp)
        if len({m.qp for m in ms}) < 2 or len(ms) != len({m.qp for m in ms}):
            excluded.append(pid)
            continue
        p = np.array([m.proxy_raw for m in ms])
        if np.all(np.diff(p) < 0):
            monotone += 1
        try:
            if spearman(p, [m.real_bpp for m in ms]) == 1.0:
                concordant += 1
        except UndefinedCorrelationError:
            pass
    usable = len(by_patch) - len(excluded)
    if excluded:
        notes.append(f"{len(excluded)} patch(es) lacked >= 2 distinct QPs; excluded from monotonicity")
    return CalibrationFit(
        slope=slope,
        intercept=intercept,
        report=report,
        per_qp_rho=per_qp,
        monotone_fraction=monotone / usable if usable else float("nan"),
        concordant_fraction=concordant / usable if usable else float("nan"),
        n_patches=len(by_patch),
        excluded_patches=tuple(excluded),
        notes=tuple(notes),
    )


def score_patches(patches: Iterable[YuvPatch], qps: Sequence[int] = CANONICAL_QPS,
                  mapping: QualityMapping = DEFAULT_MAPPING) -> dict[tuple[str, int], float]:
    return {(p.patch_id, qp): rate_score(p, qp, mapping) for p in patches for qp in qps}


def run_calibration(patches: Sequence[YuvPatch], harness: "Harness",
                    qps: Sequence[int] = CANONICAL_QPS,
                    mapping: QualityMapping = DEFAULT_MAPPING) -> tuple[list[RateMeasurement], CalibrationFit]:
    """Measure real bpp for every patch x QP (in parallel) and fit the proxy."""
    ids = [p.patch_id for p in patches]
    if len(set(ids)) != len(ids):
        raise InvalidInputError("patch ids must be unique")
    jobs = [(p, qp) for p in patches for qp in qps]
    bpps = harness.map(lambda pq: measure_real_bpp(pq[0], pq[1], harness), jobs)
    measurements = [RateMeasurement(p.patch_id, qp, bpp, rate_score(p, qp, mapping))
                    for (p, qp), bpp in zip(jobs, bpps)]
    return measurements, calibrate(measurements)


MEASUREMENT_COLUMNS = ("patch_id", "qp", "proxy_raw", "real_bpp")


def write_measurements(path, measurements: Iterable[RateMeasurement]) -> None:
    write_csv(path, MEASUREMENT_COLUMNS,
              ((m.patch_id, m.qp, f"{m.proxy_raw:.9f}", f"{m.real_bpp:.9f}") for m in measurements))


def read_measurements(path) -> list[RateMeasurement]:
    out = []
    for line, row in read_rows(path, MEASUREMENT_COLUMNS):
        out.append(RateMeasurement(row["patch_id"], parse_int(row["qp"], "qp", path, line),
                                   parse_float(row["real_bpp"], "real_bpp", path, line),
                                   parse_float(row["proxy_raw"], "proxy_raw", path, line)))
    return out


def write_fit_summary(path, fit: CalibrationFit, qps: Sequence[int] = CANONICAL_QPS) -> None:
    qps = sorted(set(qps) | set(fit.per_qp_rho))
    header = ["slope", "intercept", "spearman", "pearson", "mae", "n",
              *(f"per_qp_rho_{q}" for q in qps), "monotone_fraction", "concordant_fraction"]
    row = [f"{fit.slope:.6f}", f"{fit.intercept:.6f}", f"{fit.report.spearman_rho:.6f}",
           f"{fit.report.pearson_r:.6f}", f"{fit.report.mae:.6f}", fit.report.n,
           *(f"{fit.per_qp_rho[q]:.6f}" if q in fit.per_qp_rho else "" for q in qps),
           f"{fit.monotone_fraction:.6f}", f"{fit.concordant_fraction:.6f}"]
    write_csv(path, header, [row])
