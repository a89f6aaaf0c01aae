"""Per-QP and summary CSV formats, BD summaries and console tables."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .analytics import CorpusSlice, SequenceRecord
from .bd import bd_rate
from .core import MetricKind, RDCurve, RDPoint
from .csvio import atomic_write_text, parse_float, parse_int, read_rows, render_csv
from .errors import (
    ConfigError, DegenerateCurveError, InvalidInputError, NoOverlapError, ParseError,
)

METRICS = (MetricKind.VMAF, MetricKind.VMAF_NEG, MetricKind.PSNR_Y, MetricKind.MS_SSIM)
PER_QP_COLUMNS = ("sequence", "variant", "qp", "bitrate_kbps", *(m.value for m in METRICS))
SUMMARY_COLUMNS = ("sequence", "variant", *(f"bd_{m.value}" for m in METRICS))
ERROR_CELL = "ERROR"

# spellings seen in third-party result files; config aliases are applied on top
DEFAULT_ALIASES = {
    "sequence_id": "sequence", "seq": "sequence", "clip": "sequence", "video": "sequence",
    "leg": "variant", "codec": "variant",
    "bitrate": "bitrate_kbps", "kbps": "bitrate_kbps",
    "vmafneg": "vmaf_neg", "vmaf-neg": "vmaf_neg",
    "psnr": "psnr_y", "psnr-y": "psnr_y", "psnr_y_db": "psnr_y",
    "msssim": "ms_ssim", "ms-ssim": "ms_ssim", "float_ms_ssim": "ms_ssim",
    "bd-vmaf": "bd_vmaf", "bd-vmaf-neg": "bd_vmaf_neg", "bd_vmafneg": "bd_vmaf_neg",
    "bd-psnr-y": "bd_psnr_y", "bd_psnr": "bd_psnr_y", "bd-psnr": "bd_psnr_y",
    "bd-ms-ssim": "bd_ms_ssim", "bd_msssim": "bd_ms_ssim",
}


def _aliases(extra: Mapping[str, str] | None) -> dict[str, str]:
    out = dict(DEFAULT_ALIASES)
    out.update({k.lower(): v for k, v in (extra or {}).items()})
    return out


def fixed(x: float, decimals: int = 2, sign: bool = False) -> str:
    """Fixed-point display text that never shows a negative zero."""
    text = f"{x:{'+' if sign else ''}.{decimals}f}"
    if float(text) == 0.0:
        text = f"{0.0:{'+' if sign else ''}.{decimals}f}"
    return text


def fmt(x: float) -> str:
    """Canonical number text: the shortest string that round-trips the float."""
    return repr(float(x))


# ---------------------------------------------------------------- per-QP rows

@dataclass(frozen=True)
class PerQpRow:
    sequence: str
    variant: str
    qp: int
    bitrate_kbps: float
    scores: Mapping[MetricKind, float] = field(default_factory=dict)

    def point(self) -> RDPoint:
        return RDPoint(self.qp, self.bitrate_kbps, dict(self.scores))


def read_per_qp(path, aliases: Mapping[str, str] | None = None) -> list[PerQpRow]:
    metric_cols = [m.value for m in METRICS]
    rows = read_rows(path, PER_QP_COLUMNS[:4], _aliases(aliases), optional=metric_cols)
    if rows and not any(c in rows[0][1] for c in metric_cols):
        raise ParseError(f"no metric columns (need one of {', '.join(metric_cols)})", str(path), 1)
    out = []
    seen: dict[tuple[str, str, int], int] = {}
    for line, r in rows:
        qp = parse_int(r["qp"], "qp", path, line)
        key = (r["sequence"], r["variant"], qp)
        if not r["sequence"] or not r["variant"]:
            raise ParseError("empty sequence or variant", str(path), line)
        if key in seen:
            raise ParseError(f"duplicate (sequence, variant, qp) {key}; first seen on line {seen[key]}",
                             str(path), line)
        seen[key] = line
        scores = {}
        for m in METRICS:
            cell = r.get(m.value, "")
            if cell:
                scores[m] = parse_float(cell, m.value, path, line)
        rate = parse_float(r["bitrate_kbps"], "bitrate_kbps", path, line)
        try:
            out.append(PerQpRow(r["sequence"], r["variant"], qp, rate, scores))
            out[-1].point()
        except InvalidInputError as exc:
            raise ParseError(str(exc), str(path), line) from None
    if not out:
        raise ParseError("no data rows", str(path))
    return out


def render_per_qp(rows: Iterable[PerQpRow]) -> str:
    body = []
    for r in rows:
        body.append([r.sequence, r.variant, r.qp, fmt(r.bitrate_kbps),
                     *(fmt(r.scores[m]) if m in r.scores else "" for m in METRICS)])
    return render_csv(PER_QP_COLUMNS, body)


def write_per_qp(path, rows: Iterable[PerQpRow]) -> None:
    atomic_write_text(path, render_per_qp(rows))


def rows_from_encodes(encodes) -> list[PerQpRow]:
    """PerQpRows from harness ScoredEncodes, sorted by (sequence, variant, qp)."""
    rows = [PerQpRow(e.job.sequence.sequence_id, e.job.variant_id, e.job.qp, e.bitrate_kbps,
                     dict(e.scores)) for e in encodes]
    return sorted(rows, key=lambda r: (r.sequence, r.variant, r.qp))


def group_rows(rows: Iterable[PerQpRow]) -> dict[str, dict[str, list[PerQpRow]]]:
    """sequence -> variant -> rows, preserving first-appearance order."""
    out: dict[str, dict[str, list[PerQpRow]]] = {}
    for r in rows:
        out.setdefault(r.sequence, {}).setdefault(r.variant, []).append(r)
    return out


def build_curve(sequence: str, variant: str, rows: Sequence[PerQpRow]) -> RDCurve:
    return RDCurve.from_unsorted(sequence, variant, [r.point() for r in rows])


# ---------------------------------------------------------------- summaries

@dataclass(frozen=True)
class SummaryRow:
    sequence: str
    variant: str
    bd: Mapping[MetricKind, float] = field(default_factory=dict)
    # metric -> reason, for BD values that could not be computed
    errors: Mapping[MetricKind, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.errors


def summarize(rows: Sequence[PerQpRow], baseline: str = "baseline") -> list[SummaryRow]:
    """BD-rate of every non-baseline variant against the baseline, per sequence and metric.

    Per-sequence failures (no overlap, degenerate or invalid curves) become
    error cells; a baseline variant absent from the whole file is a config error.
    """
    grouped = group_rows(rows)
    if not any(baseline in variants for variants in grouped.values()):
        found = sorted({r.variant for r in rows})
        raise ConfigError(f"baseline variant {baseline!r} not found; variants present: {found}")
    present = [m for m in METRICS if any(m in r.scores for r in rows)]
    out = []
    for seq, variants in grouped.items():
        others = [v for v in variants if v != baseline]
        if not others:
            continue
        base_curve = base_err = None
        if baseline not in variants:
            base_err = f"no {baseline!r} rows for this sequence"
        else:
            try:
                base_curve = build_curve(seq, baseline, variants[baseline])
            except InvalidInputError as exc:
                base_err = str(exc)
        for v in others:
            bd, errs = {}, {}
            var_curve = var_err = None
            try:
                var_curve = build_curve(seq, v, variants[v])
            except InvalidInputError as exc:
                var_err = str(exc)
            for m in present:
                if base_err or var_err:
                    errs[m] = base_err or var_err
                    continue
                try:
                    bd[m] = bd_rate(base_curve, var_curve, m).bd_rate_percent
                except (NoOverlapError, DegenerateCurveError, InvalidInputError) as exc:
                    errs[m] = str(exc)
            out.append(SummaryRow(seq, v, bd, errs))
    return out


def render_summary(rows: Iterable[SummaryRow], decimals: int | None = 2) -> str:
    """Summary CSV; ``decimals=None`` writes full precision."""
    def cell(r: SummaryRow, m: MetricKind) -> str:
        if m in r.errors:
            return ERROR_CELL
        if m not in r.bd:
            return ""
        return fmt(r.bd[m]) if decimals is None else fixed(r.bd[m], decimals)
    return render_csv(SUMMARY_COLUMNS, ([r.sequence, r.variant, *(cell(r, m) for m in METRICS)]
                                        for r in rows))


def write_summary(path, rows: Iterable[SummaryRow], decimals: int | None = 2) -> None:
    atomic_write_text(path, render_summary(rows, decimals))


def read_summary(path, aliases: Mapping[str, str] | None = None) -> list[SummaryRow]:
    bd_cols = [f"bd_{m.value}" for m in METRICS]
    rows = read_rows(path, ("sequence",), _aliases(aliases), optional=("variant", *bd_cols))
    if rows and not any(c in rows[0][1] for c in bd_cols):
        raise ParseError(f"no BD columns (need one of {', '.join(bd_cols)})", str(path), 1)
    out = []
    seen = set()
    for line, r in rows:
        variant = r.get("variant") or "variant"
        if (r["sequence"], variant) in seen:
            raise ParseError(f"duplicate row for {r['sequence']}/{variant}", str(path), line)
        seen.add((r["sequence"], variant))
        bd, errs = {}, {}
        for m in METRICS:
            text = r.get(f"bd_{m.value}", "").strip().rstrip("%")
            if not text:
                continue
            if text.upper() == ERROR_CELL:
                errs[m] = "error in source file"
                continue
            v = parse_float(text, f"bd_{m.value}", path, line)
            if not math.isfinite(v):
                raise ParseError(f"non-finite bd_{m.value}", str(path), line)
            bd[m] = v
        out.append(SummaryRow(r["sequence"], variant, bd, errs))
    if not out:
        raise ParseError("no data rows", str(path))
    return out


def records_for(rows: Sequence[SummaryRow], variant: str,
                aux: Mapping[str, Mapping[str, float]] | None = None) -> list[SequenceRecord]:
    """SequenceRecords for one variant; ``aux`` maps sequence -> optional statistics."""
    aux = aux or {}
    out = []
    for r in rows:
        if r.variant != variant:
            continue
        a = aux.get(r.sequence, {})
        out.append(SequenceRecord(r.sequence, dict(r.bd), a.get("baseline_top_quality"),
                                  a.get("smooth_fraction"), a.get("chroma_saturation")))
    return out


def variants_of(rows: Iterable[SummaryRow]) -> list[str]:
    seen: dict[str, None] = {}
    for r in rows:
        seen.setdefault(r.variant, None)
    return list(seen)


AUX_COLUMNS = ("baseline_top_quality", "smooth_fraction", "chroma_saturation")


def read_aux(path, aliases: Mapping[str, str] | None = None) -> dict[str, dict[str, float]]:
    """Aux statistics CSV: sequence plus any of baseline_top_quality, smooth_fraction, chroma_saturation."""
    out: dict[str, dict[str, float]] = {}
    for line, r in read_rows(path, ("sequence",), _aliases(aliases), optional=AUX_COLUMNS):
        out[r["sequence"]] = {c: parse_float(r[c], c, path, line) for c in AUX_COLUMNS if r.get(c)}
    return out


def baseline_top_quality(rows: Iterable[PerQpRow], baseline: str = "baseline",
                         metric: MetricKind = MetricKind.VMAF) -> dict[str, float]:
    """Baseline score at the lowest QP of each sequence."""
    best: dict[str, PerQpRow] = {}
    for r in rows:
        if r.variant == baseline and metric in r.scores:
            if r.sequence not in best or r.qp < best[r.sequence].qp:
                best[r.sequence] = r
    return {s: r.scores[metric] for s, r in best.items()}


# ---------------------------------------------------------------- console tables

def format_table(header: Sequence[str], rows: Iterable[Sequence[object]]) -> str:
    rows = [[str(c) for c in r] for r in rows]
    widths = [max([len(h)] + [len(r[i]) for r in rows]) for i, h in enumerate(header)]

    def line(cells):
        return "  ".join(c.ljust(w) if i < 2 else c.rjust(w)
                         for i, (c, w) in enumerate(zip(cells, widths))).rstrip()
    out = [line(header), line(["-" * w for w in widths])]
    out += [line(r) for r in rows]
    return "\n".join(out)


def pct(x: float | None) -> str:
    return "" if x is None else fixed(x, 2, sign=True)


def summary_table(rows: Sequence[SummaryRow]) -> str:
    """Per-sequence BD table with one mean row per variant (errored cells excluded)."""
    header = ["sequence", "variant", *(f"BD-{m.label}" for m in METRICS)]
    body = []
    for r in rows:
        body.append([r.sequence, r.variant,
                     *(ERROR_CELL if m in r.errors else pct(r.bd.get(m)) for m in METRICS)])
    for v in variants_of(rows):
        cells = []
        n_ok = 0
        for m in METRICS:
            vals = [r.bd[m] for r in rows if r.variant == v and m in r.bd]
            n_ok = max(n_ok, len(vals))
            cells.append(pct(math.fsum(vals) / len(vals)) if vals else "")
        body.append([f"mean (n={n_ok})", v, *cells])
    return format_table(header, body)


def slice_table(slices: Sequence[CorpusSlice]) -> str:
    header = ["slice", "n"]
    for m in METRICS:
        header += [f"{m.label} mean", "median", "wins"]
    body = []
    for sl in slices:
        n = len(sl.included)
        row = [sl.name, str(n)]
        for m in METRICS:
            s = sl.stats.get(m)
            row += [pct(s.mean), pct(s.median), f"{s.wins}/{s.n}"] if s else ["", "", ""]
        body.append(row)
    return format_table(header, body)


SLICE_COLUMNS = ("variant", "slice", "n", "metric", "mean", "median", "median_low", "std", "min", "max",
                 "wins")


def render_slices(parts: Sequence[tuple[str, Sequence[CorpusSlice]]]) -> str:
    """Full-precision slice statistics; ``parts`` pairs a variant name with its slices."""
    body = []
    for variant, slices in parts:
        for sl in slices:
            for m, s in sl.stats.items():
                body.append([variant, sl.name, s.n, m.value, fmt(s.mean), fmt(s.median),
                             fmt(s.median_low), fmt(s.std), fmt(s.min), fmt(s.max), s.wins])
    return render_csv(SLICE_COLUMNS, body)
