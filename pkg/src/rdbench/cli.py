"""rdbench command line.

Exit codes: 0 success, 1 tool/runtime failure, 2 parse, usage or config
error, 3 partial results (some sequences or jobs errored).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .analytics import (
    MCL_JCV_SLICES, SliceSpec, aggregate, classify_failure, gaming_signature, sequence_aux,
)
from .config import Config, load_config
from .core import MetricKind
from .csvio import atomic_write_text, render_csv
from .errors import (
    ConfigError, InvalidInputError, InvalidSliceError, ParseError, RDBenchError,
)

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_PARTIAL = 0, 1, 2, 3

log = logging.getLogger("rdbench")


def _qps(text: str) -> tuple[int, ...]:
    try:
        qps = tuple(int(q) for q in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad QP list {text!r}") from None
    if len(qps) < 2 or list(qps) != sorted(set(qps)):
        raise argparse.ArgumentTypeError("QP list must be at least two strictly increasing integers")
    return qps


def _slices(text: str | None, cfg: Config) -> tuple[SliceSpec, ...]:
    if text is None:
        return cfg.slices
    if text == "mcl-jcv":
        return MCL_JCV_SLICES
    path = Path(text)
    if path.exists():
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
        if isinstance(data, dict):
            data = data.get("slices", [])
        return tuple(SliceSpec.from_mapping(s) for s in data)
    # inline form: name:ID,ID;name2:ID
    out = []
    for part in text.split(";"):
        name, _, ids = part.partition(":")
        if not name.strip():
            raise ConfigError(f"bad slice spec {text!r}")
        out.append(SliceSpec(name.strip(), tuple(i.strip() for i in ids.split(",") if i.strip())))
    return tuple(out)


# ---------------------------------------------------------------- commands

def cmd_sweep(args, cfg: Config) -> int:
    from .harness import Harness, Tools, VariantSpec, read_manifest
    from .report import rows_from_encodes, write_per_qp

    sequences = read_manifest(args.manifest)
    variants = [VariantSpec.parse(v) for v in args.variant]
    tools = Tools.discover(args.ffmpeg or cfg.ffmpeg)
    harness = Harness(tools, cache_dir=args.cache_dir or cfg.cache_dir,
                      workers=args.workers or cfg.workers,
                      keep_intermediates=args.keep_intermediates or cfg.keep_intermediates)
    qps = args.qps or cfg.qp_grid
    log.info("ffmpeg %s (%s)", tools.ffmpeg, tools.version)
    done, failures = harness.sweep(sequences, variants, qps, args.baseline or cfg.baseline_variant)
    out = Path(args.out)
    write_per_qp(out, rows_from_encodes(done))
    meta = dict(harness.metadata(), qps=list(qps), manifest=str(args.manifest),
                variants=[{"name": v.name, "encoder": v.encoder.value, "preprocessor": v.preprocessor}
                          for v in variants])
    atomic_write_text(out.with_suffix(out.suffix + ".meta.json"), json.dumps(meta, indent=1, sort_keys=True))
    print(f"wrote {len(done)} rows to {out}")
    if failures:
        fpath = Path(args.failures) if args.failures else out.with_name(out.stem + ".failures.csv")
        atomic_write_text(fpath, render_csv(("sequence", "variant", "qp", "error"),
                                            ([f.sequence_id, f.variant_id, "" if f.qp is None else f.qp,
                                              f.error.replace("\n", " | ")] for f in failures)))
        print(f"{len(failures)} job(s) failed; see {fpath}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_bdrate(args, cfg: Config) -> int:
    from .report import read_per_qp, summarize, summary_table, write_summary

    rows = read_per_qp(args.per_qp, cfg.column_aliases)
    summary = summarize(rows, args.baseline or cfg.baseline_variant)
    if not summary:
        raise ConfigError("no comparison variant found next to the baseline")
    print(summary_table(summary))
    if args.out:
        write_summary(args.out, summary, None if args.full_precision else 2)
    errored = [r for r in summary if r.errors]
    for r in errored:
        for m, why in r.errors.items():
            print(f"ERROR {r.sequence}/{r.variant} {m.label}: {why}", file=sys.stderr)
    return EXIT_PARTIAL if errored else EXIT_OK


def cmd_report(args, cfg: Config) -> int:
    from .report import (
        read_aux, read_summary, records_for, render_slices, slice_table, variants_of,
    )

    rows = read_summary(args.summary, cfg.column_aliases)
    aux = read_aux(args.aux, cfg.column_aliases) if args.aux else {}
    specs = _slices(args.slices, cfg)
    variants = [args.variant] if args.variant else variants_of(rows)
    csv_parts = []
    status = EXIT_OK
    for v in variants:
        recs = records_for(rows, v, aux)
        if not recs:
            raise ConfigError(f"variant {v!r} not in {args.summary}")
        slices = [aggregate(recs, s) for s in specs]
        print(f"== {v}")
        print(slice_table(slices))
        csv_parts.append((v, slices))
        both = [r for r in recs if MetricKind.VMAF in r.bd and MetricKind.VMAF_NEG in r.bd]
        if both:
            g = gaming_signature([r.bd[MetricKind.VMAF] for r in both],
                                 [r.bd[MetricKind.VMAF_NEG] for r in both],
                                 cfg.gaming_threshold_pp, cfg.gaming_positive_share)
            print(f"gaming signature: {'FLAGGED' if g.flagged else 'not flagged'}; " + "; ".join(g.evidence))
        if aux:
            print(_labels_table(recs, cfg))
        if any(r.variant == v and r.errors for r in rows):
            status = EXIT_PARTIAL
    if args.out:
        atomic_write_text(args.out, render_slices(csv_parts))
    return status


def _labels_table(recs, cfg: Config) -> str:
    from .report import format_table
    t = cfg.thresholds
    lines = [format_table(["sequence", "label", "confidence", "evidence"],
                          [[r.sequence_id, lab.kind.value, lab.confidence, " / ".join(lab.evidence)]
                           for r in recs for lab in [classify_failure(r, t)]])]
    lines.append("thresholds: " + ", ".join(f"{k}={v:g}" for k, v in t.as_dict().items()))
    return "\n".join(lines)


def cmd_classify(args, cfg: Config) -> int:
    from .harness import read_manifest
    from .report import baseline_top_quality, read_aux, read_per_qp, read_summary, records_for, variants_of

    rows = read_summary(args.summary, cfg.column_aliases)
    aux: dict[str, dict[str, float]] = {}
    if args.per_qp:
        tops = baseline_top_quality(read_per_qp(args.per_qp, cfg.column_aliases),
                                    args.baseline or cfg.baseline_variant)
        for s, q in tops.items():
            aux.setdefault(s, {})["baseline_top_quality"] = q
    if args.manifest:
        for seq in read_manifest(args.manifest):
            seq.check_geometry()
            sf, cs = sequence_aux(seq.path, seq.width, seq.height, seq.frames)
            aux.setdefault(seq.sequence_id, {}).update(smooth_fraction=sf, chroma_saturation=cs)
    if args.aux:
        for s, vals in read_aux(args.aux, cfg.column_aliases).items():
            aux.setdefault(s, {}).update(vals)
    variants = [args.variant] if args.variant else variants_of(rows)
    out_rows = []
    t = cfg.thresholds
    for v in variants:
        recs = records_for(rows, v, aux)
        if not recs:
            raise ConfigError(f"variant {v!r} not in {args.summary}")
        print(f"== {v}")
        print(_labels_table(recs, cfg))
        for r in recs:
            lab = classify_failure(r, t)
            out_rows.append([r.sequence_id, v, lab.kind.value, lab.confidence, " / ".join(lab.evidence),
                             *(f"{x:g}" for x in t.as_dict().values())])
    if args.out:
        atomic_write_text(args.out, render_csv(
            ("sequence", "variant", "label", "confidence", "evidence", *t.as_dict().keys()), out_rows))
    return EXIT_OK


def cmd_plot(args, cfg: Config) -> int:
    from .plots import plot_family, scatter_svg
    from .report import build_curve, group_rows, read_per_qp, read_summary

    if not args.per_qp and not args.summary:
        raise ConfigError("plot needs a per-QP CSV and/or --summary")
    out = Path(args.out)
    written = []
    status = EXIT_OK
    if args.per_qp:
        rows = read_per_qp(args.per_qp, cfg.column_aliases)
        curves: dict[str, dict] = {}
        for seq, legs in group_rows(rows).items():
            for v, rs in legs.items():
                try:
                    curves.setdefault(seq, {})[v] = build_curve(seq, v, rs)
                except InvalidInputError as exc:
                    print(f"skipping {seq}/{v}: {exc}", file=sys.stderr)
                    status = EXIT_PARTIAL
        metrics = list(MetricKind) if args.metric == "all" else [MetricKind(args.metric)]
        for m in metrics:
            if not any(m in r.scores for r in rows):
                raise ConfigError(f"{args.per_qp} has no {m.value} column")
            written += plot_family(curves, m, out, args.baseline or cfg.baseline_variant, args.variant)
    if args.summary:
        srows = read_summary(args.summary, cfg.column_aliases)
        one_variant = len({r.variant for r in srows}) == 1
        pts = [(r.sequence if one_variant else f"{r.sequence}/{r.variant}",
                r.bd[MetricKind.VMAF], r.bd[MetricKind.VMAF_NEG])
               for r in srows if MetricKind.VMAF in r.bd and MetricKind.VMAF_NEG in r.bd]
        if not pts:
            raise ConfigError(f"{args.summary} has no rows with both BD-VMAF and BD-VMAF-NEG")
        path = out / "scatter_bd_vmaf_vs_bd_vmaf_neg.svg"
        atomic_write_text(path, scatter_svg(pts))
        written.append(path)
    for p in written:
        print(p)
    return status


def cmd_calibrate(args, cfg: Config) -> int:
    from .rate_proxy import (
        calibrate, extract_patches, read_measurements, read_patch, run_calibration,
        write_fit_summary, write_measurements, write_patch,
    )

    out = Path(args.out_dir)
    qps = args.qps or cfg.qp_grid
    if args.from_csv:
        measurements = read_measurements(args.from_csv)
        fit = calibrate(measurements)
    else:
        from .harness import Harness, Tools
        if args.source:
            if not (args.width and args.height):
                raise ConfigError("--source needs --width and --height")
            patches = extract_patches(args.source, args.width, args.height, args.count,
                                      args.size, args.seed)
            if args.save_patches:
                for p in patches:
                    write_patch(p, out / "patches")
        elif args.patches_dir:
            files = sorted(Path(args.patches_dir).glob("*.yuv"))
            if not files:
                raise ConfigError(f"no .yuv patches in {args.patches_dir}")
            patches = [read_patch(f) for f in files]
        else:
            raise ConfigError("calibrate needs --source, --patches-dir or --from-csv")
        harness = Harness(Tools.discover(args.ffmpeg or cfg.ffmpeg),
                          cache_dir=args.cache_dir or cfg.cache_dir, workers=args.workers or cfg.workers)
        measurements, fit = run_calibration(patches, harness, qps, cfg.quality_mapping)
        write_measurements(out / "measurements.csv", measurements)
    write_fit_summary(out / "fit_summary.csv", fit, qps)
    r = fit.report
    print(f"affine fit      : bpp_pred = {fit.slope:.3f} * proxy_raw {fit.intercept:+.3f}")
    print(f"spearman / r    : {r.spearman_rho:.4f} / {r.pearson_r:.4f}  (n={r.n})")
    print(f"MAE             : {r.mae:.4f} bpp")
    print("per-QP rho      : " + ", ".join(f"qp{q}={v:.3f}" for q, v in sorted(fit.per_qp_rho.items())))
    print(f"monotone        : {fit.monotone_fraction:.1%} of {fit.n_patches - len(fit.excluded_patches)} patches")
    for n in fit.notes:
        print(f"note: {n}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rdbench", description="Rate-distortion benchmarking toolkit.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--config", help="JSON run config")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="encode and score a corpus into a per-QP CSV")
    p.add_argument("--manifest", required=True)
    p.add_argument("--variant", action="append", default=[],
                   help="NAME=preproc:CMD, NAME=encoder:KIND or a bare encoder kind (repeatable)")
    p.add_argument("--out", default="per_qp.csv")
    p.add_argument("--failures", help="failure manifest path (default <out>.failures.csv)")
    p.add_argument("--qps", type=_qps)
    p.add_argument("--baseline")
    p.add_argument("--workers", type=int)
    p.add_argument("--cache-dir")
    p.add_argument("--ffmpeg")
    p.add_argument("--keep-intermediates", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bdrate", help="per-sequence BD-rates from a per-QP CSV")
    p.add_argument("per_qp")
    p.add_argument("--baseline")
    p.add_argument("--out", help="summary CSV to write")
    p.add_argument("--full-precision", action="store_true", help="write unrounded values")
    p.set_defaults(func=cmd_bdrate)

    p = sub.add_parser("report", help="slice statistics over a summary CSV")
    p.add_argument("summary")
    p.add_argument("--slices", help="'mcl-jcv', a JSON file, or inline 'name:ID,ID;name2:'")
    p.add_argument("--aux", help="CSV of per-sequence aux statistics for taxonomy labels")
    p.add_argument("--variant")
    p.add_argument("--out", help="slice statistics CSV to write")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("plot", help="SVG RD plots and BD scatter")
    p.add_argument("per_qp", nargs="?")
    p.add_argument("--metric", default="vmaf", choices=[m.value for m in MetricKind] + ["all"])
    p.add_argument("--summary", help="summary CSV for the BD-VMAF vs BD-VMAF-NEG scatter")
    p.add_argument("--baseline")
    p.add_argument("--variant")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("calibrate", help="fit the DCT rate proxy against real encoder bpp")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--source", help="raw yuv420p video to cut patches from")
    g.add_argument("--patches-dir")
    g.add_argument("--from-csv", help="re-fit from a measurements CSV without encoding")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--count", type=int, default=60)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--save-patches", action="store_true")
    p.add_argument("--qps", type=_qps)
    p.add_argument("--out-dir", default="calibration")
    p.add_argument("--workers", type=int)
    p.add_argument("--cache-dir")
    p.add_argument("--ffmpeg")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("classify", help="failure-mode labels per sequence")
    p.add_argument("summary")
    p.add_argument("--per-qp", help="per-QP CSV supplying baseline quality at the lowest QP")
    p.add_argument("--manifest", help="corpus manifest; smooth/chroma statistics are computed from the raw clips")
    p.add_argument("--aux", help="CSV of precomputed aux statistics")
    p.add_argument("--baseline")
    p.add_argument("--variant")
    p.add_argument("--out")
    p.set_defaults(func=cmd_classify)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except (ParseError, ConfigError, InvalidInputError, InvalidSliceError) as exc:
        print(f"rdbench: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RDBenchError as exc:
        print(f"rdbench: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
