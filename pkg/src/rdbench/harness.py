"""Deterministic encode / decode / score orchestration around ffmpeg.

Every encode uses the canonical constant-QP command line with ``-threads 1``
so reruns are byte-identical. Results are content-addressed in a cache
directory keyed on (input digest, command line, tool version); cache entries
are published with write-then-rename so an interrupted sweep can resume.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import math
import os
import shlex
import shutil
import subprocess
import tempfile
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence, TypeVar

from .core import CANONICAL_QPS, MetricKind, RDCurve, RDPoint
from .csvio import atomic_write_text, parse_int, read_rows
from .errors import ConfigError, InvalidInputError, JobError, ParseError, ToolError

log = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

FFMPEG_ENV = "RDBENCH_FFMPEG"
VMAF_MODELS = {MetricKind.VMAF: "vmaf_v0.6.1", MetricKind.VMAF_NEG: "vmaf_v0.6.1neg"}
# libvmaf feature names carrying the remaining two metrics
_FEATURE_KEYS = {MetricKind.PSNR_Y: "psnr_y", MetricKind.MS_SSIM: "float_ms_ssim"}
_X265_SINGLE_THREAD = "pools=none:frame-threads=1:log-level=error"


class EncoderKind(str, enum.Enum):
    X264_MEDIUM = "x264-medium"
    X264_TUNE_PSNR = "x264-tune-psnr"
    X264_TUNE_SSIM = "x264-tune-ssim"
    X264_HQDN3D = "x264-hqdn3d"
    X264_UNSHARP = "x264-unsharp"
    X265_MEDIUM = "x265-medium"

    @classmethod
    def parse(cls, text: str) -> "EncoderKind":
        key = text.strip().lower().replace("_", "-")
        for e in cls:
            if key in (e.value, e.name.lower().replace("_", "-")):
                return e
        raise InvalidInputError(f"unknown encoder {text!r}; expected one of "
                                f"{', '.join(e.value for e in cls)}")


@dataclass(frozen=True)
class RawSequence:
    """A raw planar yuv420p 8-bit clip and its declared geometry."""

    sequence_id: str
    path: Path
    width: int
    height: int
    fps: str
    frames: int
    pix_fmt: str = "yuv420p"

    def __post_init__(self):
        object.__setattr__(self, "path", Path(self.path))
        object.__setattr__(self, "fps", str(self.fps))
        if self.pix_fmt != "yuv420p":
            raise InvalidInputError(f"{self.sequence_id}: only yuv420p is supported, got {self.pix_fmt}")
        if self.width <= 0 or self.height <= 0 or self.width % 2 or self.height % 2:
            raise InvalidInputError(f"{self.sequence_id}: bad geometry {self.width}x{self.height}")
        if self.frames <= 0:
            raise InvalidInputError(f"{self.sequence_id}: frame count must be positive")
        if self.fps_value <= 0:
            raise InvalidInputError(f"{self.sequence_id}: fps must be positive")

    @property
    def fps_value(self) -> Fraction:
        try:
            return Fraction(self.fps)
        except (ValueError, ZeroDivisionError):
            raise InvalidInputError(f"{self.sequence_id}: bad fps {self.fps!r}") from None

    @property
    def frame_bytes(self) -> int:
        return self.width * self.height * 3 // 2

    @property
    def expected_bytes(self) -> int:
        return self.frame_bytes * self.frames

    def check_geometry(self) -> None:
        try:
            size = self.path.stat().st_size
        except OSError as exc:
            raise JobError(f"{self.sequence_id}: cannot read {self.path}: {exc}") from exc
        if size != self.expected_bytes:
            raise JobError(f"{self.sequence_id}: {self.path} has {size} bytes, expected "
                           f"{self.expected_bytes} ({self.frames} frames of {self.width}x{self.height})")


@dataclass(frozen=True)
class EncodeJob:
    sequence: RawSequence
    variant_id: str
    qp: int
    encoder: EncoderKind = EncoderKind.X264_MEDIUM
    preprocessor: str | None = None


@dataclass(frozen=True)
class ScoredEncode:
    job: EncodeJob
    stream_path: Path
    stream_bytes: int
    bitrate_kbps: float
    stream_digest: str
    cache_key: str
    scores: Mapping[MetricKind, float] = field(default_factory=dict)

    def point(self) -> RDPoint:
        return RDPoint(self.job.qp, self.bitrate_kbps, dict(self.scores))


def bitrate_kbps(stream_bytes: int, fps: Fraction | float, frames: int) -> float:
    return 8.0 * stream_bytes * float(fps) / (frames * 1000.0)


def encode_command(job: EncodeJob, input_path: str | Path, output_path: str | Path,
                   ffmpeg: str = "ffmpeg") -> list[str]:
    """The constant-QP ffmpeg command line for one job.

    Baseline-panel variants add their filter or tune flag at default
    parameters; everything else is the canonical libx264 medium command.
    """
    s = job.sequence
    cmd = [ffmpeg, "-y", "-f", "rawvideo", "-pix_fmt", "yuv420p",
           "-s", f"{s.width}x{s.height}", "-r", s.fps, "-i", str(input_path)]
    kind = EncoderKind(job.encoder)
    if kind is EncoderKind.X264_HQDN3D:
        cmd += ["-vf", "hqdn3d"]
    elif kind is EncoderKind.X264_UNSHARP:
        cmd += ["-vf", "unsharp"]
    codec = "libx265" if kind is EncoderKind.X265_MEDIUM else "libx264"
    cmd += ["-c:v", codec, "-qp", str(int(job.qp)), "-preset", "medium"]
    if kind is EncoderKind.X264_TUNE_PSNR:
        cmd += ["-tune", "psnr"]
    elif kind is EncoderKind.X264_TUNE_SSIM:
        cmd += ["-tune", "ssim"]
    elif kind is EncoderKind.X265_MEDIUM:
        # libx265 ignores -threads for its own pools
        cmd += ["-x265-params", _X265_SINGLE_THREAD]
    cmd += ["-pix_fmt", "yuv420p", "-an", "-threads", "1", "-v", "error", str(output_path)]
    return cmd


def cache_key(input_digest: str, command: Sequence[str], tool_version: str) -> str:
    payload = json.dumps({"input": input_digest, "command": list(command), "tool": tool_version},
                         sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def md5_file(path: str | Path) -> str:
    h = hashlib.md5()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------- tools

@dataclass(frozen=True)
class Tools:
    ffmpeg: str
    version: str

    @classmethod
    def discover(cls, ffmpeg: str | None = None) -> "Tools":
        """Resolve ffmpeg: explicit path, then $RDBENCH_FFMPEG, PATH, imageio-ffmpeg."""
        candidates = [ffmpeg, os.environ.get(FFMPEG_ENV), shutil.which("ffmpeg")]
        try:
            import imageio_ffmpeg
            candidates.append(imageio_ffmpeg.get_ffmpeg_exe())
        except Exception:  # noqa: BLE001 - optional dependency, any failure means "absent"
            pass
        for i, c in enumerate(candidates):
            if not c:
                continue
            if i < 2 and not (Path(c).is_file() or shutil.which(c)):
                # an explicit override that does not exist is a config error, not a fallback
                raise ConfigError(f"configured ffmpeg {c!r} not found")
            exe = shutil.which(c) or c
            return cls(exe, _tool_version(exe))
        raise ToolError("ffmpeg not found: set tools.ffmpeg in the config, "
                        f"${FFMPEG_ENV}, put it on PATH, or install imageio-ffmpeg")


def _tool_version(exe: str) -> str:
    proc = _run([exe, "-hide_banner", "-version"], "ffmpeg -version")
    return proc.stdout.splitlines()[0].strip() if proc.stdout else "unknown"


def _run(cmd: Sequence[str], what: str, cwd: str | Path | None = None) -> subprocess.CompletedProcess:
    try:
        proc = subprocess.run(list(cmd), capture_output=True, text=True, cwd=cwd)
    except OSError as exc:
        raise ToolError(f"{what}: cannot execute {cmd[0]!r}: {exc}", list(cmd)) from exc
    if proc.returncode != 0:
        raise ToolError(f"{what} failed", list(cmd), proc.returncode, proc.stderr + proc.stdout)
    return proc


def available_tools(ffmpeg: str | None = None) -> Tools | None:
    try:
        return Tools.discover(ffmpeg)
    except (ToolError, ConfigError):
        return None


# ---------------------------------------------------------------- manifest

MANIFEST_COLUMNS = ("sequence_id", "path", "width", "height", "fps", "frames")


def read_manifest(path: str | Path) -> list[RawSequence]:
    """Corpus manifest: CSV with sequence_id,path,width,height,fps,frames[,pix_fmt].

    Relative paths resolve against the manifest's directory.
    """
    path = Path(path)
    out = []
    for line, row in read_rows(path, MANIFEST_COLUMNS, optional=("pix_fmt",)):
        p = Path(row["path"])
        if not p.is_absolute():
            p = path.parent / p
        try:
            out.append(RawSequence(row["sequence_id"], p,
                                   parse_int(row["width"], "width", path, line),
                                   parse_int(row["height"], "height", path, line),
                                   row["fps"],
                                   parse_int(row["frames"], "frames", path, line),
                                   row.get("pix_fmt") or "yuv420p"))
        except InvalidInputError as exc:
            raise ParseError(str(exc), str(path), line) from None
    ids = [s.sequence_id for s in out]
    if len(set(ids)) != len(ids):
        raise InvalidInputError(f"{path}: duplicate sequence ids")
    return out


# ---------------------------------------------------------------- harness

@dataclass(frozen=True)
class VariantSpec:
    """One comparison leg: an encoder choice and/or a preprocessor command."""

    name: str
    encoder: EncoderKind = EncoderKind.X264_MEDIUM
    preprocessor: str | None = None

    @classmethod
    def parse(cls, text: str) -> "VariantSpec":
        """``NAME=encoder:KIND``, ``NAME=preproc:COMMAND`` or a bare encoder kind."""
        name, sep, rest = text.partition("=")
        if not sep:
            kind = EncoderKind.parse(text)
            return cls(kind.value, kind)
        name = name.strip()
        kind_s, sep, value = rest.partition(":")
        if not name or not sep:
            raise InvalidInputError(f"bad variant spec {text!r}")
        if kind_s == "encoder":
            return cls(name, EncoderKind.parse(value))
        if kind_s in ("preproc", "cmd"):
            if not value.strip():
                raise InvalidInputError(f"variant {name!r}: empty preprocessor command")
            return cls(name, EncoderKind.X264_MEDIUM, value.strip())
        raise InvalidInputError(f"bad variant spec {text!r}")


@dataclass
class JobFailure:
    sequence_id: str
    variant_id: str
    qp: int | None
    error: str


class Harness:
    """Runs encode/score jobs with a bounded worker pool and a content-addressed cache.

    The cache directory holds ``<key>.mp4`` streams with ``<key>.json``
    metadata, ``<key>.scores.json`` metric results and ``<key>.pre.yuv``
    preprocessor outputs. Without ``cache_dir`` a private temporary directory
    is used for the harness lifetime.
    """

    def __init__(self, tools: Tools | None = None, cache_dir: str | Path | None = None,
                 workers: int = 1, keep_intermediates: bool = False,
                 metrics: Iterable[MetricKind] = tuple(MetricKind)):
        self.tools = tools or Tools.discover()
        if cache_dir is None:
            self._tmp = tempfile.TemporaryDirectory(prefix="rdbench-")
            cache_dir = self._tmp.name
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.workers = max(1, int(workers))
        self.keep_intermediates = keep_intermediates
        self.metrics = tuple(MetricKind(m) for m in metrics)
        self._lock = threading.Lock()
        self._key_locks: dict[str, threading.Lock] = {}
        self._digests: dict[tuple[str, int, int], str] = {}

    # -- bookkeeping

    def metadata(self) -> dict:
        return {
            "ffmpeg": self.tools.ffmpeg,
            "tool_version": self.tools.version,
            "vmaf_models": {m.value: v for m, v in VMAF_MODELS.items()},
            "metrics": [m.value for m in self.metrics],
            "clip_pooling": "arithmetic mean over frames",
            "encoder_threads": 1,
            "workers": self.workers,
        }

    def _key_lock(self, key: str) -> threading.Lock:
        with self._lock:
            return self._key_locks.setdefault(key, threading.Lock())

    def file_digest(self, path: str | Path) -> str:
        st = os.stat(path)
        k = (str(Path(path).resolve()), st.st_size, st.st_mtime_ns)
        with self._lock:
            if k in self._digests:
                return self._digests[k]
        d = sha256_file(path)
        with self._lock:
            self._digests[k] = d
        return d

    def map(self, fn: Callable[[T], R], items: Sequence[T]) -> list[R]:
        """Apply ``fn`` over ``items`` on the worker pool; first exception propagates."""
        if self.workers == 1 or len(items) <= 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(fn, items))

    def try_map(self, fn: Callable[[T], R], items: Sequence[T]) -> list[R | Exception]:
        def guarded(x):
            try:
                return fn(x)
            except Exception as exc:  # noqa: BLE001 - collected and reported per job
                return exc
        return self.map(guarded, items)

    # -- preprocessing

    def preprocess(self, sequence: RawSequence, command: str) -> RawSequence:
        """Run ``COMMAND <in.yuv> <out.yuv> <width> <height>`` once per (input, command)."""
        sequence.check_geometry()
        key = cache_key(self.file_digest(sequence.path), ["preproc", command], "")
        out = self.cache_dir / f"{key}.pre.yuv"
        with self._key_lock(key):
            if not out.exists():
                tmp = out.with_name(f".{out.name}.{os.getpid()}.{threading.get_ident()}.tmp.yuv")
                argv = shlex.split(command) + [str(sequence.path), str(tmp),
                                               str(sequence.width), str(sequence.height)]
                try:
                    _run(argv, f"preprocessor for {sequence.sequence_id}")
                    if not tmp.exists():
                        raise JobError(f"{sequence.sequence_id}: preprocessor wrote no output")
                    size = tmp.stat().st_size
                    if size != sequence.expected_bytes:
                        raise JobError(
                            f"{sequence.sequence_id}: preprocessor output is {size} bytes, expected "
                            f"{sequence.expected_bytes}; a pre-encoder must keep the geometry")
                    os.replace(tmp, out)
                finally:
                    if tmp.exists():
                        tmp.unlink()
        return replace(sequence, path=out)

    # -- encode

    def _source(self, job: EncodeJob) -> RawSequence:
        if job.preprocessor:
            return self.preprocess(job.sequence, job.preprocessor)
        return job.sequence

    def job_key(self, job: EncodeJob) -> str:
        """Content hash of (encoder input digest, command line, tool version)."""
        cmd = encode_command(job, "<in>", "<out>", "ffmpeg")
        return cache_key(self.file_digest(self._source(job).path), cmd, self.tools.version)

    def encode(self, job: EncodeJob) -> ScoredEncode:
        """Encode one job (cache hit skips the encoder). Scores are left empty."""
        job.sequence.check_geometry()
        source = self._source(job)
        cmd_template = encode_command(job, "<in>", "<out>", "ffmpeg")
        key = self.job_key(job)
        stream = self.cache_dir / f"{key}.mp4"
        meta_path = self.cache_dir / f"{key}.json"
        with self._key_lock(key):
            meta = _load_json(meta_path)
            if meta is None or not stream.exists() or stream.stat().st_size != meta.get("stream_bytes"):
                tmp = stream.with_name(f".{key}.{os.getpid()}.{threading.get_ident()}.tmp.mp4")
                cmd = encode_command(job, source.path, tmp, self.tools.ffmpeg)
                try:
                    _run(cmd, f"encode {job.sequence.sequence_id}/{job.variant_id}@qp{job.qp}")
                    size = tmp.stat().st_size if tmp.exists() else 0
                    if size == 0:
                        raise JobError(f"{job.sequence.sequence_id}: encoder produced an empty stream")
                    os.replace(tmp, stream)
                finally:
                    if tmp.exists():
                        tmp.unlink()
                meta = {"stream_bytes": stream.stat().st_size, "md5": md5_file(stream),
                        "command": cmd_template, "tool_version": self.tools.version}
                atomic_write_text(meta_path, json.dumps(meta, sort_keys=True, indent=1))
        nbytes = int(meta["stream_bytes"])
        return ScoredEncode(job, stream, nbytes,
                            bitrate_kbps(nbytes, job.sequence.fps_value, job.sequence.frames),
                            meta["md5"], key)

    def encode_patch(self, patch, qp: int) -> ScoredEncode:
        """Encode a single-frame patch (rate-proxy calibration)."""
        data = patch.to_bytes()
        digest = hashlib.sha256(data).hexdigest()
        path = self.cache_dir / f"patch-{digest}_{patch.width}x{patch.height}.yuv"
        if not path.exists():
            tmp = path.with_name(f".{path.name}.{threading.get_ident()}.tmp")
            tmp.write_bytes(data)
            os.replace(tmp, path)
        seq = RawSequence(patch.patch_id or digest[:12], path, patch.width, patch.height, "25", 1)
        return self.encode(EncodeJob(seq, "calibration", qp, EncoderKind.X264_MEDIUM))

    # -- score

    def _vmaf_filter(self, log_name: str) -> str:
        models = "|".join(f"version={VMAF_MODELS[m]}\\:name={m.value}"
                          for m in (MetricKind.VMAF, MetricKind.VMAF_NEG) if m in self.metrics)
        features = "|".join(f"name={'psnr' if m is MetricKind.PSNR_Y else 'float_ms_ssim'}"
                            for m in (MetricKind.PSNR_Y, MetricKind.MS_SSIM) if m in self.metrics)
        parts = []
        if models:
            parts.append(f"model='{models}'")
        if features:
            parts.append(f"feature='{features}'")
        parts += ["log_fmt=json", f"log_path={log_name}", "n_threads=1"]
        return "[0:v][1:v]libvmaf=" + ":".join(parts)

    def score(self, reference: RawSequence, encoded: ScoredEncode) -> ScoredEncode:
        """Decode the stream and score it against ``reference`` in one libvmaf pass."""
        reference.check_geometry()
        key = cache_key(encoded.cache_key + self.file_digest(reference.path),
                        ["score", self._vmaf_filter("<log>")], self.tools.version)
        score_path = self.cache_dir / f"{key}.scores.json"
        with self._key_lock(key):
            cached = _load_json(score_path)
            if cached is None:
                cached = self._score_uncached(reference, encoded)
                atomic_write_text(score_path, json.dumps(cached, sort_keys=True, indent=1))
        scores = {m: cached[m.value] for m in self.metrics}
        return replace(encoded, scores=scores)

    def _score_uncached(self, reference: RawSequence, encoded: ScoredEncode) -> dict[str, float]:
        ff = self.tools.ffmpeg
        label = f"{reference.sequence_id}/{encoded.job.variant_id}@qp{encoded.job.qp}"
        work = Path(tempfile.mkdtemp(prefix="score-", dir=self.cache_dir))
        try:
            decoded = work / "decoded.yuv"
            _run([ff, "-v", "error", "-y", "-i", str(encoded.stream_path),
                  "-f", "rawvideo", "-pix_fmt", "yuv420p", str(decoded)], f"decode {label}")
            got = decoded.stat().st_size
            if got != reference.expected_bytes:
                raise JobError(f"{label}: decoded {got / reference.frame_bytes:g} frames, "
                               f"reference has {reference.frames}")
            geom = ["-f", "rawvideo", "-pix_fmt", "yuv420p",
                    "-s", f"{reference.width}x{reference.height}", "-r", reference.fps]
            _run([ff, "-v", "error", *geom, "-i", str(decoded), *geom, "-i", str(reference.path),
                  "-lavfi", self._vmaf_filter("vmaf.json"), "-f", "null", "-"],
                 f"libvmaf {label}", cwd=work)
            frames = json.loads((work / "vmaf.json").read_text())["frames"]
            if len(frames) != reference.frames:
                raise JobError(f"{label}: metric tool scored {len(frames)} frames, "
                               f"expected {reference.frames}")
            out = {}
            for m in self.metrics:
                name = _FEATURE_KEYS.get(m, m.value)
                try:
                    vals = [f["metrics"][name] for f in frames]
                except KeyError:
                    raise JobError(f"{label}: metric tool did not report {name} "
                                   "(MS-SSIM needs frames of at least ~176 px per side)") from None
                out[m.value] = math.fsum(vals) / len(vals)
            return out
        finally:
            if self.keep_intermediates:
                log.info("kept intermediates in %s", work)
            else:
                shutil.rmtree(work, ignore_errors=True)

    # -- legs

    def run_leg(self, sequence: RawSequence, variant: VariantSpec,
                qps: Sequence[int] = CANONICAL_QPS) -> list[ScoredEncode]:
        jobs = [EncodeJob(sequence, variant.name, qp, variant.encoder, variant.preprocessor)
                for qp in qps]
        if variant.preprocessor:
            # run the preprocessor once before fanning out
            self.preprocess(sequence, variant.preprocessor)
        return self.map(lambda j: self.score(sequence, self.encode(j)), jobs)

    def run_two_legs(self, sequence: RawSequence, preprocessor_cmd: str | None = None,
                     qps: Sequence[int] = CANONICAL_QPS, variant_id: str = "variant",
                     baseline_id: str = "baseline") -> tuple[RDCurve, RDCurve | None]:
        """Baseline leg on the original and, if given, a preprocessed leg.

        Both legs are scored against the original raw input.
        """
        base = self.run_leg(sequence, VariantSpec(baseline_id), qps)
        baseline = RDCurve.from_unsorted(sequence.sequence_id, baseline_id, [e.point() for e in base])
        if not preprocessor_cmd:
            return baseline, None
        var = self.run_leg(sequence, VariantSpec(variant_id, preprocessor=preprocessor_cmd), qps)
        return baseline, RDCurve.from_unsorted(sequence.sequence_id, variant_id, [e.point() for e in var])

    def sweep(self, sequences: Sequence[RawSequence], variants: Sequence[VariantSpec],
              qps: Sequence[int] = CANONICAL_QPS, baseline_id: str = "baseline",
              ) -> tuple[list[ScoredEncode], list[JobFailure]]:
        """All (sequence, leg, qp) jobs; failures are collected rather than raised."""
        legs = [VariantSpec(baseline_id), *variants]
        names = [v.name for v in legs]
        if len(set(names)) != len(names):
            raise InvalidInputError(f"duplicate variant names: {names}")
        failures: list[JobFailure] = []
        ready = []
        for s in sequences:
            try:
                s.check_geometry()
            except JobError as exc:
                failures.append(JobFailure(s.sequence_id, "*", None, str(exc)))
                continue
            ready.append(s)
        for s in ready:
            for v in legs:
                if v.preprocessor:
                    try:
                        self.preprocess(s, v.preprocessor)
                    except Exception as exc:  # noqa: BLE001
                        failures.append(JobFailure(s.sequence_id, v.name, None, str(exc)))
        failed_legs = {(f.sequence_id, f.variant_id) for f in failures}
        jobs = [EncodeJob(s, v.name, qp, v.encoder, v.preprocessor)
                for s in ready for v in legs for qp in qps
                if (s.sequence_id, v.name) not in failed_legs]
        results = self.try_map(lambda j: self.score(j.sequence, self.encode(j)), jobs)
        done = []
        for job, res in zip(jobs, results):
            if isinstance(res, Exception):
                failures.append(JobFailure(job.sequence.sequence_id, job.variant_id, job.qp, str(res)))
            else:
                done.append(res)
        return done, failures


def _load_json(path: Path) -> dict | None:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError):
        return None
