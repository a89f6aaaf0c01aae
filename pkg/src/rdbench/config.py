"""Run configuration: a JSON file plus environment overrides.

Recognised keys (all optional)::

    {
      "tools": {"ffmpeg": "/usr/bin/ffmpeg"},
      "qp_grid": [22, 27, 32, 37],
      "baseline_variant": "baseline",
      "workers": 4,
      "cache_dir": ".rdbench-cache",
      "keep_intermediates": false,
      "slices": [{"name": "all", "exclude": []}, ...],
      "thresholds": {"regression_pp": 10, "smooth_fraction": 0.5,
                     "saturation_quality": 98, "disagreement_pp": 20},
      "gaming": {"threshold_pp": 5, "positive_share": 0.8},
      "qp_to_quality": [[18, 75], [40, 10]],
      "column_aliases": {"seq": "sequence", "kbps": "bitrate_kbps"}
    }

Environment: RDBENCH_FFMPEG, RDBENCH_WORKERS and RDBENCH_CACHE_DIR override
the file.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping

from .analytics import MCL_JCV_SLICES, SliceSpec, TaxonomyThresholds
from .core import CANONICAL_QPS
from .errors import ConfigError, InvalidInputError, InvalidSliceError
from .rate_proxy import QualityMapping

_KNOWN = {"tools", "qp_grid", "baseline_variant", "workers", "cache_dir", "keep_intermediates",
          "slices", "thresholds", "gaming", "qp_to_quality", "column_aliases"}


@dataclass(frozen=True)
class Config:
    ffmpeg: str | None = None
    qp_grid: tuple[int, ...] = CANONICAL_QPS
    baseline_variant: str = "baseline"
    workers: int = 1
    cache_dir: str | None = None
    keep_intermediates: bool = False
    slices: tuple[SliceSpec, ...] = (SliceSpec("all"),)
    thresholds: TaxonomyThresholds = field(default_factory=TaxonomyThresholds)
    gaming_threshold_pp: float = 5.0
    gaming_positive_share: float = 0.8
    quality_mapping: QualityMapping = field(default_factory=QualityMapping)
    column_aliases: Mapping[str, str] = field(default_factory=dict)


def _thresholds(data) -> TaxonomyThresholds:
    if not isinstance(data, Mapping):
        raise ConfigError("thresholds must be an object")
    names = {f.name for f in fields(TaxonomyThresholds)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown threshold(s): {', '.join(sorted(unknown))}")
    try:
        return TaxonomyThresholds(**{k: float(v) for k, v in data.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad thresholds: {exc}") from exc


def from_mapping(data: Mapping, env: Mapping[str, str] | None = None) -> Config:
    env = os.environ if env is None else env
    if not isinstance(data, Mapping):
        raise ConfigError("config root must be a JSON object")
    unknown = set(data) - _KNOWN
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    kw = {}
    try:
        tools = data.get("tools", {})
        if tools.get("ffmpeg"):
            kw["ffmpeg"] = str(tools["ffmpeg"])
        if "qp_grid" in data:
            grid = tuple(int(q) for q in data["qp_grid"])
            if len(grid) < 2 or list(grid) != sorted(set(grid)):
                raise ConfigError("qp_grid must hold at least two strictly increasing QPs")
            kw["qp_grid"] = grid
        if "baseline_variant" in data:
            kw["baseline_variant"] = str(data["baseline_variant"])
        if "workers" in data:
            kw["workers"] = int(data["workers"])
        if data.get("cache_dir"):
            kw["cache_dir"] = str(data["cache_dir"])
        if "keep_intermediates" in data:
            kw["keep_intermediates"] = bool(data["keep_intermediates"])
        if "slices" in data:
            kw["slices"] = tuple(SliceSpec.from_mapping(s) for s in data["slices"])
        if "thresholds" in data:
            kw["thresholds"] = _thresholds(data["thresholds"])
        g = data.get("gaming", {})
        if "threshold_pp" in g:
            kw["gaming_threshold_pp"] = float(g["threshold_pp"])
        if "positive_share" in g:
            kw["gaming_positive_share"] = float(g["positive_share"])
        if "qp_to_quality" in data:
            kw["quality_mapping"] = QualityMapping(tuple((float(q), float(v)) for q, v in data["qp_to_quality"]))
        if "column_aliases" in data:
            kw["column_aliases"] = {str(k).lower(): str(v) for k, v in data["column_aliases"].items()}
    except ConfigError:
        raise
    except (InvalidInputError, InvalidSliceError, TypeError, ValueError, AttributeError) as exc:
        raise ConfigError(f"bad config value: {exc}") from exc

    if env.get("RDBENCH_FFMPEG"):
        kw["ffmpeg"] = env["RDBENCH_FFMPEG"]
    if env.get("RDBENCH_WORKERS"):
        try:
            kw["workers"] = int(env["RDBENCH_WORKERS"])
        except ValueError:
            raise ConfigError(f"RDBENCH_WORKERS={env['RDBENCH_WORKERS']!r} is not an integer") from None
    if env.get("RDBENCH_CACHE_DIR"):
        kw["cache_dir"] = env["RDBENCH_CACHE_DIR"]
    cfg = Config(**kw)
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    return cfg


def load_config(path: str | os.PathLike | None = None, env: Mapping[str, str] | None = None) -> Config:
    if path is None:
        return from_mapping({}, env)
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    return from_mapping(data, env)
