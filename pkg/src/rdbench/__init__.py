"""Rate-distortion benchmarking: BD metrics, encoder harness, rate proxy, corpus analytics."""

__version__ = "0.1.0"

from .bd import BDResult, bd_quality, bd_rate  # noqa: E402
from .core import CANONICAL_QPS, MetricKind, RDCurve, RDPoint  # noqa: E402

__all__ = ["BDResult", "CANONICAL_QPS", "MetricKind", "RDCurve", "RDPoint", "bd_quality", "bd_rate",
           "__version__"]
