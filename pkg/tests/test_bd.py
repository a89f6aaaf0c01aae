import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.interpolate import PchipInterpolator

from rdbench.bd import (
    adaptive_simpson,
    bd_quality,
    bd_rate,
    operating_point_saving,
    pchip_fit,
    prepare_curve,
)
from rdbench.core import MetricKind, RDCurve, RDPoint
from rdbench.errors import DegenerateCurveError, InvalidInputError, NoOverlapError

QPS = (22, 27, 32, 37)
V = MetricKind.VMAF


def curve(rates, scores, metric=V, name="v"):
    pts = [RDPoint(q, r, {metric: s}) for q, r, s in zip(QPS, rates, scores)]
    return RDCurve("seq", name, pts)


def synthetic_pair(rng):
    """Two 4-point curves with quality = a + b*log(R)."""
    # scores descend with QP; a shared core window keeps the overlap non-empty
    qb = np.array([rng.uniform(90, 97), *np.sort(rng.uniform(62, 88, 2))[::-1], rng.uniform(50, 60)])
    qv = np.sort(qb + rng.uniform(-3, 3, 4))[::-1]

    a, b = rng.uniform(-40, 10), rng.uniform(6, 14)
    av, bv = a + rng.uniform(-4, 4), b * rng.uniform(0.9, 1.1)
    return (curve(np.exp((qb - a) / b), qb, name="base"),
            curve(np.exp((qv - av) / bv), qv, name="var"))


def trapezoid_oracle_bd_rate(base, var, metric=V, n=100_001):
    def fit(c):
        q = np.array([p.scores[metric] for p in c.points])
        r = np.log10([p.bitrate_kbps for p in c.points])
        o = np.argsort(q)
        return q[o], PchipInterpolator(q[o], r[o])
    qb, fb = fit(base)
    qv, fv = fit(var)
    lo, hi = max(qb[0], qv[0]), min(qb[-1], qv[-1])
    g = np.linspace(lo, hi, n)
    d = np.trapezoid(fv(g) - fb(g), g) / (hi - lo)
    return (10 ** d - 1) * 100


def trapezoid_oracle_bd_quality(base, var, metric=V, n=100_001):
    def fit(c):
        q = np.array([p.scores[metric] for p in c.points])
        r = np.log10([p.bitrate_kbps for p in c.points])
        o = np.argsort(r)
        return r[o], PchipInterpolator(r[o], q[o])
    rb, fb = fit(base)
    rv, fv = fit(var)
    lo, hi = max(rb[0], rv[0]), min(rb[-1], rv[-1])
    g = np.linspace(lo, hi, n)
    return np.trapezoid(fv(g) - fb(g), g) / (hi - lo)


# ---------------------------------------------------------------- PCHIP

def test_pchip_reproduces_linear_data():
    x = np.array([0.0, 0.3, 1.7, 2.0, 5.5])
    p = pchip_fit(x, 2 * x - 1)
    g = np.linspace(0, 5.5, 1001)
    np.testing.assert_allclose(p(g), 2 * g - 1, atol=1e-12)


def test_pchip_exact_at_knots():
    x = [1.0, 2.0, 3.5, 4.0]
    y = [3.0, -1.0, 7.25, 0.5]
    p = pchip_fit(x, y)
    for xi, yi in zip(x, y):
        assert p(xi) == yi


def test_pchip_monotone_dense_scan():
    p = pchip_fit([1, 2, 3, 4], [1, 4, 9, 16])
    g = np.linspace(1, 4, 1000)
    v = p(g)
    assert np.all(np.diff(v) >= 0)
    assert v.min() >= 1 and v.max() <= 16


@pytest.mark.parametrize("seed", range(15))
def test_pchip_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    n = rng.integers(2, 8)
    x = np.sort(rng.uniform(0, 10, n))
    y = rng.normal(size=n)
    if seed % 3 == 0:
        y = np.sort(y)
    g = np.linspace(x[0], x[-1], 500)
    np.testing.assert_allclose(pchip_fit(x, y)(g), PchipInterpolator(x, y)(g), atol=1e-12)


@given(st.lists(st.floats(0, 100), min_size=2, max_size=8, unique=True),
       st.lists(st.floats(-50, 50), min_size=8, max_size=8))
@settings(max_examples=80, deadline=None)
def test_pchip_no_overshoot_on_monotone_data(xs, ys):
    x = np.sort(np.array(xs))
    if np.any(np.diff(x) < 1e-6):
        return
    y = np.sort(np.array(ys[: len(x)]))
    v = pchip_fit(x, y)(np.linspace(x[0], x[-1], 1000))
    assert v.min() >= y.min() - 1e-9
    assert v.max() <= y.max() + 1e-9
    assert np.all(np.diff(v) >= -1e-9)


def test_pchip_errors():
    with pytest.raises(InvalidInputError):
        pchip_fit([1.0], [1.0])
    with pytest.raises(InvalidInputError):
        pchip_fit([1.0, 1.0, 2.0], [1, 2, 3])
    with pytest.raises(InvalidInputError):
        pchip_fit([2.0, 1.0], [1, 2])


def test_adaptive_simpson():
    assert adaptive_simpson(math.sin, 0, math.pi, 1e-10) == pytest.approx(2.0, abs=1e-9)
    assert adaptive_simpson(lambda x: x ** 3, 0, 2) == pytest.approx(4.0, abs=1e-12)


# ---------------------------------------------------------------- BD-rate

BASE = curve([8000, 4000, 2000, 1000], [95, 90, 82, 70])


def test_bd_rate_self_is_zero():
    assert bd_rate(BASE, BASE, V).bd_rate_percent == pytest.approx(0.0, abs=1e-9)


def test_bd_rate_halved_bitrate():
    half = curve([4000, 2000, 1000, 500], [95, 90, 82, 70])
    res = bd_rate(BASE, half, V)
    assert res.bd_rate_percent == pytest.approx(-50.0, abs=1e-6)
    assert (res.quality_lo, res.quality_hi) == (70, 95)


@pytest.mark.parametrize("seed", range(20))
def test_bd_rate_matches_trapezoid_oracle(seed):
    base, var = synthetic_pair(np.random.default_rng(seed))
    got = bd_rate(base, var, V).bd_rate_percent
    assert got == pytest.approx(trapezoid_oracle_bd_rate(base, var), abs=0.01)


@pytest.mark.parametrize("seed", range(20))
def test_bd_rate_antisymmetry(seed):
    base, var = synthetic_pair(np.random.default_rng(seed))
    a = bd_rate(base, var, V).bd_rate_percent / 100
    b = bd_rate(var, base, V).bd_rate_percent / 100
    assert (1 + a) * (1 + b) == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("k", [0.3, 0.5, 1.7, 3.0])
def test_bd_rate_scale_law(k):
    base, var = synthetic_pair(np.random.default_rng(11))
    a = bd_rate(base, var, V).bd_rate_percent / 100
    scaled = RDCurve("seq", "var", [RDPoint(p.qp, p.bitrate_kbps * k, p.scores) for p in var.points])
    assert bd_rate(base, scaled, V).bd_rate_percent == pytest.approx((k * (1 + a) - 1) * 100, abs=1e-6)


@pytest.mark.parametrize("seed", range(20))
def test_quadrature_convergence(seed):
    base, var = synthetic_pair(np.random.default_rng(seed))
    a = bd_rate(base, var, V, tol=1e-8).bd_rate_percent
    b = bd_rate(base, var, V, tol=5e-9).bd_rate_percent
    assert abs(a - b) < 1e-4


def test_bd_rate_no_overlap():
    far = curve([8000, 4000, 2000, 1000], [40, 35, 30, 20])
    with pytest.raises(NoOverlapError):
        bd_rate(BASE, far, V)


def test_bd_rate_saturated_points_merge():
    sat = curve([9000, 5000, 2000, 1000], [100.0, 100.0, 85, 70])
    q, r = prepare_curve(sat, V)
    assert q.tolist() == [70, 85, 100.0]
    assert r[-1] == pytest.approx(math.log10(5000))
    # merged curve is usable
    assert math.isfinite(bd_rate(BASE, sat, V).bd_rate_percent)


def test_bd_rate_non_monotone_curve():
    bad = curve([8000, 4000, 2000, 1000], [80, 90, 82, 70])
    with pytest.raises(DegenerateCurveError):
        bd_rate(BASE, bad, V)
    flat = curve([8000, 4000, 2000, 1000], [90, 90, 90, 90])
    with pytest.raises(DegenerateCurveError):
        bd_rate(BASE, flat, V)


# ---------------------------------------------------------------- BD-quality

def test_bd_quality_identity_and_offset():
    assert bd_quality(BASE, BASE, V) == pytest.approx(0.0, abs=1e-12)
    up = curve([8000, 4000, 2000, 1000], [97, 92, 84, 72])
    assert bd_quality(BASE, up, V) == pytest.approx(2.0, abs=1e-9)


@pytest.mark.parametrize("seed", range(20))
def test_bd_quality_matches_trapezoid_oracle(seed):
    base, var = synthetic_pair(np.random.default_rng(seed))
    assert bd_quality(base, var, V) == pytest.approx(trapezoid_oracle_bd_quality(base, var), abs=0.01)


# ---------------------------------------------------------------- operating point

def test_operating_point_beauty():
    base = RDPoint(22, 101930.0, {V: 92.48})
    kelvin = RDPoint(27, 19612.0, {V: 91.76})
    assert operating_point_saving(base, kelvin) == pytest.approx(80.76, abs=0.005)
    assert round(operating_point_saving(base, kelvin), 1) == 80.8


def test_operating_point_trivial():
    a = RDPoint(22, 100.0)
    assert operating_point_saving(a, RDPoint(22, 100.0)) == 0.0
    assert operating_point_saving(a, RDPoint(22, 200.0)) == -100.0
