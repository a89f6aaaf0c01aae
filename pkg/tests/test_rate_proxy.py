import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rdbench.core import spearman
from rdbench.errors import InvalidInputError, JobError
from rdbench.rate_proxy import (
    CHROMA_BASE, DEFAULT_MAPPING, LUMA_BASE, QualityMapping, RateMeasurement, YuvPatch,
    bits_per_pixel, calibrate, dct8x8, extract_patches, idct8x8, patch_geometry, quant_table,
    rate_score, read_measurements, read_patch, round_half_away, scale_table, write_fit_summary,
    write_measurements, write_patch,
)


def naive_dct(block):
    out = np.zeros((8, 8))
    for u in range(8):
        for v in range(8):
            cu = math.sqrt(1 / 8) if u == 0 else math.sqrt(2 / 8)
            cv = math.sqrt(1 / 8) if v == 0 else math.sqrt(2 / 8)
            s = 0.0
            for x in range(8):
                for y in range(8):
                    s += (block[x][y] * math.cos((2 * x + 1) * u * math.pi / 16)
                          * math.cos((2 * y + 1) * v * math.pi / 16))
            out[u, v] = cu * cv * s
    return out


@pytest.mark.parametrize("seed", range(10))
def test_dct_matches_naive_oracle(seed):
    b = np.random.default_rng(seed).uniform(-128, 127, (8, 8))
    assert np.max(np.abs(dct8x8(b) - naive_dct(b.tolist()))) < 1e-10


@pytest.mark.parametrize("seed", range(10))
def test_dct_round_trip(seed):
    b = np.random.default_rng(seed).uniform(-128, 127, (3, 8, 8))
    assert np.max(np.abs(idct8x8(dct8x8(b)) - b)) < 1e-9


def test_dct_zero_and_constant():
    assert not np.any(dct8x8(np.zeros((8, 8))))
    c = dct8x8(np.full((8, 8), 5.0))
    assert c[0, 0] == pytest.approx(40.0, abs=1e-12)
    c[0, 0] = 0
    assert np.max(np.abs(c)) < 1e-12


def test_quality_mapping_defaults():
    assert [DEFAULT_MAPPING(q) for q in (18, 22, 27, 32, 37, 40)] == [75, 63, 48, 34, 19, 10]
    with pytest.raises(InvalidInputError):
        QualityMapping(((18, 10), (40, 75)))


def test_quant_table_identity_and_clamp():
    assert np.array_equal(scale_table(LUMA_BASE, 50), LUMA_BASE)
    assert np.array_equal(scale_table(CHROMA_BASE, 50), CHROMA_BASE)
    assert np.all(scale_table(LUMA_BASE, 100) == 1)
    assert np.all(scale_table(LUMA_BASE, 1) == 255)


def test_quant_table_qp22_entrywise_oracle():
    # qp 22 -> quality 63 -> scale 200 - 126 = 74
    for base, chroma in ((LUMA_BASE, False), (CHROMA_BASE, True)):
        want = [[min(255, max(1, (int(b) * 74 + 50) // 100)) for b in row] for row in base.tolist()]
        assert quant_table(22, chroma).tolist() == want


def test_quant_table_range():
    for qp in (17, 41):
        with pytest.raises(InvalidInputError):
            quant_table(qp)


def test_round_half_away():
    assert round_half_away(np.array([-2.5, -1.5, -0.5, 0.5, 1.5, 2.4])).tolist() == \
        [-3, -2, -1, 1, 2, 2]


def test_flat_128_scores_zero():
    p = YuvPatch(np.full((256, 256), 128, np.uint8)).with_neutral_chroma()
    assert all(rate_score(p, qp) == 0.0 for qp in range(18, 41))


def _random_patch(rng, size=32):
    kind = rng.integers(3)
    if kind == 0:
        y = rng.integers(0, 256, (size, size))
    elif kind == 1:
        y = np.clip(rng.normal(128, rng.uniform(1, 60), (size, size)), 0, 255)
    else:
        g = np.linspace(0, rng.uniform(10, 255), size)
        y = np.clip(np.add.outer(g, g[::-1]) / 2 + rng.normal(0, 3, (size, size)), 0, 255)
    c = rng.integers(0, 256, (2, size // 2, size // 2))
    return YuvPatch(y.astype(np.uint8), c[0].astype(np.uint8), c[1].astype(np.uint8))


def test_score_monotone_in_qp_over_random_suite():
    rng = np.random.default_rng(2024)
    violations = 0
    for _ in range(100):
        p = _random_patch(rng)
        s = [rate_score(p, qp) for qp in range(18, 41)]
        violations += sum(b > a for a, b in zip(s, s[1:]))
    assert violations == 0


def test_checkerboard_tile_composed_oracle():
    y = np.array([[200 if (i + j) % 2 else 40 for j in range(8)] for i in range(8)], np.uint8)
    qp = 27
    coeffs = naive_dct((y.astype(float) - 128).tolist())
    q = 5000 // 48  # qp 27 -> quality 48
    table = [[min(255, max(1, (int(b) * q + 50) // 100)) for b in row] for row in LUMA_BASE.tolist()]
    total = 0.0
    for u in range(8):
        for v in range(8):
            r = coeffs[u, v] / table[u][v]
            k = math.copysign(math.floor(abs(r) + 0.5), r)
            total += math.log(1 + abs(k))
    assert rate_score(YuvPatch(y), qp) == pytest.approx(total / 64, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_block_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    p = _random_patch(rng, 64)

    def permute(plane):
        h, w = plane.shape
        blocks = plane.reshape(h // 8, 8, w // 8, 8).swapaxes(1, 2).reshape(-1, 8, 8)
        blocks = blocks[rng.permutation(len(blocks))]
        return blocks.reshape(h // 8, w // 8, 8, 8).swapaxes(1, 2).reshape(h, w)

    q = YuvPatch(permute(p.y), permute(p.cb), permute(p.cr))
    for qp in (22, 37):
        assert rate_score(q, qp) == rate_score(p, qp)


def test_luma_share_of_coefficients():
    # chroma blocks contribute 1/3 of the coefficients at 4:2:0
    y = np.full((16, 16), 128, np.uint8)
    cb = np.random.default_rng(0).integers(0, 256, (8, 8)).astype(np.uint8)
    p = YuvPatch(y, cb, np.full((8, 8), 128, np.uint8))
    coeffs = dct8x8(cb.astype(float) - 128) / quant_table(22, chroma=True)
    direct = float(np.sum(np.log1p(np.abs(round_half_away(coeffs))))) / 384
    assert rate_score(p, 22) == pytest.approx(direct, abs=1e-12)


def test_untileable_patch_rejected():
    with pytest.raises(InvalidInputError):
        rate_score(YuvPatch(np.zeros((12, 16), np.uint8)), 22)


def test_patch_validation():
    with pytest.raises(InvalidInputError):
        YuvPatch(np.zeros((16, 16), np.uint8), np.zeros((8, 8), np.uint8))
    with pytest.raises(InvalidInputError):
        YuvPatch(np.zeros((16, 16), np.uint8), np.zeros((4, 8), np.uint8), np.zeros((8, 8), np.uint8))


def test_bits_per_pixel():
    assert bits_per_pixel(1024, 256, 256) == 0.125
    with pytest.raises(JobError):
        bits_per_pixel(0, 256, 256)


def test_patch_file_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    p = YuvPatch(*(rng.integers(0, 256, s).astype(np.uint8) for s in ((32, 48), (16, 24), (16, 24))),
                 patch_id="p7")
    path = write_patch(p, tmp_path)
    assert path.name == "p7_48x32.yuv"
    q = read_patch(path)
    assert (q.width, q.height) == (48, 32)
    assert q.to_bytes() == p.to_bytes()


def test_patch_geometry_sidecar(tmp_path):
    f = tmp_path / "noname.yuv"
    f.write_bytes(b"")
    with pytest.raises(InvalidInputError):
        patch_geometry(f)
    (tmp_path / "noname.yuv.json").write_text('{"width": 64, "height": 32}')
    assert patch_geometry(f) == (64, 32)


def test_extractor_deterministic(tmp_path):
    rng = np.random.default_rng(3)
    w, h = 96, 64
    src = tmp_path / "src_96x64.yuv"
    src.write_bytes(rng.integers(0, 256, w * h * 3 // 2 * 3).astype(np.uint8).tobytes())
    a = extract_patches(src, w, h, 5, size=32, seed=11)
    b = extract_patches(src, w, h, 5, size=32, seed=11)
    assert [p.to_bytes() for p in a] == [p.to_bytes() for p in b]
    assert all((p.width, p.height) == (32, 32) for p in a)
    with pytest.raises(InvalidInputError):
        extract_patches(src, w, h, 1, size=128)


# ---------------------------------------------------------------- calibration

def _exact_line(n=20, qps=(22, 27, 32, 37), intercept=1.718):
    rng = np.random.default_rng(5)
    out = []
    for i in range(n):
        base = rng.uniform(0.2, 1.2)
        for k, qp in enumerate(qps):
            x = base * (1 - 0.2 * k)
            out.append(RateMeasurement(f"p{i}", qp, 7.677 * x + intercept, x))
    return out


def test_calibrate_exact_line():
    fit = calibrate(_exact_line())
    assert fit.slope == pytest.approx(7.677, abs=1e-9)
    assert fit.intercept == pytest.approx(1.718, abs=1e-9)
    assert fit.report.mae == pytest.approx(0.0, abs=1e-9)
    assert fit.report.spearman_rho == pytest.approx(1.0) and fit.report.pearson_r == pytest.approx(1.0)
    assert fit.monotone_fraction == 1.0 and fit.concordant_fraction == 1.0


def test_calibrate_exact_published_line():
    # proxy values kept above 0.282/7.677 so every bpp stays positive
    ms = []
    for i in range(10):
        for k, qp in enumerate((22, 27, 32, 37)):
            x = 0.5 + 0.1 * i - 0.08 * k
            ms.append(RateMeasurement(f"p{i}", qp, 7.677 * x - 0.282, x))
    fit = calibrate(ms)
    assert fit.slope == pytest.approx(7.677, abs=1e-9)
    assert fit.intercept == pytest.approx(-0.282, abs=1e-9)
    assert fit.report.mae < 1e-9


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_calibration_rho_invariant_to_log1p(seed):
    rng = np.random.default_rng(seed)
    ms = [RateMeasurement(f"p{i}", qp, float(rng.uniform(0.01, 3)), float(rng.uniform(0, 5)))
          for i in range(6) for qp in (22, 27, 32, 37)]
    re = [RateMeasurement(m.patch_id, m.qp, m.real_bpp, math.log1p(m.proxy_raw)) for m in ms]
    a, b = calibrate(ms), calibrate(re)
    assert a.report.spearman_rho == pytest.approx(b.report.spearman_rho, abs=1e-12)
    assert a.per_qp_rho == pytest.approx(b.per_qp_rho, abs=1e-12)
    assert a.monotone_fraction == b.monotone_fraction


def test_calibration_rank_perturbation_matches_oracle():
    ms = _exact_line(8)
    rng = np.random.default_rng(9)
    noisy = [RateMeasurement(m.patch_id, m.qp, m.real_bpp * float(rng.uniform(0.7, 1.3)), m.proxy_raw)
             for m in ms]
    fit = calibrate(noisy)
    assert fit.report.spearman_rho == pytest.approx(
        spearman([m.proxy_raw for m in noisy], [m.real_bpp for m in noisy]), abs=1e-12)
    assert fit.report.spearman_rho < 1.0


def test_calibration_excludes_single_qp_patches():
    ms = _exact_line(4) + [RateMeasurement("lonely", 22, 1.0, 0.3)]
    fit = calibrate(ms)
    assert fit.excluded_patches == ("lonely",)
    assert fit.n_patches == 5 and fit.monotone_fraction == 1.0
    assert any("excluded" in n for n in fit.notes)


def test_calibration_non_monotone_patch_counted():
    ms = _exact_line(3)
    ms[0] = RateMeasurement(ms[0].patch_id, ms[0].qp, ms[0].real_bpp, 0.0)
    fit = calibrate(ms)
    assert fit.monotone_fraction == pytest.approx(2 / 3)


def test_calibration_needs_two_patches():
    with pytest.raises(InvalidInputError):
        calibrate([RateMeasurement("a", 22, 1.0, 1.0), RateMeasurement("a", 27, 0.5, 0.5)])


def test_measurement_validation():
    with pytest.raises(InvalidInputError):
        RateMeasurement("a", 22, 0.0, 1.0)
    with pytest.raises(InvalidInputError):
        RateMeasurement("a", 22, 1.0, -0.1)


def test_measurement_csv_round_trip(tmp_path):
    ms = _exact_line(3)
    write_measurements(tmp_path / "m.csv", ms)
    back = read_measurements(tmp_path / "m.csv")
    assert [(m.patch_id, m.qp) for m in back] == [(m.patch_id, m.qp) for m in ms]
    assert [m.proxy_raw for m in back] == pytest.approx([m.proxy_raw for m in ms], abs=1e-9)
    write_fit_summary(tmp_path / "fit.csv", calibrate(ms))
    header = (tmp_path / "fit.csv").read_text().splitlines()[0].split(",")
    assert header[:6] == ["slope", "intercept", "spearman", "pearson", "mae", "n"]
    assert "per_qp_rho_22" in header and "monotone_fraction" in header
