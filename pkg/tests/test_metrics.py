import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bitforge.bitcore import PlanarImage, gain_expand, bit_replicate_expand, quantize, zero_pad_expand
from bitforge.metrics import (
    MetricReport,
    gaussian_window,
    psnr,
    read_report,
    ssim,
    write_report,
)
from conftest import constant_image, random_image


def ssim_oracle(x, y, peak):
    """Direct per-window SSIM with explicit loops; independent of the separable path."""
    g = gaussian_window()
    w = np.outer(g, g)
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    vals = []
    for c in range(x.shape[0]):
        for i in range(x.shape[1] - 10):
            for j in range(x.shape[2] - 10):
                a = x[c, i : i + 11, j : j + 11]
                b = y[c, i : i + 11, j : j + 11]
                ma, mb = (w * a).sum(), (w * b).sum()
                va = (w * (a - ma) ** 2).sum()
                vb = (w * (b - mb) ** 2).sum()
                cov = (w * (a - ma) * (b - mb)).sum()
                vals.append(
                    (2 * ma * mb + c1) * (2 * cov + c2) / ((ma**2 + mb**2 + c1) * (va + vb + c2))
                )
    return float(np.mean(vals))


def test_psnr_identical_is_infinite(rng):
    img = random_image(rng, 8, 12, 12)
    assert psnr(img, img) == math.inf


def test_psnr_constant_offset():
    a = constant_image(100, 8)
    b = constant_image(116, 8)
    assert psnr(a, b) == pytest.approx(10 * math.log10(255**2 / 256), abs=1e-12)
    assert psnr(a, b) == pytest.approx(24.0484, abs=1e-4)


def test_psnr_zero_pad_residual_oracle(rng):
    # residual e uniform on 0..15 -> mean e^2 = 77.5
    gt = PlanarImage(rng.integers(0, 256, size=(3, 256, 256)), 8)
    value = psnr(zero_pad_expand(quantize(gt, 4), 8), gt)
    assert value == pytest.approx(10 * math.log10(255**2 / 77.5), abs=0.10)


def test_psnr_errors():
    with pytest.raises(ValueError):
        psnr(constant_image(0, 8), constant_image(0, 4))
    with pytest.raises(ValueError):
        psnr(constant_image(0, 8), constant_image(0, 8, 12, 12))


def test_psnr_monotone_in_error():
    base = constant_image(100, 8)
    values = [psnr(base, constant_image(100 + d, 8)) for d in range(1, 20)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_ssim_identical(rng):
    img = random_image(rng, 8, 20, 24)
    assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)


def test_ssim_constant_means_fixture():
    a = constant_image(128, 8)
    b = constant_image(64, 8)
    c1 = (0.01 * 255) ** 2
    assert ssim(a, b) == pytest.approx((2 * 128 * 64 + c1) / (128**2 + 64**2 + c1), abs=1e-9)
    assert ssim(a, b) == pytest.approx(0.8001, abs=1e-3)


def test_ssim_matches_window_oracle(rng):
    a = random_image(rng, 8, 14, 15)
    b = PlanarImage(np.clip(a.samples.astype(int) + rng.integers(-20, 21, a.samples.shape), 0, 255), 8)
    assert ssim(a, b) == pytest.approx(ssim_oracle(a.samples.astype(float), b.samples.astype(float), 255), abs=1e-9)


def test_ssim_too_small():
    with pytest.raises(ValueError):
        ssim(constant_image(0, 8, 10, 30), constant_image(0, 8, 10, 30))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), depth=st.sampled_from([4, 8, 16]))
def test_metric_symmetry_and_range(seed, depth):
    rng = np.random.default_rng(seed)
    a = random_image(rng, depth, 12, 13)
    b = random_image(rng, depth, 12, 13)
    assert psnr(a, b) == psnr(b, a)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)
    assert -1.0 <= ssim(a, b) <= 1.0


def test_expander_ordering_on_uniform_noise():
    rng = np.random.default_rng(0)
    gt = PlanarImage(rng.integers(0, 256, size=(3, 128, 128)), 8)
    low = quantize(gt, 4)
    p_gain = psnr(gain_expand(low, 8), gt)
    p_rep = psnr(bit_replicate_expand(low, 8), gt)
    p_zero = psnr(zero_pad_expand(low, 8), gt)
    assert p_gain >= p_rep >= p_zero


def test_report_validation():
    with pytest.raises(ValueError):
        MetricReport(psnr=30.0, ssim=1.5, pixel_count=1)
    MetricReport(psnr=math.inf, ssim=1.0, pixel_count=1)


def test_report_csv_round_trip(tmp_path):
    rows = [
        {"image": 0, "method": "gain", "b_L": 4, "b_H": 8, "psnr_db": 31.25, "ssim": 0.9},
        {"image": "mean", "method": "gain", "b_L": 4, "b_H": 8, "psnr_db": math.inf, "ssim": 1.0},
    ]
    write_report(tmp_path / "m.csv", rows)
    back = read_report(tmp_path / "m.csv")
    assert back[0]["psnr_db"] == 31.25 and back[1]["psnr_db"] == math.inf
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "image,method,b_L,b_H,psnr_db,ssim"
