"""PSNR and SSIM in integer sample units at the comparison depth."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from bitforge.bitcore import PlanarImage

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
REPORT_FIELDS = ("image", "method", "b_L", "b_H", "psnr_db", "ssim")


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float
    pixel_count: int

    def __post_init__(self):
        if not -1.0 <= self.ssim <= 1.0:
            raise ValueError(f"ssim {self.ssim} outside [-1, 1]")
        if not (self.psnr >= 0.0 or math.isinf(self.psnr)):
            raise ValueError(f"psnr {self.psnr} is negative")


def _check_pair(a: PlanarImage, b: PlanarImage) -> None:
    if a.samples.shape != b.samples.shape:
        raise ValueError(f"shape mismatch: {a.samples.shape} vs {b.samples.shape}")
    if a.bit_depth != b.bit_depth:
        raise ValueError(f"bit depth mismatch: {a.bit_depth} vs {b.bit_depth}")


def psnr(a: PlanarImage, b: PlanarImage) -> float:
    _check_pair(a, b)
    diff = a.samples.astype(np.int64) - b.samples.astype(np.int64)
    # integer sum of squares keeps the MSE exact before the final division
    mse = float(np.sum(diff * diff)) / diff.size
    if mse == 0:
        return math.inf
    peak = float(a.max_value)
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation of the last two axes with ``g``."""
    x = sliding_window_view(x, g.size, axis=-1) @ g
    return sliding_window_view(x, g.size, axis=-2) @ g


def ssim_map(a: PlanarImage, b: PlanarImage) -> np.ndarray:
    _check_pair(a, b)
    if min(a.width, a.height) < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    x = a.samples.astype(np.float64)
    y = b.samples.astype(np.float64)
    peak = float(a.max_value)
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    g = gaussian_window()
    mu_x = _filter_valid(x, g)
    mu_y = _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mu_x * mu_x
    syy = _filter_valid(y * y, g) - mu_y * mu_y
    sxy = _filter_valid(x * y, g) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
    return num / den


def ssim(a: PlanarImage, b: PlanarImage) -> float:
    """Mean SSIM over valid 11x11 Gaussian windows, per channel then averaged."""
    value = float(ssim_map(a, b).mean(axis=(1, 2)).mean())
    return min(1.0, max(-1.0, value))


def measure(a: PlanarImage, b: PlanarImage) -> MetricReport:
    return MetricReport(psnr=psnr(a, b), ssim=ssim(a, b), pixel_count=a.width * a.height)


def format_float(value: float) -> str:
    if math.isinf(value):
        return "inf"
    return repr(float(value))


def write_report(path, rows: Iterable[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            out = dict(row)
            out["psnr_db"] = format_float(out["psnr_db"])
            out["ssim"] = format_float(out["ssim"])
            writer.writerow(out)


def read_report(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        row["b_L"] = int(row["b_L"])
        row["b_H"] = int(row["b_H"])
        row["psnr_db"] = float(row["psnr_db"])
        row["ssim"] = float(row["ssim"])
    return rows
