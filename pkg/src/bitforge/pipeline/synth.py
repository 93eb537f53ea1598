"""Deterministic 16-bit synthetic images with banding-prone smooth content."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from bitforge.bitcore import PlanarImage
from bitforge.imageio import read_png

FULL = 65535


@dataclass(frozen=True)
class SynthSpec:
    count: int
    size: int
    generators: tuple[str, ...] = ("linear_gradient", "radial_gradient", "smooth_noise", "shapes")
    seed: int = 0


def _grid(size):
    y, x = np.mgrid[0:size, 0:size].astype(np.float64)
    return y / (size - 1), x / (size - 1)


def _stretch(field):
    lo, hi = field.min(), field.max()
    return (field - lo) / (hi - lo) if hi > lo else np.zeros_like(field)


def _colorize(t, rng, full_range_first=False):
    """Map a [0, 1] field to three channels with per-channel endpoints."""
    out = np.empty((3,) + t.shape)
    for c in range(3):
        lo, hi = rng.uniform(0.0, 0.3), rng.uniform(0.7, 1.0)
        if full_range_first and c == 0:
            lo, hi = 0.0, 1.0
        if rng.random() < 0.5:
            lo, hi = hi, lo
        out[c] = lo + (hi - lo) * t
    return out


def linear_gradient(size, rng):
    y, x = _grid(size)
    theta = rng.uniform(0, 2 * np.pi)
    t = _stretch(np.cos(theta) * x + np.sin(theta) * y)
    return _colorize(t, rng, full_range_first=True)


def radial_gradient(size, rng):
    y, x = _grid(size)
    cy, cx = rng.uniform(0.2, 0.8, size=2)
    r = np.sqrt((y - cy) ** 2 + (x - cx) ** 2)
    t = _stretch(r) ** rng.uniform(0.7, 1.5)
    return _colorize(t, rng)


def smooth_noise(size, rng, waves=5):
    """Sum of low-frequency sinusoids with random directions and phases."""
    y, x = _grid(size)
    out = np.empty((3, size, size))
    base = []
    for _ in range(waves):
        freq = rng.uniform(0.3, 2.0)
        theta = rng.uniform(0, 2 * np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        base.append(np.sin(2 * np.pi * freq * (np.cos(theta) * x + np.sin(theta) * y) + phase))
    base = np.stack(base)
    for c in range(3):
        mix = rng.uniform(0.2, 1.0, size=waves)
        out[c] = _stretch(np.tensordot(mix, base, axes=1)) * rng.uniform(0.5, 1.0)
    return out


def shapes(size, rng, count=4):
    """Soft-filled ellipses over a gentle gradient background."""
    y, x = _grid(size)
    out = linear_gradient(size, rng) * 0.5 + 0.25
    for _ in range(count):
        cy, cx = rng.uniform(0.1, 0.9, size=2)
        ry, rx = rng.uniform(0.1, 0.35, size=2)
        d = ((y - cy) / ry) ** 2 + ((x - cx) / rx) ** 2
        inside = d < 1.0
        # fill is a radial ramp so the interior stays smooth
        fill = np.clip(1.0 - d, 0.0, 1.0)
        for c in range(3):
            level, depth = rng.uniform(0.1, 0.9), rng.uniform(-0.3, 0.3)
            out[c][inside] = np.clip(level + depth * fill[inside], 0.0, 1.0)
    return out


GENERATOR_FUNCS = {
    "linear_gradient": linear_gradient,
    "radial_gradient": radial_gradient,
    "smooth_noise": smooth_noise,
    "shapes": shapes,
}


def to_planar(field: np.ndarray) -> PlanarImage:
    return PlanarImage(np.rint(np.clip(field, 0.0, 1.0) * FULL).astype(np.uint16), 16)


def synth_dataset(spec: SynthSpec) -> list[PlanarImage]:
    if not spec.generators:
        raise ValueError("synth_dataset needs at least one generator")
    unknown = [g for g in spec.generators if g not in GENERATOR_FUNCS]
    if unknown:
        raise ValueError(f"unknown generators {unknown}")
    if spec.count < 1 or spec.size < 8:
        raise ValueError("need count >= 1 and size >= 8")
    images = []
    for i in range(spec.count):
        rng = np.random.default_rng([spec.seed, i])
        name = spec.generators[i % len(spec.generators)]
        images.append(to_planar(GENERATOR_FUNCS[name](spec.size, rng)))
    return images


def load_directory(path) -> list[PlanarImage]:
    """User-supplied ground truth: every PNG in ``path`` (sorted), promoted to 16 bits."""
    files = sorted(Path(path).glob("*.png"))
    if not files:
        raise FileNotFoundError(f"no PNG files in {path}")
    images = []
    for f in files:
        img = read_png(f)
        if img.bit_depth < 16:
            img = PlanarImage(img.samples.astype(np.uint32) << (16 - img.bit_depth), 16)
        images.append(img)
    return images


def split_holdout(images, fraction: float):
    """Last ``fraction`` of images by index are held out (at least one)."""
    n_hold = max(1, int(round(len(images) * fraction)))
    if n_hold >= len(images):
        raise ValueError("dataset too small to hold out images and still train")
    return images[:-n_hold], images[-n_hold:]


# ---------------------------------------------------------------- resampling


def _cubic(x, a=-0.5):
    x = np.abs(x)
    return np.where(
        x <= 1,
        (a + 2) * x**3 - (a + 3) * x**2 + 1,
        np.where(x < 2, a * x**3 - 5 * a * x**2 + 8 * a * x - 4 * a, 0.0),
    )


def bicubic_matrix(n_in: int, factor: int) -> np.ndarray:
    """Antialiased bicubic downsampling by ``factor`` with half-pixel centres, edges replicated."""
    n_out = n_in // factor
    m = np.zeros((n_out, n_in))
    support = 2 * factor
    for o in range(n_out):
        centre = (o + 0.5) * factor - 0.5
        taps = np.arange(int(np.floor(centre - support)), int(np.ceil(centre + support)) + 1)
        w = _cubic((taps - centre) / factor)
        for tap, wt in zip(np.clip(taps, 0, n_in - 1), w):
            m[o, tap] += wt
        m[o] /= m[o].sum()
    return m


def bicubic_downsample(x: np.ndarray, factor: int) -> np.ndarray:
    """(..., H, W) -> (..., H/factor, W/factor)."""
    mh = bicubic_matrix(x.shape[-2], factor)
    mw = bicubic_matrix(x.shape[-1], factor)
    return mh @ x @ mw.T
