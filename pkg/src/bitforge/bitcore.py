"""Integer bit-plane algebra and classical bit-depth expansion baselines.

Samples are held as ``uint16`` arrays of shape ``(3, H, W)`` (channel order
R, G, B) whatever the logical depth; ``bit_depth`` says how many of the low
bits are meaningful. Planes are indexed MSB first: ``k = 1`` is the most
significant bit of a ``bit_depth``-bit sample.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

MAX_DEPTH = 16
CHANNELS = 3


@dataclass(frozen=True, eq=False)
class PlanarImage:
    samples: np.ndarray
    bit_depth: int

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim != 3 or samples.shape[0] != CHANNELS:
            raise ValueError(f"samples must have shape (3, H, W), got {samples.shape}")
        if not 1 <= int(self.bit_depth) <= MAX_DEPTH:
            raise ValueError(f"bit_depth must be in [1, 16], got {self.bit_depth}")
        if samples.dtype.kind not in "ui":
            raise TypeError(f"samples must be integers, got {samples.dtype}")
        if samples.size and (samples.min() < 0 or samples.max() > (1 << int(self.bit_depth)) - 1):
            raise ValueError(f"sample values exceed the {self.bit_depth}-bit range")
        samples = np.ascontiguousarray(samples, dtype=np.uint16)
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "bit_depth", int(self.bit_depth))

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def height(self) -> int:
        return self.samples.shape[1]

    @property
    def width(self) -> int:
        return self.samples.shape[2]

    @property
    def max_value(self) -> int:
        return (1 << self.bit_depth) - 1

    def __eq__(self, other):
        if not isinstance(other, PlanarImage):
            return NotImplemented
        return self.bit_depth == other.bit_depth and np.array_equal(self.samples, other.samples)

    def __repr__(self):
        return f"PlanarImage({self.width}x{self.height}, bit_depth={self.bit_depth})"


@dataclass(frozen=True, eq=False)
class BitPlane:
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 3 or bits.shape[0] != CHANNELS:
            raise ValueError(f"bits must have shape (3, H, W), got {bits.shape}")
        if bits.size and not np.isin(bits, (0, 1)).all():
            raise ValueError("bit-plane entries must be 0 or 1")
        bits = np.ascontiguousarray(bits, dtype=np.uint8)
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)

    @property
    def channels(self) -> int:
        return self.bits.shape[0]

    @property
    def height(self) -> int:
        return self.bits.shape[1]

    @property
    def width(self) -> int:
        return self.bits.shape[2]

    def __eq__(self, other):
        if not isinstance(other, BitPlane):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)

    def __repr__(self):
        return f"BitPlane({self.width}x{self.height})"


def _check_expansion(depth_in: int, depth_out: int) -> None:
    if not 1 <= depth_in < depth_out <= MAX_DEPTH:
        raise ValueError(
            f"need 1 <= depth_in < depth_out <= 16, got depth_in={depth_in}, depth_out={depth_out}"
        )


def quantize(img: PlanarImage, target_depth: int) -> PlanarImage:
    """Truncate ``img`` to its ``target_depth`` most significant bits."""
    _check_expansion(target_depth, img.bit_depth)
    shift = img.bit_depth - target_depth
    return PlanarImage(img.samples >> shift, target_depth)


def extract_bitplane(img: PlanarImage, k: int) -> BitPlane:
    if not 1 <= k <= img.bit_depth:
        raise ValueError(f"plane index k={k} outside [1, {img.bit_depth}]")
    return BitPlane((img.samples >> (img.bit_depth - k)) & 1)


def assemble(planes: Sequence[BitPlane]) -> PlanarImage:
    """Rebuild an image from its planes, most significant first."""
    planes = list(planes)
    if not planes:
        raise ValueError("cannot assemble an empty sequence of planes")
    if len(planes) > MAX_DEPTH:
        raise ValueError(f"at most 16 planes, got {len(planes)}")
    shape = planes[0].bits.shape
    acc = np.zeros(shape, dtype=np.uint32)
    for plane in planes:
        if plane.bits.shape != shape:
            raise ValueError(f"plane shape {plane.bits.shape} does not match {shape}")
        acc = (acc << 1) | plane.bits
    return PlanarImage(acc.astype(np.uint16), len(planes))


def append_lsb(img: PlanarImage, plane: BitPlane) -> PlanarImage:
    if img.bit_depth >= MAX_DEPTH:
        raise ValueError("cannot append a plane to a 16-bit image")
    if plane.bits.shape != img.samples.shape:
        raise ValueError(f"plane shape {plane.bits.shape} does not match image {img.samples.shape}")
    out = (img.samples.astype(np.uint32) << 1) | plane.bits
    return PlanarImage(out.astype(np.uint16), img.bit_depth + 1)


def zero_pad_expand(img: PlanarImage, depth_out: int) -> PlanarImage:
    _check_expansion(img.bit_depth, depth_out)
    out = img.samples.astype(np.uint32) << (depth_out - img.bit_depth)
    return PlanarImage(out.astype(np.uint16), depth_out)


def bit_replicate_expand(img: PlanarImage, depth_out: int) -> PlanarImage:
    """Fill the new low bits by repeating the input bit pattern from the MSB."""
    depth_in = img.bit_depth
    _check_expansion(depth_in, depth_out)
    v = img.samples.astype(np.uint32)
    out = np.zeros_like(v)
    filled = 0
    while filled < depth_out:
        take = min(depth_in, depth_out - filled)
        out = (out << take) | (v >> (depth_in - take))
        filled += take
    return PlanarImage(out.astype(np.uint16), depth_out)


def gain_expand(img: PlanarImage, depth_out: int) -> PlanarImage:
    """Full-range rescale by (2^out - 1) / (2^in - 1), rounding half away from zero."""
    _check_expansion(img.bit_depth, depth_out)
    num = img.samples.astype(np.uint64) * ((1 << depth_out) - 1)
    den = (1 << img.bit_depth) - 1
    # exact integer rounding; samples are non-negative so half-up == half-away-from-zero
    out = (2 * num + den) // (2 * den)
    return PlanarImage(out.astype(np.uint16), depth_out)
