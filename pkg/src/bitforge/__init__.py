"""Bit-depth recovery by bit-plane cascade with frozen super-resolution priors."""

from bitforge.bitcore import (
    BitPlane,
    PlanarImage,
    append_lsb,
    assemble,
    bit_replicate_expand,
    extract_bitplane,
    gain_expand,
    quantize,
    zero_pad_expand,
)
from bitforge.metrics import MetricReport, psnr, ssim

__version__ = "0.1.0"

__all__ = [
    "BitPlane",
    "PlanarImage",
    "MetricReport",
    "append_lsb",
    "assemble",
    "bit_replicate_expand",
    "extract_bitplane",
    "gain_expand",
    "psnr",
    "quantize",
    "ssim",
    "zero_pad_expand",
]
