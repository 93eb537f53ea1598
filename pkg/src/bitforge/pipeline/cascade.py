"""Cascade inference and evaluation against 16-bit ground truth."""

from __future__ import annotations

from typing import Callable, Sequence, Union

import numpy as np

from bitforge.bitcore import (
    BitPlane,
    PlanarImage,
    append_lsb,
    bit_replicate_expand,
    gain_expand,
    quantize,
    zero_pad_expand,
)
from bitforge.metrics import measure
from bitforge.nets import Submodel

METHODS = ("zero_pad", "replicate", "gain", "cascade")
CLASSICAL = {"zero_pad": zero_pad_expand, "replicate": bit_replicate_expand, "gain": gain_expand}

Stage = Union[Submodel, Callable[[PlanarImage], BitPlane]]


def predict_plane(img_b: PlanarImage, weights: Submodel) -> BitPlane:
    logits = weights.forward_image(img_b).data[0]
    return BitPlane((logits > 0).astype(np.uint8))


def plane_probability(img_b: PlanarImage, weights: Submodel) -> np.ndarray:
    from scipy.special import expit

    return expit(weights.forward_image(img_b).data[0])


def cascade_infer(img_low: PlanarImage, stages: Sequence[Stage], depth_out: int) -> PlanarImage:
    """Append one predicted plane per stage until ``depth_out`` bits.

    A stage is a trained Submodel or any callable mapping a b-bit image to the
    next BitPlane (used for oracle and constant predictors).
    """
    needed = depth_out - img_low.bit_depth
    if needed < 1:
        raise ValueError(f"depth_out {depth_out} must exceed the input depth {img_low.bit_depth}")
    if len(stages) != needed:
        raise ValueError(f"{needed} stages needed for {img_low.bit_depth}->{depth_out}, got {len(stages)}")
    img = img_low
    for stage in stages:
        if isinstance(stage, Submodel):
            if stage.bit_depth != img.bit_depth:
                raise ValueError(f"stage expects {stage.bit_depth}-bit input, cascade is at {img.bit_depth} bits")
            plane = predict_plane(img, stage)
        else:
            plane = stage(img)
        img = append_lsb(img, plane)
    return img


def ground_truth(gt: PlanarImage, depth: int) -> PlanarImage:
    return gt if depth == gt.bit_depth else quantize(gt, depth)


def expand(img_low: PlanarImage, method: str, depth_out: int, stages=None) -> PlanarImage:
    if method in CLASSICAL:
        return CLASSICAL[method](img_low, depth_out)
    if method == "cascade":
        if stages is None:
            raise ValueError("cascade evaluation needs trained stages")
        return cascade_infer(img_low, stages, depth_out)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def evaluate(dataset, method: str, depth_in: int, depth_out: int, stages=None, label: str | None = None) -> list[dict]:
    """Per-image PSNR/SSIM rows followed by a ``mean`` row."""
    dataset = list(dataset)
    if not dataset:
        raise ValueError("evaluate needs a non-empty dataset")
    name = label or method
    rows = []
    for index, gt in enumerate(dataset):
        target = ground_truth(gt, depth_out)
        out = expand(quantize(gt, depth_in), method, depth_out, stages)
        report = measure(out, target)
        rows.append(
            {"image": index, "method": name, "b_L": depth_in, "b_H": depth_out, "psnr_db": report.psnr, "ssim": report.ssim}
        )
    rows.append(mean_row(rows))
    return rows


def mean_row(rows) -> dict:
    first = rows[0]
    return {
        "image": "mean",
        "method": first["method"],
        "b_L": first["b_L"],
        "b_H": first["b_H"],
        "psnr_db": float(np.mean([r["psnr_db"] for r in rows])),
        "ssim": float(np.mean([r["ssim"] for r in rows])),
    }


def plane_accuracy(images, weights: Submodel) -> float:
    """Fraction of correctly predicted plane bits over ``images`` (16-bit ground truth)."""
    from bitforge.bitcore import extract_bitplane

    b = weights.bit_depth
    hits = total = 0
    for gt in images:
        low = quantize(gt, b)
        truth = extract_bitplane(ground_truth(gt, b + 1), b + 1).bits
        pred = predict_plane(low, weights).bits
        hits += int((pred == truth).sum())
        total += truth.size
    return hits / total
