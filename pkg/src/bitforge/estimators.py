"""scikit-learn style wrappers around the classical expanders and the cascade.

Inputs are sequences of images. Each item is a PlanarImage or a (3, H, W)
integer array; arrays carry no depth of their own, so ``transform`` treats
them as ``depth_in``-bit images and ``fit`` as 16-bit references.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from bitforge.bitcore import PlanarImage, quantize
from bitforge.metrics import measure
from bitforge.pipeline.cascade import CLASSICAL, cascade_infer, ground_truth
from bitforge.pipeline.config import TrainConfig, parse_config


def check_planar_image(img, bit_depth: int | None = None) -> PlanarImage:
    """Coerce ``img`` to a PlanarImage, checking its depth when ``bit_depth`` is given."""
    if isinstance(img, PlanarImage):
        if bit_depth is not None and img.bit_depth != bit_depth:
            raise ValueError(f"expected a {bit_depth}-bit image, got {img.bit_depth} bits")
        return img
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"expected a (3, H, W) array, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValueError(f"expected integer samples, got {arr.dtype}")
    if bit_depth is None:
        raise ValueError("a bare array needs an explicit bit depth")
    return PlanarImage(arr.astype(np.uint16), bit_depth)


def check_images(X, bit_depth: int | None = None) -> list[PlanarImage]:
    if isinstance(X, (PlanarImage, np.ndarray)) and np.ndim(getattr(X, "samples", X)) == 3:
        X = [X]
    images = [check_planar_image(img, bit_depth) for img in X]
    if not images:
        raise ValueError("expected at least one image")
    return images


def check_depths(depth_in, depth_out) -> None:
    for name, value in (("depth_in", depth_in), ("depth_out", depth_out)):
        if not isinstance(value, (int, np.integer)) or not 1 <= value <= 16:
            raise ValueError(f"{name} must be an integer in [1, 16], got {value!r}")
    if depth_in >= depth_out:
        raise ValueError(f"depth_in ({depth_in}) must be below depth_out ({depth_out})")


def _low_inputs(X, depth_in: int) -> list[PlanarImage]:
    images = check_images(X, None if _all_planar(X) else depth_in)
    for img in images:
        if img.bit_depth != depth_in:
            raise ValueError(f"expected {depth_in}-bit inputs, got {img.bit_depth} bits")
    return images


def _all_planar(X) -> bool:
    return isinstance(X, PlanarImage) or (
        not isinstance(X, np.ndarray) and all(isinstance(img, PlanarImage) for img in X)
    )


class _ExpanderMixin:
    def predict(self, X) -> list[PlanarImage]:
        return self.transform(X)

    def score(self, X, y) -> float:
        """Mean PSNR (dB) of ``transform(X)`` against references ``y``."""
        refs = check_images(y, None if _all_planar(y) else self.depth_out)
        outputs = self.transform(X)
        if len(refs) != len(outputs):
            raise ValueError(f"{len(outputs)} inputs but {len(refs)} references")
        return float(np.mean([measure(out, ground_truth(ref, self.depth_out)).psnr for out, ref in zip(outputs, refs)]))


class ClassicalExpander(_ExpanderMixin, TransformerMixin, BaseEstimator):
    """zero_pad, replicate or gain expansion; ``fit`` only validates."""

    def __init__(self, method: str = "zero_pad", depth_in: int = 4, depth_out: int = 8):
        self.method = method
        self.depth_in = depth_in
        self.depth_out = depth_out

    def fit(self, X=None, y=None):
        if self.method not in CLASSICAL:
            raise ValueError(f"unknown method {self.method!r}; expected one of {sorted(CLASSICAL)}")
        check_depths(self.depth_in, self.depth_out)
        self.fitted_ = True
        return self

    def transform(self, X) -> list[PlanarImage]:
        if not getattr(self, "fitted_", False):
            raise NotFittedError("call fit before transform")
        expand = CLASSICAL[self.method]
        return [expand(img, self.depth_out) for img in _low_inputs(X, self.depth_in)]


class BitPlaneCascade(_ExpanderMixin, TransformerMixin, BaseEstimator):
    """One learned stage per missing bit plane.

    ``config`` supplies every training setting; the explicit arguments win over
    it. ``fit`` takes high-depth reference images and trains each stage on
    truncations of them; ``transform`` expands ``depth_in``-bit images.
    """

    def __init__(
        self,
        depth_in: int = 4,
        depth_out: int = 8,
        seed: int = 0,
        use_sr: bool = True,
        config: TrainConfig | None = None,
    ):
        self.depth_in = depth_in
        self.depth_out = depth_out
        self.seed = seed
        self.use_sr = use_sr
        self.config = config

    def resolved_config(self) -> TrainConfig:
        check_depths(self.depth_in, self.depth_out)
        base = self.config if self.config is not None else parse_config()
        return base.replace(depth_in=int(self.depth_in), depth_out=int(self.depth_out), seed=int(self.seed), use_sr=bool(self.use_sr))

    def fit(self, X, y=None, trunks=None):
        """Train every stage on ``X``; SR trunks are pretrained unless ``trunks`` is given."""
        from bitforge.pipeline.train import pretrain_sr, train_submodel

        config = self.resolved_config()
        images = check_images(X, None if _all_planar(X) else 16)
        shallow = [img.bit_depth for img in images if img.bit_depth < config.depth_out]
        if shallow:
            raise ValueError(f"references must have at least {config.depth_out} bits, got {min(shallow)}")
        images = [img if img.bit_depth == 16 else _as_reference(img) for img in images]
        self.sr_logs_ = {}
        if config.use_sr and trunks is None:
            trunks, self.sr_logs_ = pretrain_sr(config)
        self.trunks_ = trunks if config.use_sr else None
        self.stages_, self.train_logs_ = [], []
        for b in config.stages:
            model, train_log = train_submodel(config, b, self.trunks_, images)
            self.stages_.append(model)
            self.train_logs_.append(train_log)
        self.config_ = config
        return self

    @classmethod
    def from_run(cls, run_dir) -> "BitPlaneCascade":
        """Rebuild a fitted estimator from a run directory written by the CLI."""
        from bitforge.pipeline.experiment import RunDir
        from bitforge.pipeline.store import load_stages

        run = RunDir.existing(Path(run_dir))
        config = run.config
        est = cls(config.depth_in, config.depth_out, config.seed, config.use_sr, config)
        est.stages_ = load_stages(run.path, config.depth_in, config.depth_out)
        est.trunks_ = (est.stages_[0].sr2, est.stages_[0].sr4) if config.use_sr else None
        est.config_ = config
        return est

    def _check_fitted(self) -> None:
        if not hasattr(self, "stages_"):
            raise NotFittedError("call fit before transform")

    def transform(self, X) -> list[PlanarImage]:
        self._check_fitted()
        return [cascade_infer(img, self.stages_, self.depth_out) for img in _low_inputs(X, self.depth_in)]

    def plane_accuracy(self, X) -> list[float]:
        """Per-stage fraction of correct bits on references ``X``."""
        from bitforge.pipeline.cascade import plane_accuracy

        self._check_fitted()
        images = check_images(X, None if _all_planar(X) else 16)
        return [plane_accuracy(images, stage) for stage in self.stages_]


def _as_reference(img: PlanarImage) -> PlanarImage:
    """Left-align a shallower reference into 16 bits so truncation reproduces it."""
    from bitforge.bitcore import zero_pad_expand

    return zero_pad_expand(img, 16)


def low_depth(images: Sequence[PlanarImage], depth: int) -> list[PlanarImage]:
    """Truncate references to ``depth`` bits (the usual ``transform`` input)."""
    return [quantize(img, depth) for img in images]
