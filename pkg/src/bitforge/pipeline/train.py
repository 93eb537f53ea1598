"""SR trunk pretraining and per-stage bit-plane training."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from bitforge.autograd import ops
from bitforge.autograd.checkpoint import checksum
from bitforge.autograd.optim import init_state, step
from bitforge.autograd.tensor import Tensor
from bitforge.bitcore import PlanarImage, extract_bitplane, quantize
from bitforge.nets import SrHead, SrTrunk, Submodel, normalize
from bitforge.pipeline.config import TrainConfig
from bitforge.pipeline.synth import SynthSpec, bicubic_downsample, synth_dataset

log = logging.getLogger(__name__)

# stream tags for np.random.SeedSequence; each consumer gets its own generator
TAG_DATA, TAG_SR_DATA, TAG_SR_INIT, TAG_SR_SAMPLE = 0, 1, 2, 3
TAG_STAGE_INIT, TAG_STAGE_SAMPLE = 100, 200


class TrainingDiverged(RuntimeError):
    pass


def stream(seed: int, tag: int, extra: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, tag, extra])


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)

    def add(self, epoch: int, optimizer: str, loss: float) -> None:
        self.rows.append({"epoch": epoch, "optimizer": optimizer, "loss": loss})

    @property
    def losses(self) -> list[float]:
        return [r["loss"] for r in self.rows]

    def to_csv(self) -> str:
        lines = ["epoch,optimizer,loss"]
        lines += [f"{r['epoch']},{r['optimizer']},{r['loss']!r}" for r in self.rows]
        return "\n".join(lines) + "\n"


def _check_finite(loss: float, where: str) -> None:
    if not math.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss {loss} during {where}")


def sr_dataset(config: TrainConfig) -> list[PlanarImage]:
    # seeded from a different stream than the bit-depth images
    return synth_dataset(
        SynthSpec(config.sr_count, config.sr_size, config.generators, seed=config.seed * 7919 + 104729)
    )


def bitdepth_dataset(config: TrainConfig) -> list[PlanarImage]:
    if config.data_dir:
        from bitforge.pipeline.synth import load_directory

        return load_directory(config.data_dir)
    return synth_dataset(SynthSpec(config.synth_count, config.synth_size, config.generators, seed=config.seed))


def _sample_patches(arrays, rng, count, size):
    """Uniform image, then uniform position; ``arrays[i]`` are (..., H, W) per image."""
    picks = []
    for _ in range(count):
        i = int(rng.integers(len(arrays)))
        h, w = arrays[i].shape[-2:]
        y = int(rng.integers(h - size + 1))
        x = int(rng.integers(w - size + 1))
        picks.append((i, y, x))
    return picks


def pretrain_sr(config: TrainConfig, images=None) -> tuple[tuple[SrTrunk, SrTrunk], dict[int, TrainLog]]:
    """Train x2 and x4 trunks with throwaway upsampling heads; return frozen trunks."""
    arch = config.architecture
    images = images if images is not None else sr_dataset(config)
    hr_all = [normalize(img.samples, 16) for img in images]
    trunks, logs = [], {}
    for scale in (2, 4):
        init = stream(config.seed, TAG_SR_INIT, scale)
        trunk = SrTrunk(arch.trunk_spec(scale), init)
        head = SrHead(arch.trunk_width, scale, init)
        params = trunk.parameters(True) + head.parameters(True)
        state = init_state(
            "adam", [p.data for p in params], learning_rate=config.sr_lr,
            beta1=config.beta1, beta2=config.beta2, eps=config.eps,
        )
        rng = stream(config.seed, TAG_SR_SAMPLE, scale)
        train_log = TrainLog()
        for epoch in range(config.sr_epochs):
            total = 0.0
            for _ in range(config.sr_steps_per_epoch):
                picks = _sample_patches(hr_all, rng, config.sr_batch, config.sr_patch)
                hr = np.stack([hr_all[i][:, y : y + config.sr_patch, x : x + config.sr_patch] for i, y, x in picks])
                lr_img = bicubic_downsample(hr, scale)
                for p in params:
                    p.grad = None
                loss = ops.l1_loss(head(trunk(Tensor(lr_img))), hr)
                loss.backward()
                step([p.data for p in params], [p.grad for p in params], state)
                value = loss.item()
                _check_finite(value, f"x{scale} SR pretraining")
                total += value
            train_log.add(epoch, "adam", total / config.sr_steps_per_epoch)
            log.info("sr x%d epoch %d loss %.6f", scale, epoch, train_log.losses[-1])
        trunks.append(trunk.freeze())
        logs[scale] = train_log
    return (trunks[0], trunks[1]), logs


@dataclass
class StageData:
    inputs: list  # (3, H, W) float, normalized b-bit image
    targets: list  # (3, H, W) float, plane b+1
    features: list  # per image: tuple of (C, H, W) frozen-trunk features


def prepare_stage_data(images, bit_depth: int, model: Submodel) -> StageData:
    inputs, targets, features = [], [], []
    for gt in images:
        low = quantize(gt, bit_depth)
        nxt = quantize(gt, bit_depth + 1) if bit_depth + 1 < gt.bit_depth else gt
        x = normalize(low.samples, bit_depth)
        inputs.append(x)
        targets.append(extract_bitplane(nxt, bit_depth + 1).bits.astype(np.float64))
        feats = model.trunk_features(Tensor(x[None]))
        features.append(tuple(f.data[0] for f in feats))
    return StageData(inputs, targets, features)


def _batch(data: StageData, picks, size):
    def crop(a, y, x):
        return a[:, y : y + size, x : x + size]

    x = np.stack([crop(data.inputs[i], y, x) for i, y, x in picks])
    t = np.stack([crop(data.targets[i], y, x) for i, y, x in picks])
    n_feats = len(data.features[0])
    feats = tuple(
        Tensor(np.stack([crop(data.features[i][k], y, x) for i, y, x in picks])) for k in range(n_feats)
    )
    return Tensor(x), t, feats


def train_submodel(
    config: TrainConfig,
    bit_depth: int,
    trunks: tuple[SrTrunk, SrTrunk] | None,
    images,
) -> tuple[Submodel, TrainLog]:
    """Fit the stage predicting plane ``bit_depth + 1`` from ``bit_depth``-bit inputs."""
    if not 1 <= bit_depth < 16:
        raise ValueError(f"stage input depth must be in [1, 15], got {bit_depth}")
    if config.use_sr and trunks is None:
        raise ValueError("use_sr is set but no pretrained trunks were given")
    model = Submodel(config.architecture, bit_depth, stream(config.seed, TAG_STAGE_INIT, bit_depth), trunks)
    frozen_before = checksum(model.frozen_state())
    data = prepare_stage_data(images, bit_depth, model)

    params = model.parameters(trainable_only=True)
    weights = [p.data for p in params]
    decay = config.weight_decay if config.decay_mode == "l2" else 0.0
    rng = stream(config.seed, TAG_STAGE_SAMPLE, bit_depth)
    steps_per_epoch = config.patches_per_epoch // config.batch_size
    train_log = TrainLog()
    state = None
    global_step = 0
    for epoch in range(config.epochs_total):
        kind = "sgd_momentum" if epoch < config.sgd_epochs else "adam"
        if state is None or state.kind != kind:
            state = init_state(
                kind, weights, learning_rate=config.lr, momentum=config.momentum,
                beta1=config.beta1, beta2=config.beta2, eps=config.eps, weight_decay=decay,
            )
        total = 0.0
        for _ in range(steps_per_epoch):
            if config.decay_mode == "lr":
                state.learning_rate = config.lr / (1.0 + config.weight_decay * global_step)
            picks = _sample_patches(data.inputs, rng, config.batch_size, config.patch_size)
            x, target, feats = _batch(data, picks, config.patch_size)
            model.zero_grad()
            loss = ops.bce_with_logits(model(x, feats), target)
            loss.backward()
            step(weights, [p.grad for p in params], state)
            value = loss.item()
            _check_finite(value, f"stage {bit_depth}->{bit_depth + 1} training")
            total += value
            global_step += 1
        train_log.add(epoch, kind, total / steps_per_epoch)
        log.info("stage %d epoch %d %s loss %.6f", bit_depth, epoch, kind, train_log.losses[-1])

    if checksum(model.frozen_state()) != frozen_before:
        raise RuntimeError("frozen SR trunk parameters changed during training")
    return model, train_log
