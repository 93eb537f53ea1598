"""Network blocks for one cascade stage.

A stage reads a normalized ``b``-bit RGB image and emits logits for the next
bit-plane. Features come from two frozen super-resolution trunks (their
upsampling heads removed) and a trainable inception branch, are fused and
gated by CBAM, then pass through inverted-residual attention blocks, an
attention tail and an inverted-residual output block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from bitforge.autograd import ops
from bitforge.autograd.tensor import Tensor


class Module:
    """Parameter container; tensors and sub-modules are discovered from attributes."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Tensor):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def parameters(self, trainable_only: bool = False):
        return [p for _, p in self.named_parameters() if p.requires_grad or not trainable_only]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = own.keys() - state.keys()
        extra = state.keys() - own.keys()
        if missing or extra:
            raise ValueError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in own.items():
            if state[name].shape != p.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.shape}")
            p.data = np.array(state[name], dtype=np.float64)

    def freeze(self) -> "Module":
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, k: int, rng: np.random.Generator, bias: bool = True):
        fan_in = in_ch * k * k
        # He fan-in scaling
        self.weight = Tensor(rng.standard_normal((out_ch, in_ch, k, k)) * np.sqrt(2.0 / fan_in), requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch), requires_grad=True) if bias else None
        self.padding = k // 2

    def named_parameters(self, prefix: str = ""):
        yield f"{prefix}weight", self.weight
        if self.bias is not None:
            yield f"{prefix}bias", self.bias

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=1, padding=self.padding)


class DepthwiseConv2d(Conv2d):
    def __init__(self, channels: int, k: int, rng: np.random.Generator):
        self.weight = Tensor(rng.standard_normal((channels, 1, k, k)) * np.sqrt(2.0 / (k * k)), requires_grad=True)
        self.bias = Tensor(np.zeros(channels), requires_grad=True)
        self.padding = k // 2

    def forward(self, x: Tensor) -> Tensor:
        return ops.depthwise_conv2d(x, self.weight, self.bias, stride=1, padding=self.padding)


# ---------------------------------------------------------------- SR trunk


@dataclass(frozen=True)
class SrEncoderSpec:
    scale_tag: int
    trunk_width: int = 16
    num_res_blocks: int = 4
    frozen: bool = True

    def __post_init__(self):
        if self.scale_tag not in (2, 4):
            raise ValueError(f"scale_tag must be 2 or 4, got {self.scale_tag}")
        if self.trunk_width < 1 or self.num_res_blocks < 0:
            raise ValueError("trunk_width must be positive and num_res_blocks non-negative")


class ResBlock(Module):
    def __init__(self, width: int, rng: np.random.Generator):
        self.conv1 = Conv2d(width, width, 3, rng)
        self.conv2 = Conv2d(width, width, 3, rng)

    def forward(self, x: Tensor) -> Tensor:
        return ops.add(x, self.conv2(ops.relu(self.conv1(x))))


class SrTrunk(Module):
    """EDSR-style body: head conv, residual blocks, tail conv, long skip."""

    def __init__(self, spec: SrEncoderSpec, rng: np.random.Generator):
        self.spec = spec
        self.head = Conv2d(3, spec.trunk_width, 3, rng)
        self.blocks = [ResBlock(spec.trunk_width, rng) for _ in range(spec.num_res_blocks)]
        self.tail = Conv2d(spec.trunk_width, spec.trunk_width, 3, rng)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValueError(f"SR trunk expects N x 3 x H x W input, got {x.shape}")
        h = self.head(x)
        r = h
        for block in self.blocks:
            r = block(r)
        return ops.add(self.tail(r), h)


class SrHead(Module):
    """Upsampler used only while pretraining a trunk; discarded afterwards."""

    def __init__(self, width: int, scale: int, rng: np.random.Generator):
        if scale not in (2, 4):
            raise ValueError(f"scale must be 2 or 4, got {scale}")
        self.scale = scale
        self.expand = Conv2d(width, 3 * scale * scale, 3, rng)
        self.out = Conv2d(3, 3, 3, rng)

    def forward(self, features: Tensor) -> Tensor:
        return self.out(ops.pixel_shuffle(self.expand(features), self.scale))


def sr_encoder_forward(img: Tensor, spec: SrEncoderSpec, trunk: SrTrunk) -> Tensor:
    if trunk.spec.trunk_width != spec.trunk_width or len(trunk.blocks) != spec.num_res_blocks:
        raise ValueError(f"trunk weights do not match {spec}")
    return trunk(img)


def sr_head_forward(features: Tensor, scale: int, head: SrHead) -> Tensor:
    if scale != head.scale:
        raise ValueError(f"head was built for x{head.scale}, asked for x{scale}")
    return head(features)


# ---------------------------------------------------------------- feature extractor


class Inception(Module):
    """Four parallel branches (1x1, 1x1-3x3, 1x1-5x5, pool-1x1), C/4 channels each."""

    def __init__(self, in_ch: int, width: int, rng: np.random.Generator):
        if width % 4:
            raise ValueError(f"inception width {width} is not divisible by 4")
        q = width // 4
        self.b1 = Conv2d(in_ch, q, 1, rng)
        self.b3_reduce = Conv2d(in_ch, q, 1, rng)
        self.b3 = Conv2d(q, q, 3, rng)
        self.b5_reduce = Conv2d(in_ch, q, 1, rng)
        self.b5 = Conv2d(q, q, 5, rng)
        self.pool_proj = Conv2d(in_ch, q, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        return ops.concat(
            [
                self.b1(x),
                self.b3(ops.relu(self.b3_reduce(x))),
                self.b5(ops.relu(self.b5_reduce(x))),
                self.pool_proj(ops.avg_pool3x3(x)),
            ]
        )


class CBAM(Module):
    """Channel gate from a shared bottleneck over avg/max descriptors, then a 7x7 spatial gate."""

    def __init__(self, channels: int, rng: np.random.Generator, reduction: int = 8):
        if channels < reduction:
            raise ValueError(f"CBAM needs at least {reduction} channels, got {channels}")
        hidden = channels // reduction
        self.fc1 = Conv2d(channels, hidden, 1, rng)
        self.fc2 = Conv2d(hidden, channels, 1, rng)
        self.spatial = Conv2d(2, 1, 7, rng)

    def channel_gate(self, x: Tensor) -> Tensor:
        avg = self.fc2(ops.relu(self.fc1(ops.global_avg_pool(x))))
        mx = self.fc2(ops.relu(self.fc1(ops.global_max_pool(x))))
        return ops.sigmoid(ops.add(avg, mx))

    def spatial_gate(self, x: Tensor) -> Tensor:
        maps = ops.concat([ops.channel_avg_map(x), ops.channel_max_map(x)])
        return ops.sigmoid(self.spatial(maps))

    def forward(self, x: Tensor) -> Tensor:
        x = ops.mul(x, self.channel_gate(x))
        return ops.mul(x, self.spatial_gate(x))


class Fusion(Module):
    """Channel concat -> 1x1 projection -> CBAM."""

    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator):
        self.proj = Conv2d(in_ch, out_ch, 1, rng)
        self.cbam = CBAM(out_ch, rng)

    def forward(self, *features: Tensor) -> Tensor:
        spatial = {f.shape[2:] for f in features}
        if len(spatial) != 1:
            raise ValueError(f"fusion inputs disagree on spatial extents: {sorted(spatial)}")
        return self.cbam(self.proj(ops.concat(list(features))))


# ---------------------------------------------------------------- prediction head


class SqueezeExcite(Module):
    def __init__(self, channels: int, rng: np.random.Generator, reduction: int = 4):
        self.reduce = Conv2d(channels, max(1, channels // reduction), 1, rng)
        self.expand = Conv2d(max(1, channels // reduction), channels, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        gate = ops.sigmoid(self.expand(ops.relu(self.reduce(ops.global_avg_pool(x)))))
        return ops.mul(x, gate)


class IRABlock(Module):
    """Inverted residual with squeeze-excite: expand, depthwise, gate, project, add."""

    def __init__(self, width: int, rng: np.random.Generator, expansion: int = 2, reduction: int = 4):
        hidden = width * expansion
        self.expand = Conv2d(width, hidden, 1, rng)
        self.depthwise = DepthwiseConv2d(hidden, 3, rng)
        self.se = SqueezeExcite(hidden, rng, reduction)
        self.project = Conv2d(hidden, width, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        h = ops.relu(self.expand(x))
        h = ops.relu(self.depthwise(h))
        h = self.se(h)
        return ops.add(x, self.project(h))


class IRBOut(Module):
    """Inverted residual output block without attention, projecting to RGB logits."""

    def __init__(self, width: int, rng: np.random.Generator, expansion: int = 2, out_ch: int = 3):
        hidden = width * expansion
        self.expand = Conv2d(width, hidden, 1, rng)
        self.depthwise = DepthwiseConv2d(hidden, 3, rng)
        self.project = Conv2d(hidden, out_ch, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        h = ops.relu(self.expand(x))
        h = ops.relu(self.depthwise(h))
        return self.project(h)


def ira_forward(x: Tensor, block: IRABlock) -> Tensor:
    return block(x)


def inception_forward(img: Tensor, block: Inception) -> Tensor:
    return block(img)


def cbam_forward(features: Tensor, block: CBAM) -> Tensor:
    return block(features)


def fuse_features(sr2: Tensor, sr4: Tensor, incep: Tensor, block: Fusion) -> Tensor:
    return block(sr2, sr4, incep)


# ---------------------------------------------------------------- submodel


@dataclass(frozen=True)
class Architecture:
    trunk_width: int = 16
    res_blocks: int = 4
    fused_width: int = 32
    ira_blocks: int = 4
    expansion: int = 2
    use_sr: bool = True

    def __post_init__(self):
        if self.trunk_width % 4:
            raise ValueError("trunk_width must be divisible by 4 (inception branches)")
        if self.fused_width < 8:
            raise ValueError("fused_width must be at least 8 (CBAM reduction)")
        if self.ira_blocks < 0 or self.res_blocks < 0 or self.expansion < 1:
            raise ValueError("block counts must be non-negative and expansion positive")

    def trunk_spec(self, scale: int) -> SrEncoderSpec:
        return SrEncoderSpec(scale, self.trunk_width, self.res_blocks, frozen=True)


def normalize(samples: np.ndarray, bit_depth: int) -> np.ndarray:
    """uint samples (3, H, W) or (N, 3, H, W) -> float64 in [0, 1]."""
    return samples.astype(np.float64) / float((1 << bit_depth) - 1)


class Submodel(Module):
    """One cascade stage: ``bit_depth``-bit image in, logits for the next plane out."""

    def __init__(
        self,
        arch: Architecture,
        bit_depth: int,
        rng: np.random.Generator,
        trunks: tuple[SrTrunk, SrTrunk] | None = None,
    ):
        if not 1 <= bit_depth <= 15:
            raise ValueError(f"stage input depth must be in [1, 15], got {bit_depth}")
        self.arch = arch
        self.bit_depth = bit_depth
        if arch.use_sr:
            if trunks is None:
                trunks = (SrTrunk(arch.trunk_spec(2), rng), SrTrunk(arch.trunk_spec(4), rng))
            self.sr2, self.sr4 = (t.freeze() for t in trunks)
        else:
            self.sr2 = self.sr4 = None
        self.inception = Inception(3, arch.trunk_width, rng)
        n_paths = 3 if arch.use_sr else 1
        self.fusion = Fusion(n_paths * arch.trunk_width, arch.fused_width, rng)
        self.ira = [IRABlock(arch.fused_width, rng, arch.expansion) for _ in range(arch.ira_blocks)]
        self.tail = CBAM(arch.fused_width, rng)
        self.irb = IRBOut(arch.fused_width, rng, arch.expansion)

    def trunk_features(self, x: Tensor) -> tuple[Tensor, ...]:
        """Frozen-trunk features; constant w.r.t. training so callers may cache them."""
        if not self.arch.use_sr:
            return ()
        return (sr_encoder_forward(x, self.sr2.spec, self.sr2), sr_encoder_forward(x, self.sr4.spec, self.sr4))

    def forward(self, x: Tensor, trunk_feats: tuple[Tensor, ...] | None = None) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValueError(f"submodel expects N x 3 x H x W input, got {x.shape}")
        if trunk_feats is None:
            trunk_feats = self.trunk_features(x)
        h = self.fusion(*trunk_feats, self.inception(x))
        for block in self.ira:
            h = block(h)
        h = self.tail(h)
        return self.irb(h)

    def forward_image(self, img) -> Tensor:
        """Logits ``1 x 3 x H x W`` for a PlanarImage of this stage's depth."""
        if img.bit_depth != self.bit_depth:
            raise ValueError(f"stage expects {self.bit_depth}-bit input, got {img.bit_depth}-bit")
        return self.forward(Tensor(normalize(img.samples, img.bit_depth)[None]))

    def learnable_state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters() if p.requires_grad}

    def frozen_state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters() if not p.requires_grad}

    def zero_learnable(self) -> "Submodel":
        for p in self.parameters(trainable_only=True):
            p.data = np.zeros_like(p.data)
        return self


def submodel_forward(img, weights: Submodel) -> Tensor:
    return weights.forward_image(img)
