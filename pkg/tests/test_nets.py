import math

import numpy as np
import pytest

from bitforge.autograd import ops
from bitforge.autograd.checkpoint import checksum
from bitforge.autograd.gradcheck import grad_check
from bitforge.autograd.optim import init_state, step
from bitforge.autograd.tensor import Tensor
from bitforge.bitcore import BitPlane
from bitforge.diagnostics import _jitter
from bitforge.nets import (
    CBAM,
    Architecture,
    Conv2d,
    Fusion,
    Inception,
    IRABlock,
    SrEncoderSpec,
    SrHead,
    SrTrunk,
    Submodel,
    cbam_forward,
    fuse_features,
    inception_forward,
    ira_forward,
    normalize,
    sr_encoder_forward,
    sr_head_forward,
    submodel_forward,
)
from conftest import random_image


def zero(module):
    for p in module.parameters():
        p.data = np.zeros_like(p.data)
    return module


def feats(rng, *shape):
    return Tensor(rng.standard_normal(shape))


# ---------------------------------------------------------------- SR trunk and head


@pytest.mark.parametrize("h,w", [(8, 8), (9, 13), (16, 11)])
def test_trunk_preserves_spatial_extent(rng, h, w):
    spec = SrEncoderSpec(2)
    out = sr_encoder_forward(Tensor(rng.random((2, 3, h, w))), spec, SrTrunk(spec, rng))
    assert out.shape == (2, 16, h, w)


def test_zero_body_trunk_reduces_to_head_projection(rng):
    trunk = SrTrunk(SrEncoderSpec(4), rng)
    for block in trunk.blocks:
        zero(block)
    zero(trunk.tail)
    x = Tensor(rng.random((1, 3, 10, 10)))
    np.testing.assert_array_equal(trunk(x).data, trunk.head(x).data)


def test_trunk_rejects_mismatched_spec(rng):
    trunk = SrTrunk(SrEncoderSpec(2), rng)
    with pytest.raises(ValueError):
        sr_encoder_forward(Tensor(rng.random((1, 3, 8, 8))), SrEncoderSpec(2, num_res_blocks=2), trunk)


@pytest.mark.parametrize("scale", [2, 4])
def test_head_upsamples_by_scale(rng, scale):
    out = sr_head_forward(feats(rng, 1, 16, 16, 16), scale, SrHead(16, scale, rng))
    assert out.shape == (1, 3, 16 * scale, 16 * scale)


def test_head_rejects_other_scales(rng):
    with pytest.raises(ValueError):
        SrHead(16, 3, rng)
    with pytest.raises(ValueError):
        sr_head_forward(feats(rng, 1, 16, 4, 4), 4, SrHead(16, 2, rng))


def test_pixel_rearrangement_is_a_bijection(rng):
    x = feats(rng, 2, 12, 5, 7)
    np.testing.assert_array_equal(ops.pixel_unshuffle(ops.pixel_shuffle(x, 2), 2).data, x.data)
    y = feats(rng, 1, 3, 8, 12)
    np.testing.assert_array_equal(ops.pixel_shuffle(ops.pixel_unshuffle(y, 4), 4).data, y.data)


def test_frozen_trunk_survives_training_steps(rng):
    trunk = SrTrunk(SrEncoderSpec(2), rng).freeze()
    head = SrHead(16, 2, rng)
    before = checksum(trunk.state_dict())
    params = head.parameters(True)
    state = init_state("adam", [p.data for p in params], learning_rate=1e-2)
    for _ in range(10):
        head.zero_grad()
        lr = Tensor(rng.random((2, 3, 8, 8)))
        loss = ops.l1_loss(head(trunk(lr)), rng.random((2, 3, 16, 16)))
        loss.backward()
        assert all(p.grad is None for p in trunk.parameters())
        step([p.data for p in params], [p.grad for p in params], state)
    assert checksum(trunk.state_dict()) == before
    assert trunk.parameters(trainable_only=True) == []


def test_spec_rejects_unknown_scale():
    with pytest.raises(ValueError):
        SrEncoderSpec(3)


# ---------------------------------------------------------------- inception, CBAM, fusion


def test_inception_shape_and_branch_split(rng):
    out = inception_forward(Tensor(rng.random((2, 3, 7, 9))), Inception(3, 16, rng))
    assert out.shape == (2, 16, 7, 9)


def test_inception_width_must_split_four_ways(rng):
    with pytest.raises(ValueError):
        Inception(3, 10, rng)


def test_inception_constant_input_gives_constant_channels(rng):
    inc = Inception(3, 8, rng)
    for conv in (inc.b1, inc.b3_reduce, inc.b3, inc.b5_reduce, inc.b5, inc.pool_proj):
        conv.bias.data = rng.standard_normal(conv.bias.shape)
    x = Tensor(np.full((1, 3, 16, 16), 0.3))
    out = inc(x).data[0]
    # borders see zero padding, the interior is translation invariant
    interior = out[:, 3:-3, 3:-3]
    np.testing.assert_allclose(interior, interior[:, :1, :1] * np.ones_like(interior), atol=1e-12)


def test_inception_gradient_all_branches(rng):
    inc = _jitter(Inception(3, 8, rng), rng)
    x = Tensor(rng.standard_normal((1, 3, 6, 6)), requires_grad=True)
    w = rng.standard_normal((1, 8, 6, 6))
    report = grad_check(lambda: ops.sum_all(ops.mul(inc(x), Tensor(w))), [x] + inc.parameters(True), smooth_only=True)
    assert report.passed, report


def test_cbam_zero_logits_quarter_gate(rng):
    cbam = zero(CBAM(16, rng))
    x = feats(rng, 2, 16, 6, 5)
    np.testing.assert_allclose(cbam_forward(x, cbam).data, 0.25 * x.data, rtol=0, atol=1e-15)


def test_cbam_gates_strictly_inside_unit_interval(rng):
    cbam = CBAM(16, rng)
    x = feats(rng, 2, 16, 6, 6)
    for gate in (cbam.channel_gate(x).data, cbam.spatial_gate(ops.mul(x, cbam.channel_gate(x))).data):
        assert (gate > 0).all() and (gate < 1).all()


def test_cbam_channel_permutation_equivariance(rng):
    c = 16
    cbam = CBAM(c, rng)
    perm = rng.permutation(c)
    moved = CBAM(c, rng)
    moved.fc1.weight.data = cbam.fc1.weight.data[:, perm]
    moved.fc1.bias.data = cbam.fc1.bias.data.copy()
    moved.fc2.weight.data = cbam.fc2.weight.data[perm]
    moved.fc2.bias.data = cbam.fc2.bias.data[perm]
    moved.spatial.weight.data = cbam.spatial.weight.data.copy()
    moved.spatial.bias.data = cbam.spatial.bias.data.copy()
    x = feats(rng, 1, c, 6, 7)
    np.testing.assert_allclose(moved(Tensor(x.data[:, perm])).data, cbam(x).data[:, perm], atol=1e-12)


def test_cbam_needs_enough_channels(rng):
    with pytest.raises(ValueError):
        CBAM(4, rng)


def test_fusion_shape_and_zero_projection(rng):
    fusion = Fusion(48, 32, rng)
    parts = [feats(rng, 1, 16, 5, 6) for _ in range(3)]
    assert fuse_features(*parts, fusion).shape == (1, 32, 5, 6)
    zero(fusion.proj)
    np.testing.assert_array_equal(fuse_features(*parts, fusion).data, 0.0)


def test_fusion_rejects_spatial_mismatch(rng):
    fusion = Fusion(48, 32, rng)
    with pytest.raises(ValueError):
        fuse_features(feats(rng, 1, 16, 5, 6), feats(rng, 1, 16, 5, 6), feats(rng, 1, 16, 5, 5), fusion)


def test_gradient_reaches_inception_not_trunks(rng):
    model = Submodel(Architecture(), 4, rng)
    x = Tensor(rng.random((1, 3, 8, 8)))
    ops.bce_with_logits(model(x), (rng.random((1, 3, 8, 8)) > 0.5).astype(float)).backward()
    assert all(p.grad is None for p in model.sr2.parameters() + model.sr4.parameters())
    assert any(np.abs(p.grad).sum() > 0 for p in model.inception.parameters())


# ---------------------------------------------------------------- IRA blocks and the submodel


def test_ira_zero_weights_is_identity(rng):
    block = zero(IRABlock(32, rng))
    x = feats(rng, 2, 32, 5, 4)
    np.testing.assert_array_equal(ira_forward(x, block).data, x.data)


@pytest.mark.parametrize("h,w", [(1, 1), (5, 9), (12, 7)])
def test_ira_shape_preserved(rng, h, w):
    assert IRABlock(32, rng)(feats(rng, 1, 32, h, w)).shape == (1, 32, h, w)


def test_ira_gradient(rng):
    block = _jitter(IRABlock(8, rng), rng)
    x = Tensor(rng.standard_normal((2, 8, 5, 5)), requires_grad=True)
    w = rng.standard_normal((2, 8, 5, 5))
    report = grad_check(lambda: ops.sum_all(ops.mul(block(x), Tensor(w))), [x] + block.parameters(True), smooth_only=True)
    assert report.passed, report


@pytest.mark.parametrize("use_sr", [True, False])
def test_submodel_logit_shape_and_plane(rng, use_sr):
    model = Submodel(Architecture(use_sr=use_sr), 5, rng)
    img = random_image(rng, 5, 9, 11)
    logits = submodel_forward(img, model)
    assert logits.shape == (1, 3, 9, 11)
    plane = BitPlane((logits.data[0] > 0).astype(np.uint8))
    assert set(np.unique(plane.bits)) <= {0, 1}


def test_submodel_forward_deterministic(rng):
    model = Submodel(Architecture(), 4, rng)
    img = random_image(rng, 4, 8, 8)
    assert submodel_forward(img, model).data.tobytes() == submodel_forward(img, model).data.tobytes()


def test_submodel_rejects_bad_depths(rng):
    with pytest.raises(ValueError):
        Submodel(Architecture(), 16, rng)
    with pytest.raises(ValueError):
        Submodel(Architecture(), 0, rng)
    with pytest.raises(ValueError):
        submodel_forward(random_image(rng, 6), Submodel(Architecture(), 4, rng))


def test_zero_learnable_weights_are_uninformative(rng):
    model = Submodel(Architecture(), 4, rng).zero_learnable()
    x = Tensor(rng.random((2, 3, 8, 8)))
    logits = model(x)
    np.testing.assert_array_equal(logits.data, 0.0)
    target = (rng.random(logits.shape) > 0.5).astype(float)
    assert abs(ops.bce_with_logits(logits, target).item() - math.log(2)) < 1e-12


def test_trunks_are_shared_and_frozen(rng):
    trunks = (SrTrunk(SrEncoderSpec(2), rng), SrTrunk(SrEncoderSpec(4), rng))
    a = Submodel(Architecture(), 4, rng, trunks)
    b = Submodel(Architecture(), 5, rng, trunks)
    assert a.sr2 is b.sr2
    names = {name for name, _ in a.frozen_state().items()}
    assert names and all(n.startswith(("sr2.", "sr4.")) for n in names)
    assert not any(n.startswith(("sr2.", "sr4.")) for n in a.learnable_state())


def test_state_dict_round_trip(rng):
    a = Submodel(Architecture(), 4, np.random.default_rng(1))
    b = Submodel(Architecture(), 4, np.random.default_rng(2))
    b.load_state_dict(a.state_dict())
    x = Tensor(rng.random((1, 3, 8, 8)))
    np.testing.assert_array_equal(a(x).data, b(x).data)
    with pytest.raises((KeyError, ValueError)):
        b.load_state_dict({"nope": np.zeros(1)})


def test_he_init_scale():
    conv = Conv2d(64, 64, 3, np.random.default_rng(0))
    assert conv.weight.data.std() == pytest.approx(math.sqrt(2 / (64 * 9)), rel=0.05)
    np.testing.assert_array_equal(conv.bias.data, 0.0)


def test_normalize_maps_to_unit_interval():
    s = np.array([0, 7, 15], dtype=np.uint16)
    np.testing.assert_allclose(normalize(s, 4), [0.0, 7 / 15, 1.0])
