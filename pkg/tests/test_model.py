import math

import numpy as np
import pytest

from eatkit.model import (
    FFN, GLI, MSRA, Attention, ConfigError, EatBlock, EATFormer, MdMsa, ModelConfig, TaskHead, WomMixer,
    flatten_map, gli_param_count, global_channels, unflatten_tokens, wom_weights,
)
from eatkit.model.layers import Conv2d, Linear
from eatkit.tensor import Tensor, grad_check, ops
from eatkit.train.verify import model_grad_check, randomize


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def test_wom_weights_examples():
    assert wom_weights(Tensor([3.7])).data.tolist() == [1.0]
    np.testing.assert_allclose(wom_weights(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)
    np.testing.assert_allclose(wom_weights(Tensor([math.log(2.0), 0.0])).data, [2 / 3, 1 / 3], atol=1e-15)


def test_wom_single_branch_is_identity(rng):
    mixer = WomMixer(1)
    mixer.alphas.data = np.array([-4.2])
    x = rng.normal(size=(1, 2, 3, 3))
    assert np.array_equal(mixer([Tensor(x)]).data, x)


def test_msra_identity_kernel_doubles_input(rng):
    m = MSRA(4, 4, rng, dilations=(1,), kernel=1, norm=False)
    m.branch0.weight.data = np.ones_like(m.branch0.weight.data)
    m.branch0.bias.data[:] = 0.0
    m.proj.weight.data = np.eye(4).reshape(4, 4, 1, 1) / m.proj.gain
    m.proj.bias.data[:] = 0.0
    x = rng.normal(size=(1, 4, 5, 5))
    assert np.array_equal(m(Tensor(x)).data, 2 * x)


def test_msra_zero_projection_is_identity(rng):
    x = rng.normal(size=(2, 8, 7, 7))
    assert np.array_equal(MSRA(8, 8, rng)(Tensor(x)).data, x)


def test_msra_shapes(rng):
    x = Tensor(rng.normal(size=(1, 8, 16, 16)))
    assert MSRA(8, 8, rng, stride=1, dilations=(1, 2, 3))(x).shape == (1, 8, 16, 16)
    assert MSRA(8, 16, rng, stride=2, dilations=(1, 2, 3))(x).shape == (1, 16, 8, 8)
    with pytest.raises(ValueError):
        MSRA(8, 16, rng, stride=1)


def test_attention_single_token(rng):
    a = Attention(4, 2, rng, zero_proj=False)
    x = Tensor(rng.normal(size=(2, 1, 4)))
    np.testing.assert_allclose(a(x).data, a.proj(a.v(x)).data, atol=1e-14)


def test_attention_identical_tokens_give_identical_rows(rng):
    a = Attention(4, 1, rng, zero_proj=False)
    x = rng.normal(size=(1, 3, 4))
    x[0, 2] = x[0, 0]
    out = a(Tensor(x)).data
    np.testing.assert_allclose(out[0, 0], out[0, 2], atol=1e-14)


def test_attention_permutation_equivariance(rng):
    a = Attention(6, 3, rng, zero_proj=False)
    x = rng.normal(size=(2, 9, 6))
    perm = rng.permutation(9)
    np.testing.assert_allclose(a(Tensor(x[:, perm])).data, a(Tensor(x)).data[:, perm], atol=1e-13)


def _paired(rng, dim, heads, bypass):
    md = MdMsa(dim, heads, rng, zero_proj=False, modulation_bypass=bypass)
    plain = Attention(dim, heads, rng, zero_proj=False)
    plain.q, plain.k, plain.v, plain.proj = md.q, md.k, md.v, md.proj
    return md, plain


def test_md_msa_reduces_to_msa(rng):
    md, plain = _paired(rng, 8, 2, bypass=True)
    for _ in range(20):
        x = Tensor(rng.normal(size=(2, 8, 3, 5)))
        assert np.max(np.abs(md(x).data - plain(flatten_map(x)).data)) <= 1e-12


def test_md_msa_default_modulation_halves_keys_and_values(rng):
    md, plain = _paired(rng, 4, 2, bypass=False)
    x = Tensor(rng.normal(size=(1, 4, 3, 3)))
    tokens = flatten_map(x)
    expected = plain.attend(plain.q(tokens), tokens * 0.5)
    np.testing.assert_allclose(md(x).data, expected.data, atol=1e-12)


def test_md_msa_unit_row_offset_shifts_map(rng):
    md = MdMsa(2, 1, rng, modulation_bypass=True)
    md.md.bias.data = np.array([1.0, 0.0, 0.0])
    x = np.arange(2 * 4 * 3, dtype=float).reshape(1, 2, 4, 3)
    sampled = unflatten_tokens(md.resample(Tensor(x), md.q(flatten_map(Tensor(x)))), 4, 3).data
    expected = np.zeros_like(x)
    expected[:, :, :3] = x[:, :, 1:]
    assert np.array_equal(sampled, expected)


def test_md_msa_gradients(rng):
    md = randomize(MdMsa(4, 2, rng, zero_proj=False), rng)
    w = rng.normal(size=(1, 9, 4))
    assert grad_check(lambda t: ops.sum(md(t) * Tensor(w)), rng.normal(size=(1, 4, 3, 3))) < 1e-5


def test_gli_degenerate_splits(rng):
    x = Tensor(rng.normal(size=(1, 8, 4, 4)))
    g1 = randomize(GLI(8, 2, 1.0, 3, rng), rng)
    assert g1.local is None and g1.mixer.alphas.size == 1
    assert np.array_equal(g1(x).data, (x + unflatten_tokens(g1.attn(g1.norm(x)), 4, 4)).data)
    g0 = randomize(GLI(8, 2, 0.0, 3, rng), rng)
    assert g0.attn is None
    assert np.array_equal(g0(x).data, (x + g0.local(g0.norm(x))).data)


def test_gli_fresh_is_identity(rng):
    x = rng.normal(size=(2, 8, 4, 4))
    assert np.array_equal(GLI(8, 2, 0.5, 3, rng)(Tensor(x)).data, x)


def test_gli_plain_attention_variant(rng):
    g = GLI(8, 2, 0.5, 3, rng, md_msa=False)
    assert type(g.attn) is Attention


def test_global_channels_rounds_down_to_heads():
    assert global_channels(64, 0.5, 2) == 32
    assert global_channels(10, 0.5, 4) == 4
    assert global_channels(8, 1.0, 8) == 8
    with pytest.raises(ConfigError, match="split_ratio"):
        global_channels(8, 1.5, 1)


def test_gli_param_count_examples():
    assert gli_param_count(64, 32, 3) == 5600
    assert gli_param_count(64, 0, 3) == 4800
    assert gli_param_count(1, 1, 1) == 8


def test_gli_param_count_matches_hand_substitution():
    rng = np.random.default_rng(0)
    for _ in range(50):
        c = int(rng.integers(1, 1000))
        cg = int(rng.integers(0, c + 1))
        k = int(rng.choice([1, 3, 5, 7, 9]))
        assert gli_param_count(c, cg, k) == 5 * cg**2 + (2 - 2 * c - k**2) * cg + (k**2 + 2 + c) * c


def test_ffn(rng):
    x = rng.normal(size=(2, 4, 8))
    assert np.array_equal(FFN(8, 4.0, rng)(Tensor(x)).data, x)
    ffn = randomize(FFN(8, 4.0, rng), rng)
    assert ffn(Tensor(x)).shape == (2, 4, 8)
    w = rng.normal(size=(2, 4, 8))
    assert grad_check(lambda t: ops.sum(ffn(t) * Tensor(w)), x) < 1e-5


def test_eat_block_identity_and_gradient(rng):
    cfg = ModelConfig.mini()
    x = rng.normal(size=(1, 8, 8, 8))
    assert np.array_equal(EatBlock(8, 2, cfg, rng)(Tensor(x)).data, x)
    block = randomize(EatBlock(8, 2, cfg, rng), rng, 0.2)
    w = rng.normal(size=x.shape)
    assert grad_check(lambda t: ops.sum(block(t) * Tensor(w)), x, h=1e-4, coords=40, rng=rng) < 1e-4


def test_mini_stage_shapes_64():
    model = EATFormer(ModelConfig.mini(), 0)
    outs = model.backbone.stages(Tensor(np.random.default_rng(0).normal(size=(1, 3, 64, 64))))
    assert [o.shape for o in outs] == [(1, 32, 16, 16), (1, 64, 8, 8), (1, 128, 4, 4), (1, 256, 2, 2)]
    assert model.stage_shapes(64, 64) == [o.shape for o in outs]


@pytest.mark.parametrize("h,w", [(32, 32), (96, 64), (64, 160)])
def test_pyramid_for_rectangular_inputs(h, w):
    model = EATFormer(ModelConfig.tiny(), 0)
    outs = model.backbone.stages(Tensor(np.zeros((1, 3, h, w))))
    for i, o in enumerate(outs):
        assert o.shape[2:] == (h // (4 * 2**i), w // (4 * 2**i))


def test_backbone_rejects_indivisible_input():
    model = EATFormer(ModelConfig.tiny(), 0)
    with pytest.raises(ValueError, match="divisible"):
        model(Tensor(np.zeros((1, 3, 48, 64))))


def test_parameter_names_unique_and_dotted():
    model = EATFormer(ModelConfig.mini(), 0)
    names = [n for n, _ in model.named_parameters()]
    assert len(names) == len(set(names))
    assert "stage2.block0.gli.local.conv.weight" in names
    assert all(p.name == n for n, p in model.named_parameters())


def test_different_images_give_different_features():
    model = EATFormer(ModelConfig.tiny(), 0)
    rng = np.random.default_rng(0)
    a = model.backbone(Tensor(rng.normal(size=(1, 3, 32, 32)))).data
    b = model.backbone(Tensor(rng.normal(size=(1, 3, 32, 32)))).data
    assert not np.array_equal(a, b)


def test_head_zero_init_and_constant_features(rng):
    head = TaskHead(8, 3, rng)
    assert np.array_equal(head(Tensor(rng.normal(size=(2, 8, 2, 2)))).data, np.zeros((2, 3)))
    head = randomize(TaskHead(8, 3, rng), rng)
    vec = rng.normal(size=(1, 8, 1, 1))
    attended, pooled = head.fuse(Tensor(np.broadcast_to(vec, (1, 8, 4, 4)).copy()))
    np.testing.assert_allclose(attended.data, pooled.data, atol=1e-13)


def test_model_is_deterministic_in_seed():
    x = Tensor(np.random.default_rng(0).normal(size=(1, 3, 32, 32)))
    cfg = ModelConfig.tiny()
    a = randomize(EATFormer(cfg, 5), np.random.default_rng(1))(x).data
    b = randomize(EATFormer(cfg, 5), np.random.default_rng(1))(x).data
    assert a.tobytes() == b.tobytes()


def test_full_model_gradient_tiny():
    err, per = model_grad_check(ModelConfig.tiny(), seed=0, hw=32, coords_per_param=1)
    assert err < 1e-4, max(per, key=per.get)


@pytest.mark.parametrize("bad", [
    dict(stage_dims=[32, 64, 128]),
    dict(stage_heads=[3, 2, 4, 8]),
    dict(split_ratio=-0.1),
    dict(local_kernel=4),
    dict(msra_dilations=[]),
    dict(stem_stride=3),
])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        ModelConfig.mini(**bad)


def test_config_round_trip():
    cfg = ModelConfig.mini(split_ratio=0.25)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError, match="unknown"):
        ModelConfig.from_dict({"nope": 1})


def test_mini_parameter_census_is_stable():
    model = EATFormer(ModelConfig.mini(), 0)
    assert model.num_parameters() == sum(p.size for p in model.parameters())
    assert len(model.parameters()) == len({id(p) for p in model.parameters()})


def test_fan_in_gain_gives_fan_in_init(rng):
    lin = Linear(300, 400, rng)
    w = lin.effective_weight().data
    assert lin.gain == 1 / math.sqrt(300)
    assert np.abs(w).max() <= math.sqrt(3 / 300) and abs(w.var() - 1 / 300) < 0.05 / 300
    conv = Conv2d(6, 4, 3, rng, groups=2)
    assert conv.gain == 1 / math.sqrt(27)  # (6 / 2 groups) * 3 * 3 inputs


def test_conv_layer_rejects_wrong_channels(rng):
    conv = Conv2d(4, 4, 3, rng, padding=1)
    with pytest.raises(ValueError, match="channel"):
        conv(Tensor(np.zeros((1, 3, 5, 5))))
