import numpy as np
import pytest

from wildpose import gradcore as gc
from wildpose.errors import InvalidConfig, ShapeMismatch
from wildpose.network import (
    ModelConfig,
    ModelParams,
    backbone_forward,
    camera_head,
    embed,
    init_params,
    is_pretrained_name,
    lift,
    model_forward,
    parameter_shapes,
    split_latent,
)

from conftest import SMALL_MODEL


def zero_params(config, keep_bias=True):
    p = init_params(config, 0)
    return ModelParams({n: gc.parameter(t.data * 0 if (n.endswith("weight") or not keep_bias) else t.data)
                        for n, t in p.tensors.items()}, p.pretrained)


def test_default_latent_shape():
    cfg = ModelConfig()
    params = init_params(cfg, 0, names=[n for n in parameter_shapes(cfg) if is_pretrained_name(n)])
    inter, latent = backbone_forward(np.zeros((1, 1, 64, 64)), params, cfg)
    assert latent.shape == (1, 64, 16, 16)
    assert inter[0].shape == (1, 14, 16, 16)


def test_default_parameter_count_by_hand():
    # conv: out*in*9 + out per block; heads and dense layers: in*out + out
    conv = (16 * 1 * 9 + 16) + (32 * 16 * 9 + 32) + (64 * 32 * 9 + 64) + (64 * 64 * 9 + 64)
    inter = 14 * 64 + 14  # penultimate block has 64 channels
    emb = 64 * 16 * 16 * 1024 + 1024
    lift_layers = 4 * (1024 * 1024 + 1024) + (1024 * 42 + 42)
    cam = (1024 * 256 + 256) + (256 * 4 + 4)
    expected = conv + inter + emb + lift_layers + cam
    shapes = parameter_shapes(ModelConfig())
    assert sum(int(np.prod(s)) for s in shapes.values()) == expected
    assert init_params(ModelConfig(), 0).count() == expected


def test_zero_image_zero_bias_gives_zero_latent():
    p = init_params(SMALL_MODEL, 5)
    _, latent = backbone_forward(np.zeros((2, 1, 64, 64)), p, SMALL_MODEL)
    assert np.array_equal(latent.data, np.zeros_like(latent.data))


def test_gradient_reaches_every_backbone_parameter():
    p = init_params(SMALL_MODEL, 1)
    img = np.random.default_rng(0).uniform(size=(2, 1, 64, 64))
    inter, latent = backbone_forward(img, p, SMALL_MODEL)
    loss = gc.square(latent).mean() + gc.square(inter[0]).mean()
    grads = gc.backward(loss)
    for n in p.names():
        if is_pretrained_name(n):
            assert np.any(grads[p[n]] != 0), n
    assert np.all(np.isfinite(latent.data))


def test_split_latent_partition():
    x = gc.constant(np.random.default_rng(2).normal(size=(2, 64, 16, 16)))
    h, d = split_latent(x, ModelConfig())
    assert h.shape[1] == 14 and d.shape[1] == 50
    assert np.array_equal(gc.concat([h, d], axis=1).data, x.data)


def test_split_latent_other_sizes():
    cfg = ModelConfig(latent_channels=32, heatmap_channels=10, backbone_blocks=((16, 2), (32, 2)))
    h, d = split_latent(gc.constant(np.zeros((1, 32, 16, 16))), cfg)
    assert (h.shape[1], d.shape[1]) == (10, 22)
    with pytest.raises(ShapeMismatch):
        split_latent(gc.constant(np.zeros((1, 31, 16, 16))), cfg)


def test_init_is_deterministic_and_seed_dependent():
    a, b, c = init_params(SMALL_MODEL, 9), init_params(SMALL_MODEL, 9), init_params(SMALL_MODEL, 10)
    for n in a.names():
        assert np.array_equal(a[n].data, b[n].data)
    assert not np.array_equal(a["embed.weight"].data, c["embed.weight"].data)


def test_init_weight_bounds():
    p = init_params(SMALL_MODEL, 0)
    w = p["backbone.1.weight"].data
    assert np.abs(w).max() <= np.sqrt(6 / (8 * 9))
    assert np.all(p["lift.0.bias"].data == 0)


def test_camera_head_initial_output():
    p = zero_params(SMALL_MODEL)
    cam = camera_head(gc.constant(np.ones((3, SMALL_MODEL.z_dim))), p)
    np.testing.assert_array_equal(cam.data, np.tile([1.0, 1.0, 8.0, 8.0], (3, 1)))


def test_embed_is_relu_of_affine():
    p = init_params(SMALL_MODEL, 3)
    x = np.random.default_rng(3).normal(size=(2, 20, 16, 16))
    z = embed(gc.constant(x), p)
    ref = np.maximum(x.reshape(2, -1) @ p["embed.weight"].data + p["embed.bias"].data, 0)
    np.testing.assert_allclose(z.data, ref, rtol=1e-12)


def test_lift_matches_numpy_forward():
    p = init_params(SMALL_MODEL, 4)
    z = np.random.default_rng(4).uniform(size=(3, 32))
    h = z
    for i in range(4):
        h = np.maximum(h @ p[f"lift.{i}.weight"].data + p[f"lift.{i}.bias"].data, 0)
        if i == 1:
            h = h + z
    ref = h @ p["lift.out.weight"].data + p["lift.out.bias"].data
    ref[:, :3] = 0
    out = lift(gc.constant(z), p, SMALL_MODEL)
    np.testing.assert_allclose(out.data, ref, rtol=1e-12, atol=1e-12)
    assert not np.allclose(lift(gc.constant(z), p, SMALL_MODEL, residual=False).data, ref)


def test_root_output_is_pinned():
    p = init_params(SMALL_MODEL, 6)
    p.tensors["lift.out.bias"] = gc.parameter(np.full(42, 3.0))
    img = np.random.default_rng(6).uniform(size=(2, 1, 64, 64))
    out = model_forward(img, p, SMALL_MODEL)
    assert np.array_equal(out.joints3d().data[:, 0], np.zeros((2, 3)))
    grads = gc.backward(gc.square(out.p3d).sum())
    assert np.all(grads[p["lift.out.bias"]][:3] == 0)


def test_forward_units_and_projection():
    p = init_params(SMALL_MODEL, 7)
    img = np.random.default_rng(7).uniform(size=(2, 1, 64, 64))
    truth = np.random.default_rng(8).normal(scale=400, size=(2, 14, 3))
    out = model_forward(img, p, SMALL_MODEL, p3d_override=truth)
    np.testing.assert_allclose(out.joints3d().data, truth, rtol=1e-12)
    cam = out.cam.data
    unit = SMALL_MODEL.pose_unit_mm
    expect = cam[:, None, :2] * truth[..., :2] / unit + cam[:, None, 2:]
    np.testing.assert_allclose(out.p2d.data, expect, rtol=1e-10)


def test_shape_checks():
    p = init_params(SMALL_MODEL, 0)
    with pytest.raises(ShapeMismatch):
        model_forward(np.zeros((1, 1, 32, 32)), p, SMALL_MODEL)
    with pytest.raises(ShapeMismatch):
        lift(gc.constant(np.zeros((1, 31))), p, SMALL_MODEL)
    with pytest.raises(ShapeMismatch):
        camera_head(gc.constant(np.zeros((1, 31))), p)


@pytest.mark.parametrize("changes", [
    {"heatmap_channels": 64},
    {"kernel_size": 4},
    {"backbone_blocks": ((16, 2), (64, 1))},
    {"z_dim": 512},
    {"backbone_blocks": ((16, 3), (32, 2), (64, 1))},
    {"pose_unit_mm": 0.0},
])
def test_invalid_model_configs(changes):
    with pytest.raises(InvalidConfig):
        ModelConfig(**changes).validate()


def test_model_config_dict_round_trip():
    assert ModelConfig.from_dict(SMALL_MODEL.to_dict()) == SMALL_MODEL
    with pytest.raises(InvalidConfig):
        ModelConfig.from_dict({"latent_chanels": 3})
