import numpy as np
import pytest

from wildpose import gradcore as gc
from wildpose.errors import InvalidConfig, MissingAnnotation, ShapeMismatch
from wildpose.losses import (
    Batch,
    Kind,
    LossWeights,
    loss_3dpose,
    loss_bone_2d,
    loss_bone_3d,
    loss_heatmap,
    loss_projection,
    total_loss,
)
from wildpose.network import init_params, model_forward
from wildpose.skeleton import default_skeleton

from conftest import SMALL_MODEL

SK = default_skeleton()
ALL_ONES = LossWeights(1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
ZERO = LossWeights(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


def loop_mse(a, b):
    a, b = np.ravel(a), np.ravel(b)
    total = 0.0
    for x, y in zip(a, b):
        total += (x - y) ** 2
    return total / len(a)


def loop_bones(pose):
    return np.array([pose[c] - pose[SK.parents[c]] for c in range(SK.joint_count) if c != SK.root])


def test_3d_pose_loss_oracle():
    rng = np.random.default_rng(0)
    p, g = rng.normal(size=(2, 14, 3)), rng.normal(size=(2, 14, 3))
    assert loss_3dpose(gc.constant(p.reshape(2, -1)), g).item() == pytest.approx(loop_mse(p, g), rel=1e-12)
    assert loss_3dpose(gc.constant(g), g).item() == 0.0
    with pytest.raises(ShapeMismatch):
        loss_3dpose(gc.constant(p[:, :13]), g)


def test_heatmap_and_projection_oracles():
    rng = np.random.default_rng(1)
    a, b = rng.uniform(size=(2, 14, 4, 4)), rng.uniform(size=(2, 14, 4, 4))
    assert loss_heatmap(gc.constant(a), b).item() == pytest.approx(loop_mse(a, b), rel=1e-12)
    c, d = rng.normal(size=(3, 14, 2)), rng.normal(size=(3, 14, 2))
    assert loss_projection(gc.constant(c), d).item() == pytest.approx(loop_mse(c, d), rel=1e-12)


def test_bone_losses_oracle():
    rng = np.random.default_rng(2)
    p, g = rng.normal(size=(2, 14, 3)), rng.normal(size=(2, 14, 3))
    pb = np.stack([loop_bones(x) for x in p])
    gb = np.stack([loop_bones(x) for x in g])
    assert loss_bone_3d(gc.constant(p), g, SK).item() == pytest.approx(loop_mse(pb, gb), rel=1e-12)
    ref = rng.uniform(100, 400, size=(2, 13))
    lengths = np.linalg.norm(pb, axis=-1)
    assert loss_bone_2d(gc.constant(p), ref, SK).item() == pytest.approx(loop_mse(lengths, ref), rel=1e-12)


def test_bone_3d_loss_translation_invariant():
    rng = np.random.default_rng(3)
    p, g = rng.normal(size=(1, 14, 3)), rng.normal(size=(1, 14, 3))
    a = loss_bone_3d(gc.constant(p), g, SK).item()
    b = loss_bone_3d(gc.constant(p + 50.0), g, SK).item()
    assert a == pytest.approx(b, rel=1e-10)


def make_batch(kinds):
    rng = np.random.default_rng(4)
    B = len(kinds)
    gt3 = rng.normal(scale=300, size=(B, 14, 3))
    gt3[np.asarray(kinds) == Kind.ONLY2D] = np.nan
    return Batch(
        images=rng.uniform(size=(B, 1, 64, 64)),
        gt_heatmaps=rng.uniform(size=(B, 14, 16, 16)),
        gt_2d=rng.uniform(0, 16, size=(B, 14, 2)),
        gt_3d=gt3,
        ref_bone_lengths=rng.uniform(100, 400, size=(B, 13)),
        kinds=np.asarray(kinds, dtype=np.uint8),
    )


@pytest.fixture(scope="module")
def params():
    return init_params(SMALL_MODEL, 11)


def test_total_loss_full3d_sums_five_terms(params):
    batch = make_batch([Kind.FULL3D])
    out = model_forward(batch.images, params, SMALL_MODEL)
    total, terms = total_loss(out, batch, ALL_ONES, SK)
    p = out.joints3d().data
    oracle = (
        loop_mse(p, batch.gt_3d)
        + loop_mse(np.stack([loop_bones(p[0])]), np.stack([loop_bones(batch.gt_3d[0])]))
        + loop_mse(out.latent_heatmaps.data, batch.gt_heatmaps)
        + loop_mse(out.intermediate_heatmaps[0].data, batch.gt_heatmaps)
        + loop_mse(out.p2d.data, batch.gt_2d)
    )
    assert total.item() == pytest.approx(oracle, rel=1e-10)
    assert set(terms) == {"pose3d", "bone3d", "heatmap", "intermediate", "proj"}


def test_total_loss_only2d_never_reads_3d(params):
    batch = make_batch([Kind.ONLY2D, Kind.ONLY2D])
    out = model_forward(batch.images, params, SMALL_MODEL)
    total, terms = total_loss(out, batch, ALL_ONES, SK)
    assert np.isfinite(total.item())
    assert set(terms) == {"heatmap", "intermediate", "proj", "bone2d"}
    lengths = np.linalg.norm(np.stack([loop_bones(x) for x in out.joints3d().data]), axis=-1)
    assert terms["bone2d"] == pytest.approx(loop_mse(lengths, batch.ref_bone_lengths), rel=1e-10)


def test_total_loss_mixed_batch_uses_rows_of_each_kind(params):
    batch = make_batch([Kind.ONLY2D, Kind.FULL3D, Kind.FULL3D])
    out = model_forward(batch.images, params, SMALL_MODEL)
    _, terms = total_loss(out, batch, ALL_ONES, SK)
    p = out.joints3d().data
    assert terms["pose3d"] == pytest.approx(loop_mse(p[1:], batch.gt_3d[1:]), rel=1e-10)
    grads = gc.backward(total_loss(out, batch, ALL_ONES, SK)[0])
    assert all(np.all(np.isfinite(g)) for g in (grads[params[n]] for n in params.names()))


def test_total_loss_zero_weights(params):
    batch = make_batch([Kind.FULL3D, Kind.ONLY2D])
    out = model_forward(batch.images, params, SMALL_MODEL)
    total, terms = total_loss(out, batch, ZERO, SK)
    assert total.item() == 0.0 and terms == {}


def test_full3d_without_labels_is_rejected(params):
    batch = make_batch([Kind.FULL3D])
    batch.gt_3d[0, 3, 1] = np.nan
    out = model_forward(batch.images, params, SMALL_MODEL)
    with pytest.raises(MissingAnnotation):
        total_loss(out, batch, ALL_ONES, SK)


def test_loss_weights_validation():
    with pytest.raises(InvalidConfig):
        LossWeights(w_3d=-1.0)
    with pytest.raises(InvalidConfig):
        LossWeights(w_proj=float("nan"))
    with pytest.raises(InvalidConfig):
        LossWeights.from_dict({"w_3D": 1.0})
    assert LossWeights.from_dict(LossWeights().to_dict()) == LossWeights()
