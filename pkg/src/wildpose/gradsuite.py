"""Finite-difference check of every differentiable op and every loss.

Shared by the ``gradcheck`` subcommand and the test suite.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import gradcore as gc
from .losses import (
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
from .network import ModelConfig, ModelParams, init_params, model_forward, parameter_shapes
from .skeleton import SkeletonModel, project_tensor

TINY_SKELETON = SkeletonModel((0, 0, 1), (0.0, 2.0, 1.5), ("root", "mid", "tip"))
TINY_MODEL = ModelConfig(
    input_size=8, latent_channels=5, heatmap_channels=3, latent_spatial=4, z_dim=6,
    lifting_width=6, lifting_layers=4, camera_hidden=4, backbone_blocks=((4, 2), (5, 1)), pose_unit_mm=1.0,
)


def away_from_zero(rng: np.random.Generator, shape, low: float = 0.2) -> np.ndarray:
    """Random values with |x| >= low, keeping relu/sqrt kinks out of the stencil."""
    mag = rng.uniform(low, 1.5, size=shape)
    return mag * rng.choice([-1.0, 1.0], size=shape)


@dataclass(frozen=True)
class Case:
    name: str
    fn: Callable[..., gc.Tensor]
    make_inputs: Callable[[np.random.Generator], list[np.ndarray]]


def _pair(shape):
    return lambda rng: [away_from_zero(rng, shape), away_from_zero(rng, shape)]


def _tiny_batch(rng: np.random.Generator) -> Batch:
    B, K, S = 4, 3, TINY_MODEL.latent_spatial
    gt3 = rng.normal(size=(B, K, 3))
    gt3[1] = np.nan  # an Only2D row
    return Batch(
        images=rng.normal(size=(B, 1, 8, 8)),
        gt_heatmaps=rng.uniform(size=(B, K, S, S)),
        gt_2d=rng.uniform(0, S, size=(B, K, 2)),
        gt_3d=gt3,
        ref_bone_lengths=np.tile([2.0, 1.5], (B, 1)),
        kinds=np.array([Kind.FULL3D, Kind.ONLY2D, Kind.FULL3D, Kind.FULL3D]),
    )


def _network_case() -> Case:
    names = list(parameter_shapes(TINY_MODEL))
    batch = _tiny_batch(np.random.default_rng(7))
    weights = LossWeights(w_3d=1.0, w_heatmap=0.5, w_intermediate=0.5, w_proj=0.1, w_bone3d=0.2, w_bone2d=0.3)

    def fn(*leaves):
        params = ModelParams(dict(zip(names, leaves)), frozenset())
        out = model_forward(batch.images, params, TINY_MODEL)
        return total_loss(out, batch, weights, TINY_SKELETON)[0]

    def make(rng):
        p = init_params(TINY_MODEL, int(rng.integers(2**31)))
        # nonzero biases so no relu sits exactly on its kink
        return [t.data + (rng.normal(scale=0.1, size=t.shape) if n.endswith(".bias") else 0.0)
                for n, t in p.tensors.items()]

    return Case("network+total_loss", fn, make)


def _cases() -> list[Case]:
    sk = TINY_SKELETON
    ops = [
        Case("add", lambda a, b: gc.square(a + b).sum(), _pair((3, 4))),
        Case("sub", lambda a, b: gc.square(a - b).sum(), _pair((3, 4))),
        Case("mul", lambda a, b: gc.square(a * b).sum(), _pair((3, 4))),
        Case("mul_broadcast", lambda a, b: gc.square(a * b).sum(),
             lambda rng: [away_from_zero(rng, (3, 4)), away_from_zero(rng, (1, 4))]),
        Case("square", lambda a: gc.square(a).sum(), lambda rng: [away_from_zero(rng, (5,))]),
        Case("sqrt", lambda a: gc.sqrt(gc.square(a) + 0.5).sum(), lambda rng: [away_from_zero(rng, (5,))]),
        Case("relu", lambda a: gc.square(gc.relu(a)).sum(), lambda rng: [away_from_zero(rng, (4, 3))]),
        Case("reshape", lambda a, b: gc.square(gc.reshape(a, (-1,)) * gc.reshape(b, (-1,))).sum(), _pair((2, 3))),
        Case("getitem", lambda a, b: gc.square(a[:, 1:] - b[:, :-1]).sum(), _pair((2, 4))),
        Case("take", lambda a: gc.square(gc.take(a, [0, 2, 2], axis=1)).sum(), lambda rng: [away_from_zero(rng, (2, 3))]),
        Case("concat", lambda a, b: gc.square(gc.concat([a, b], axis=1) * 2.0).mean(), _pair((2, 3))),
        Case("tsum", lambda a: gc.square(gc.tsum(a, axis=1)).sum(), lambda rng: [away_from_zero(rng, (3, 4))]),
        Case("mean", lambda a: gc.square(gc.mean(a)), lambda rng: [away_from_zero(rng, (3, 4))]),
        Case("linear", lambda x, w, b: gc.square(gc.linear(x, w, b)).sum(),
             lambda rng: [away_from_zero(rng, s) for s in ((3, 4), (4, 5), (5,))]),
        Case("conv2d", lambda x, k, b: gc.square(gc.conv2d(x, k, stride=2, pad=1, b=b)).sum(),
             lambda rng: [away_from_zero(rng, s) for s in ((2, 2, 5, 5), (3, 2, 3, 3), (3,))]),
        Case("mse", lambda a, b: gc.mse(a, b), _pair((3, 4))),
        Case("project", lambda p, c: gc.square(project_tensor(p, c)).sum(),
             lambda rng: [away_from_zero(rng, (2, 3, 3)), away_from_zero(rng, (2, 4))]),
    ]
    def vs_truth(name, loss, shape):
        # ground truth is data, not a leaf: only the prediction is checked
        gt = away_from_zero(np.random.default_rng(len(name)), shape)
        return Case(name, lambda p: loss(p, gt), lambda rng: [away_from_zero(rng, shape)])

    losses = [
        vs_truth("loss_3dpose", loss_3dpose, (2, 3, 3)),
        vs_truth("loss_heatmap", loss_heatmap, (2, 3, 4, 4)),
        vs_truth("loss_projection", loss_projection, (2, 3, 2)),
        vs_truth("loss_bone_3d", lambda p, g: loss_bone_3d(p, g, sk), (2, 3, 3)),
        Case("loss_bone_2d", lambda p: loss_bone_2d(p, [2.0, 1.5], sk), lambda rng: [away_from_zero(rng, (2, 3, 3))]),
    ]
    return ops + losses + [_network_case()]


CASES = _cases()


def run_suite(seed: int = 0, repeats: int = 3, h: float = 1e-5) -> dict[str, float]:
    """Worst relative error per case over ``repeats`` random draws."""
    worst = {}
    for case in CASES:
        rng = np.random.default_rng([seed, sum(map(ord, case.name))])
        worst[case.name] = max(gc.grad_check(case.fn, case.make_inputs(rng), h=h).worst for _ in range(repeats))
    return worst
