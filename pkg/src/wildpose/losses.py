"""Training objectives.

All terms are per-element means: 3D terms in mm^2, 2D terms in px^2.
Samples come in two kinds; Only2D samples never touch 3D ground truth.
"""
from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import gradcore as gc
from .errors import InvalidConfig, MissingAnnotation, ShapeMismatch
from .network import ForwardOutput
from .skeleton import SkeletonModel


class Kind(enum.IntEnum):
    FULL3D = 0
    ONLY2D = 1


@dataclass(frozen=True)
class LossWeights:
    # 3D terms are in mm^2 (about 1e5 at init), heatmap terms near 1e-2;
    # these defaults bring every weighted term within two orders of magnitude
    w_3d: float = 1e-3
    w_heatmap: float = 100.0
    w_intermediate: float = 100.0
    w_proj: float = 10.0
    w_bone3d: float = 5e-4
    w_bone2d: float = 1e-3

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not math.isfinite(v) or v < 0:
                raise InvalidConfig(f"loss weight {k} must be finite and non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> LossWeights:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfig(f"unknown loss weight keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AnnotatedSample:
    image: np.ndarray  # (C, S, S)
    gt_heatmaps: np.ndarray  # (K, H, H)
    gt_2d: np.ndarray  # (K, 2)
    gt_3d: np.ndarray | None  # (K, 3), root-relative; None for Only2D
    ref_bone_lengths: np.ndarray  # (K-1,)
    kind: Kind
    camera: np.ndarray | None = None  # (4,) ground-truth camera when known


@dataclass
class Batch:
    """Stacked samples.  ``gt_3d`` rows of Only2D samples hold NaN."""

    images: np.ndarray
    gt_heatmaps: np.ndarray
    gt_2d: np.ndarray
    gt_3d: np.ndarray
    ref_bone_lengths: np.ndarray
    kinds: np.ndarray

    @classmethod
    def from_samples(cls, samples: list[AnnotatedSample]) -> Batch:
        K = samples[0].gt_2d.shape[0]
        gt3 = np.stack([s.gt_3d if s.gt_3d is not None else np.full((K, 3), np.nan) for s in samples])
        return cls(
            np.stack([s.image for s in samples]).astype(np.float64),
            np.stack([s.gt_heatmaps for s in samples]).astype(np.float64),
            np.stack([s.gt_2d for s in samples]).astype(np.float64),
            gt3.astype(np.float64),
            np.stack([s.ref_bone_lengths for s in samples]).astype(np.float64),
            np.array([int(s.kind) for s in samples], dtype=np.uint8),
        )

    def __len__(self):
        return len(self.kinds)


def _joints(p3d: gc.Tensor) -> gc.Tensor:
    return gc.reshape(p3d, (p3d.shape[0], -1, 3)) if p3d.ndim == 2 else p3d


def loss_3dpose(p3d_pred: gc.Tensor, gt) -> gc.Tensor:
    gt = np.asarray(gt, dtype=np.float64)
    pred = _joints(gc.as_tensor(p3d_pred))
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"3D loss: prediction {pred.shape} vs ground truth {gt.shape}")
    return gc.mse(pred, gt)


def loss_heatmap(pred: gc.Tensor, gt) -> gc.Tensor:
    return gc.mse(gc.as_tensor(pred), np.asarray(gt, dtype=np.float64))


def loss_projection(p2d_pred: gc.Tensor, gt_2d) -> gc.Tensor:
    return gc.mse(gc.as_tensor(p2d_pred), np.asarray(gt_2d, dtype=np.float64))


def bone_vectors_tensor(joints: gc.Tensor, skeleton: SkeletonModel) -> gc.Tensor:
    return gc.take(joints, skeleton.children, axis=1) - gc.take(joints, skeleton.bone_parents, axis=1)


def loss_bone_3d(p3d_pred: gc.Tensor, gt, skeleton: SkeletonModel) -> gc.Tensor:
    gt = np.asarray(gt, dtype=np.float64)
    pred = _joints(gc.as_tensor(p3d_pred))
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"bone loss: prediction {pred.shape} vs ground truth {gt.shape}")
    gt_bones = gt[:, skeleton.children] - gt[:, skeleton.bone_parents]
    return gc.mse(bone_vectors_tensor(pred, skeleton), gt_bones)


def loss_bone_2d(p3d_pred: gc.Tensor, ref_lengths, skeleton: SkeletonModel) -> gc.Tensor:
    """MSE between predicted 3D bone lengths and reference lengths."""
    pred = _joints(gc.as_tensor(p3d_pred))
    bones = bone_vectors_tensor(pred, skeleton)
    lengths = gc.sqrt(gc.tsum(gc.square(bones), axis=2))
    ref = np.broadcast_to(np.asarray(ref_lengths, dtype=np.float64), lengths.shape)
    return gc.mse(lengths, ref)


def total_loss(
    out: ForwardOutput,
    batch: Batch,
    weights: LossWeights,
    skeleton: SkeletonModel,
) -> tuple[gc.Tensor, dict[str, float]]:
    """Weighted sum of the active terms; also returns each term's value."""
    kinds = np.asarray(batch.kinds)
    full = np.flatnonzero(kinds == Kind.FULL3D)
    only2d = np.flatnonzero(kinds == Kind.ONLY2D)
    terms: dict[str, tuple[float, gc.Tensor]] = {}

    if weights.w_heatmap > 0:
        terms["heatmap"] = (weights.w_heatmap, loss_heatmap(out.latent_heatmaps, batch.gt_heatmaps))
    if weights.w_intermediate > 0 and out.intermediate_heatmaps:
        inter = [loss_heatmap(h, batch.gt_heatmaps) for h in out.intermediate_heatmaps]
        acc = inter[0]
        for t in inter[1:]:
            acc = acc + t
        terms["intermediate"] = (weights.w_intermediate, acc * (1.0 / len(inter)))
    if weights.w_proj > 0:
        terms["proj"] = (weights.w_proj, loss_projection(out.p2d, batch.gt_2d))

    if len(full) and (weights.w_3d > 0 or weights.w_bone3d > 0):
        gt3 = batch.gt_3d[full]
        if not np.all(np.isfinite(gt3)):
            raise MissingAnnotation("Full3D sample without 3D ground truth")
        pred = gc.take(out.joints3d(), full, axis=0)
        if weights.w_3d > 0:
            terms["pose3d"] = (weights.w_3d, loss_3dpose(pred, gt3))
        if weights.w_bone3d > 0:
            terms["bone3d"] = (weights.w_bone3d, loss_bone_3d(pred, gt3, skeleton))
    if len(only2d) and weights.w_bone2d > 0:
        pred = gc.take(out.joints3d(), only2d, axis=0)
        terms["bone2d"] = (weights.w_bone2d, loss_bone_2d(pred, batch.ref_bone_lengths[only2d], skeleton))

    total = gc.constant(0.0)
    for w, t in terms.values():
        total = total + t * w
    return total, {k: float(t.data) for k, (_, t) in terms.items()}
