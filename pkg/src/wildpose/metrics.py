"""3D pose metrics (MPJPE, PCK, AUC) under three alignment protocols."""
from __future__ import annotations

import csv
import enum
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import DegeneratePose, ShapeMismatch
from .skeleton import SkeletonModel, bone_lengths, perspective_correction, root_center

PCK_RADIUS_MM = 150.0
AUC_THRESHOLDS_MM = np.arange(5.0, 150.0 + 1e-9, 5.0)


class Protocol(str, enum.Enum):
    UNSCALED = "unscaled"
    GLOB_SCALED = "glob_scaled"
    PROCRUSTES = "procrustes"


def _pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.shape[-1] != 3:
        raise ShapeMismatch(f"pose shapes differ: {pred.shape} vs {gt.shape}")
    return pred, gt


def joint_errors(pred, gt) -> np.ndarray:
    pred, gt = _pair(pred, gt)
    return np.linalg.norm(pred - gt, axis=-1)


def mpjpe(pred, gt) -> float:
    return float(joint_errors(pred, gt).mean())


def pck(pred, gt, radius_mm: float = PCK_RADIUS_MM) -> float:
    if radius_mm <= 0:
        raise ValueError("radius must be positive")
    return float((joint_errors(pred, gt) < radius_mm).mean())


def auc(pred, gt, thresholds=AUC_THRESHOLDS_MM) -> float:
    err = joint_errors(pred, gt)
    return float(np.mean([(err < t).mean() for t in thresholds]))


def scale_global(pred, gt, skeleton: SkeletonModel) -> np.ndarray:
    """Scale each frame by (sum of gt bone lengths) / (sum of predicted ones)."""
    pred, gt = _pair(pred, gt)
    pred_total = bone_lengths(pred, skeleton).sum(axis=-1)
    if np.any(pred_total <= 0):
        raise DegeneratePose("predicted pose has zero total bone length")
    s = bone_lengths(gt, skeleton).sum(axis=-1) / pred_total
    return pred * np.asarray(s)[..., None, None]


def scale_least_squares(pred, gt) -> np.ndarray:
    """Alternative global scaling: the scalar minimising ||s * pred - gt||^2."""
    pred, gt = _pair(pred, gt)
    num = (pred * gt).sum(axis=(-1, -2))
    den = (pred * pred).sum(axis=(-1, -2))
    if np.any(den <= 0):
        raise DegeneratePose("predicted pose is all zeros")
    return pred * (num / den)[..., None, None]


def procrustes_align(pred, gt) -> np.ndarray:
    """Best similarity transform of ``pred`` onto ``gt`` (no reflections)."""
    pred, gt = _pair(pred, gt)
    if pred.ndim == 3:
        return np.stack([procrustes_align(p, g) for p, g in zip(pred, gt)])
    mu_p, mu_g = pred.mean(axis=0), gt.mean(axis=0)
    X, Y = pred - mu_p, gt - mu_g
    for name, A in (("prediction", X), ("ground truth", Y)):
        sv = np.linalg.svd(A, compute_uv=False)
        if sv[0] == 0 or sv[1] <= 1e-9 * sv[0]:
            raise DegeneratePose(f"{name} joints are collinear or coincident")
    U, S, Vt = np.linalg.svd(X.T @ Y)
    D = np.ones(3)
    if np.linalg.det(U @ Vt) < 0:
        D[-1] = -1.0
    R = (U * D) @ Vt  # maps row vectors: X @ R ~ Y
    scale = (S * D).sum() / (X * X).sum()
    return scale * X @ R + mu_g


def align(pred, gt, protocol: Protocol, skeleton: SkeletonModel) -> np.ndarray:
    protocol = Protocol(protocol)
    if protocol is Protocol.UNSCALED:
        return np.asarray(pred, dtype=np.float64)
    if protocol is Protocol.GLOB_SCALED:
        return scale_global(pred, gt, skeleton)
    return procrustes_align(pred, gt)


@dataclass
class EvalReport:
    protocol: str
    mpjpe_mm: float
    pck_150: float
    auc: float
    per_joint_mpjpe: list[float]
    pck_curve: list[tuple[float, float]]
    sample_count: int
    heatmap_error_px: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json() + "\n")
        with open(out / "pck_curve.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["threshold_mm", "pck"])
            for t, v in self.pck_curve:
                w.writerow([f"{t:g}", f"{v:.10g}"])


class MetricAccumulator:
    """Order-independent sums and counts over aligned frames."""

    def __init__(self, joint_count: int, thresholds=AUC_THRESHOLDS_MM):
        self.thresholds = np.asarray(thresholds, dtype=np.float64)
        self.err_sum = np.zeros(joint_count)
        self.frames = 0
        self.within150 = 0
        self.curve_counts = np.zeros(len(self.thresholds), dtype=np.int64)

    def add(self, aligned, gt) -> None:
        err = joint_errors(aligned, gt).reshape(-1, len(self.err_sum))
        self.err_sum += err.sum(axis=0)
        self.frames += err.shape[0]
        self.within150 += int((err < PCK_RADIUS_MM).sum())
        self.curve_counts += (err[..., None] < self.thresholds).sum(axis=(0, 1))

    def report(self, protocol: Protocol) -> EvalReport:
        n = max(self.frames, 1) * len(self.err_sum)
        per_joint = self.err_sum / max(self.frames, 1)
        curve = self.curve_counts / n
        return EvalReport(
            protocol=Protocol(protocol).value,
            mpjpe_mm=float(self.err_sum.sum() / n),
            pck_150=float(self.within150 / n),
            auc=float(curve.mean()),
            per_joint_mpjpe=[float(v) for v in per_joint],
            pck_curve=[(float(t), float(v)) for t, v in zip(self.thresholds, curve)],
            sample_count=self.frames,
        )


def evaluate_poses(pred, gt, protocol: Protocol, skeleton: SkeletonModel) -> EvalReport:
    pred, gt = _pair(pred, gt)
    acc = MetricAccumulator(skeleton.joint_count)
    acc.add(align(pred, gt, protocol, skeleton), gt)
    return acc.report(protocol)


@dataclass(frozen=True)
class CropInfo:
    """Per-frame crop centres (N, 2) and the full-image intrinsics."""

    centers_px: np.ndarray
    intrinsics: object  # skeleton.Intrinsics


def predict_dataset(dataset, checkpoint, batch_size: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Run the model over a dataset: returns ``(p3d[N, K, 3], latent heatmaps[N, K, H, H])``."""
    from .network import model_forward

    K = dataset.joint_count
    p3d, heat = [], []
    for start in range(0, len(dataset), batch_size):
        images = dataset.images[start : start + batch_size].astype(np.float64)
        out = model_forward(images, checkpoint.params, checkpoint.model_config)
        p3d.append(out.p3d.data.reshape(len(images), K, 3))
        heat.append(out.latent_heatmaps.data)
    if not p3d:
        H = dataset.config.heatmap_size
        return np.zeros((0, K, 3)), np.zeros((0, K, H, H))
    return np.concatenate(p3d), np.concatenate(heat)


def evaluate(dataset, checkpoint, protocol: Protocol, crop_info: CropInfo | None = None,
             predictions=None) -> EvalReport:
    """Evaluate a checkpoint on a dataset (Only2D truth comes from the sidecar).

    ``predictions`` (N, K, 3) bypasses the network, e.g. to score baselines.
    """
    from .errors import ConfigMismatch

    if checkpoint is not None and checkpoint.model_config.heatmap_channels != dataset.joint_count:
        raise ConfigMismatch(
            f"checkpoint predicts {checkpoint.model_config.heatmap_channels} joints, "
            f"dataset has {dataset.joint_count}"
        )
    gt = dataset.eval_truth()
    heat_err = None
    if predictions is None:
        predictions, heat = predict_dataset(dataset, checkpoint)
        if len(heat):
            from .synthdata import decode_heatmaps

            heat_err = float(np.linalg.norm(decode_heatmaps(heat) - dataset.gt_2d, axis=-1).mean())
    predictions = np.asarray(predictions, dtype=np.float64)
    skeleton = dataset.skeleton
    acc = MetricAccumulator(skeleton.joint_count)
    for i in range(len(gt)):
        p = predictions[i]
        if crop_info is not None:
            p = perspective_correction(p, crop_info.centers_px[i], crop_info.intrinsics, skeleton.root)
        p = root_center(p, skeleton.root)
        acc.add(align(p, gt[i], protocol, skeleton), gt[i])
    report = acc.report(protocol)
    report.heatmap_error_px = heat_err
    return report
