"""Kinematic skeleton, bone utilities and the weak-perspective camera.

Poses are plain ``(K, 3)`` / ``(K, 2)`` numpy arrays (or batches with a
leading axis).  3D units are millimetres in the camera frame (x right,
y down, z forward); 2D units are heatmap pixels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gradcore as gc
from .errors import DegenerateFit, NonUnitDirection, ValidationError


@dataclass(frozen=True)
class SkeletonModel:
    parents: tuple[int, ...]
    bone_lengths_mm: tuple[float, ...]
    joint_names: tuple[str, ...]
    root: int = 0

    def __post_init__(self):
        K = len(self.parents)
        if K < 1 or len(self.bone_lengths_mm) != K or len(self.joint_names) != K:
            raise ValidationError("skeleton fields must all have K entries")
        if self.parents[self.root] != self.root or self.bone_lengths_mm[self.root] != 0:
            raise ValidationError("root must be its own parent with zero bone length")
        for j in range(K):
            if j == self.root:
                continue
            if self.bone_lengths_mm[j] <= 0:
                raise ValidationError(f"bone length of joint {j} must be positive")
            # walk to the root; a cycle or a dangling index never gets there
            seen, k = set(), j
            while k != self.root:
                if k in seen or not 0 <= self.parents[k] < K:
                    raise ValidationError("parent relation must be a tree rooted at the root joint")
                seen.add(k)
                k = self.parents[k]

    @property
    def joint_count(self) -> int:
        return len(self.parents)

    @property
    def children(self) -> np.ndarray:
        """Non-root joints in index order; bone ``i`` ends at ``children[i]``."""
        return np.array([j for j in range(self.joint_count) if j != self.root], dtype=np.intp)

    @property
    def bone_parents(self) -> np.ndarray:
        return np.array([self.parents[j] for j in self.children], dtype=np.intp)

    def reference_lengths(self) -> np.ndarray:
        return np.asarray(self.bone_lengths_mm, dtype=np.float64)[self.children]

    def topological_order(self) -> list[int]:
        depth = {}

        def d(j):
            if j not in depth:
                depth[j] = 0 if j == self.root else d(self.parents[j]) + 1
            return depth[j]

        return sorted(range(self.joint_count), key=lambda j: (d(j), j))

    def to_dict(self) -> dict:
        return {
            "parents": list(self.parents),
            "bone_lengths_mm": list(self.bone_lengths_mm),
            "joint_names": list(self.joint_names),
            "root": self.root,
        }

    @classmethod
    def from_dict(cls, d: dict) -> SkeletonModel:
        return cls(
            tuple(int(p) for p in d["parents"]),
            tuple(float(x) for x in d["bone_lengths_mm"]),
            tuple(d["joint_names"]),
            int(d.get("root", 0)),
        )


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


# 14 joints; legs hang from the pelvis directly (no separate hip joints).
_JOINTS = [
    # name, parent, length (mm), rest direction
    ("pelvis", 0, 0.0, (0, 0, 1)),
    ("spine", 0, 250.0, (0, -1, 0)),
    ("neck", 1, 250.0, (0, -1, 0)),
    ("head", 2, 200.0, (0, -1, 0)),
    ("l_shoulder", 2, 160.0, (1, 0.15, 0)),
    ("l_elbow", 4, 270.0, (0.3, 1, 0)),
    ("l_wrist", 5, 240.0, (0.2, 1, 0)),
    ("r_shoulder", 2, 160.0, (-1, 0.15, 0)),
    ("r_elbow", 7, 270.0, (-0.3, 1, 0)),
    ("r_wrist", 8, 240.0, (-0.2, 1, 0)),
    ("l_knee", 0, 460.0, (0.25, 1, 0)),
    ("l_ankle", 10, 430.0, (0.05, 1, 0)),
    ("r_knee", 0, 460.0, (-0.25, 1, 0)),
    ("r_ankle", 12, 430.0, (-0.05, 1, 0)),
]


def default_skeleton() -> SkeletonModel:
    return SkeletonModel(
        parents=tuple(p for _, p, _, _ in _JOINTS),
        bone_lengths_mm=tuple(length for _, _, length, _ in _JOINTS),
        joint_names=tuple(n for n, _, _, _ in _JOINTS),
    )


def rest_directions(skeleton: SkeletonModel | None = None) -> np.ndarray:
    """Unit bone directions of the rest pose.

    The default skeleton stands upright; any other tree hangs straight down.
    """
    if skeleton is None or skeleton == default_skeleton():
        return np.stack([_unit(d) for _, _, _, d in _JOINTS])
    return np.tile([0.0, 1.0, 0.0], (skeleton.joint_count, 1))


def forward_kinematics(skeleton: SkeletonModel, bone_directions) -> np.ndarray:
    dirs = np.asarray(bone_directions, dtype=np.float64)
    K = skeleton.joint_count
    if dirs.shape != (K, 3):
        raise ValidationError(f"expected ({K}, 3) bone directions, got {dirs.shape}")
    norms = np.linalg.norm(dirs, axis=1)
    for j in range(K):
        if j != skeleton.root and abs(norms[j] - 1.0) > 1e-9:
            raise NonUnitDirection(f"direction of joint {j} has norm {norms[j]}")
    joints = np.zeros((K, 3))
    for j in skeleton.topological_order():
        if j == skeleton.root:
            continue
        joints[j] = joints[skeleton.parents[j]] + skeleton.bone_lengths_mm[j] * dirs[j]
    return joints


def root_center(pose, root: int = 0) -> np.ndarray:
    pose = np.asarray(pose, dtype=np.float64)
    out = pose - pose[..., root : root + 1, :]
    out[..., root, :] = 0.0
    return out


def bone_vectors(pose, skeleton: SkeletonModel) -> np.ndarray:
    pose = np.asarray(pose, dtype=np.float64)
    return pose[..., skeleton.children, :] - pose[..., skeleton.bone_parents, :]


def bone_lengths(pose, skeleton: SkeletonModel) -> np.ndarray:
    return np.linalg.norm(bone_vectors(pose, skeleton), axis=-1)


@dataclass(frozen=True)
class CameraParams:
    alpha_x: float
    alpha_y: float
    c_x: float
    c_y: float

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha_x, self.alpha_y, self.c_x, self.c_y])

    @classmethod
    def from_array(cls, a) -> CameraParams:
        a = np.asarray(a, dtype=np.float64).reshape(4)
        return cls(*map(float, a))


def project_weak_perspective(pose, camera) -> np.ndarray:
    """(alpha_x * x + c_x, alpha_y * y + c_y) per joint; z is dropped.

    ``camera`` is a ``CameraParams`` or a ``(..., 4)`` array matching the
    batch axes of ``pose``.
    """
    pose = np.asarray(pose, dtype=np.float64)
    c = camera.as_array() if isinstance(camera, CameraParams) else np.asarray(camera, dtype=np.float64)
    c = c[..., None, :]
    return pose[..., :2] * c[..., :2] + c[..., 2:]


def project_tensor(p3d: gc.Tensor, cam: gc.Tensor) -> gc.Tensor:
    """Graph version of the projection: ``p3d[B, K, 3]``, ``cam[B, 4]`` -> ``[B, K, 2]``."""
    B = cam.shape[0]
    alpha = gc.reshape(cam[:, 0:2], (B, 1, 2))
    center = gc.reshape(cam[:, 2:4], (B, 1, 2))
    return p3d[:, :, 0:2] * alpha + center


def fit_weak_perspective(p3, p2) -> CameraParams:
    """Per-axis least-squares line fit of 2D coordinates against 3D x / y."""
    p3 = np.asarray(p3, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    params = []
    for axis in (0, 1):
        u, v = p3[:, axis], p2[:, axis]
        du = u - u.mean()
        var = np.dot(du, du)
        if var <= 1e-12 * max(1.0, np.dot(u, u)):
            raise DegenerateFit(f"axis {axis} has no spread in the 3D pose")
        slope = np.dot(du, v - v.mean()) / var
        params.append((slope, v.mean() - slope * u.mean()))
    (ax, cx), (ay, cy) = params
    return CameraParams(float(ax), float(ay), float(cx), float(cy))


def rotation_between(a, b) -> np.ndarray:
    """Rotation matrix taking unit vector ``a`` onto unit vector ``b``."""
    a, b = _unit(a), _unit(b)
    axis = np.cross(a, b)
    s = np.linalg.norm(axis)
    c = float(np.clip(np.dot(a, b), -1.0, 1.0))
    if s < 1e-15:
        if c > 0:
            return np.eye(3)
        # antiparallel: half turn about any axis orthogonal to a
        ortho = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(ortho) < 1e-8:
            ortho = np.cross(a, [0.0, 1.0, 0.0])
        return axis_angle_matrix(ortho, np.pi)
    return axis_angle_matrix(axis, np.arctan2(s, c))


def axis_angle_matrix(axis, angle: float) -> np.ndarray:
    k = _unit(axis)
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * kx + (1 - np.cos(angle)) * (kx @ kx)


@dataclass(frozen=True)
class Intrinsics:
    focal_x: float
    focal_y: float
    principal_x: float
    principal_y: float


def perspective_correction(pose, crop_center_px, intrinsics: Intrinsics, root: int = 0) -> np.ndarray:
    """Rotate a crop-frame pose into the full camera frame.

    The crop's virtual optical axis is the ray through ``crop_center_px``;
    the pose is rotated by the rotation taking (0, 0, 1) onto that ray.
    """
    if intrinsics.focal_x <= 0 or intrinsics.focal_y <= 0:
        raise ValidationError("focal length must be positive")
    u, v = np.asarray(crop_center_px, dtype=np.float64)
    ray = np.array(
        [
            (u - intrinsics.principal_x) / intrinsics.focal_x,
            (v - intrinsics.principal_y) / intrinsics.focal_y,
            1.0,
        ]
    )
    R = rotation_between([0.0, 0.0, 1.0], ray)
    out = np.asarray(pose, dtype=np.float64) @ R.T
    return root_center(out, root)
