"""Procedural training data: jittered skeleton poses seen by a weak-perspective
camera, rendered as stick-figure images plus Gaussian joint heatmaps.

Heatmap pixel ``(u, v)`` has its centre at coordinate ``(u, v)``; image
coordinates are heatmap coordinates times ``image_size / heatmap_size``.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import CameraSamplingExhausted, FormatError, InvalidConfig, IoError
from .losses import AnnotatedSample, Batch, Kind
from .skeleton import (
    SkeletonModel,
    axis_angle_matrix,
    bone_lengths,
    default_skeleton,
    forward_kinematics,
    project_weak_perspective,
    rest_directions,
    root_center,
)

MAGIC = b"PLD1"
SIDECAR_MAGIC = b"PLD1S"
MAX_CAMERA_TRIES = 100


@dataclass(frozen=True)
class GenConfig:
    sample_count: int = 2000
    seed: int = 42
    image_size: int = 64
    heatmap_size: int = 16
    sigma_px: float = 0.75
    angle_jitter: float = 1.0
    camera_alpha_range: tuple[float, float] = (0.006, 0.009)
    camera_center_jitter_px: float = 1.5
    fraction_only2d: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, "camera_alpha_range", tuple(float(a) for a in self.camera_alpha_range))
        lo, hi = self.camera_alpha_range
        if self.sample_count < 0:
            raise InvalidConfig("sample_count must be non-negative")
        if not 0.0 <= self.fraction_only2d <= 1.0:
            raise InvalidConfig("fraction_only2d must lie in [0, 1]")
        if self.sigma_px <= 0:
            raise InvalidConfig("sigma_px must be positive")
        if lo <= 0 or hi < lo:
            raise InvalidConfig("camera_alpha_range must satisfy 0 < lo <= hi")
        if self.image_size % self.heatmap_size:
            raise InvalidConfig("image_size must be a multiple of heatmap_size")
        if self.angle_jitter < 0 or self.camera_center_jitter_px < 0:
            raise InvalidConfig("jitter values must be non-negative")

    @property
    def upscale(self) -> int:
        return self.image_size // self.heatmap_size

    @property
    def only2d_count(self) -> int:
        return int(math.floor(self.sample_count * self.fraction_only2d + 0.5))

    @property
    def full3d_count(self) -> int:
        return self.sample_count - self.only2d_count

    def to_dict(self) -> dict:
        d = asdict(self)
        d["camera_alpha_range"] = list(self.camera_alpha_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> GenConfig:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfig(f"unknown generator config keys: {sorted(unknown)}")
        return cls(**d)


def sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def random_unit(rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(3)
    return v / np.linalg.norm(v)


def sample_pose(skeleton: SkeletonModel, rng: np.random.Generator, angle_jitter: float = 1.0) -> np.ndarray:
    rest = rest_directions(skeleton)
    dirs = rest.copy()
    for j in skeleton.children:
        axis = random_unit(rng)
        angle = rng.uniform(0.0, angle_jitter)
        d = axis_angle_matrix(axis, angle) @ rest[j]
        dirs[j] = d / np.linalg.norm(d)
    return root_center(forward_kinematics(skeleton, dirs), skeleton.root)


def inside_grid(p2, size: int) -> np.ndarray:
    p2 = np.asarray(p2)
    return np.all((p2 >= 0) & (p2 < size), axis=-1)


def sample_camera(rng: np.random.Generator, config: GenConfig, pose=None) -> np.ndarray:
    """Draw (alpha, alpha, c_x, c_y); with ``pose`` given, redraw until at
    least 90% of its joints project inside the heatmap grid."""
    lo, hi = config.camera_alpha_range
    half, jit = config.heatmap_size / 2.0, config.camera_center_jitter_px
    for _ in range(MAX_CAMERA_TRIES):
        alpha = rng.uniform(lo, hi)
        cx = half + rng.uniform(-jit, jit)
        cy = half + rng.uniform(-jit, jit)
        cam = np.array([alpha, alpha, cx, cy])
        if pose is None:
            return cam
        need = math.ceil(0.9 * len(pose))
        if inside_grid(project_weak_perspective(pose, cam), config.heatmap_size).sum() >= need:
            return cam
    raise CameraSamplingExhausted(f"no acceptable camera after {MAX_CAMERA_TRIES} draws")


def render_heatmaps(p2, size: int = 16, sigma: float = 0.75) -> np.ndarray:
    """Peak-1 (unnormalised) Gaussian per joint, evaluated at pixel centres."""
    p2 = np.asarray(p2, dtype=np.float64)
    grid = np.arange(size, dtype=np.float64)
    dx = grid[None, None, :] - p2[:, 0, None, None]
    dy = grid[None, :, None] - p2[:, 1, None, None]
    return np.exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma))


def decode_heatmap(hmap) -> tuple[np.ndarray, bool]:
    """Argmax plus 3x3 weighted-centroid refinement.

    Returns ``((x, y), degenerate)``; an all-non-positive map is degenerate.
    """
    hmap = np.asarray(hmap, dtype=np.float64)
    H, W = hmap.shape
    flat = int(np.argmax(hmap))  # first occurrence = lowest row-major index
    row, col = divmod(flat, W)
    r0, r1 = max(row - 1, 0), min(row + 2, H)
    c0, c1 = max(col - 1, 0), min(col + 2, W)
    w = np.clip(hmap[r0:r1, c0:c1], 0.0, None)
    total = w.sum()
    if total <= 0:
        return np.array([float(col), float(row)]), True
    ys, xs = np.mgrid[r0:r1, c0:c1]
    return np.array([(w * xs).sum() / total, (w * ys).sum() / total]), False


def decode_heatmaps(hmaps) -> np.ndarray:
    """Decode a ``(..., K, H, W)`` stack to ``(..., K, 2)``."""
    hmaps = np.asarray(hmaps)
    flat = hmaps.reshape(-1, *hmaps.shape[-2:])
    out = np.array([decode_heatmap(m)[0] for m in flat])
    return out.reshape(*hmaps.shape[:-2], 2)


def _segment_distance(px, py, a, b) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0:
        t = np.zeros_like(px)
    else:
        t = np.clip(((px - a[0]) * ab[0] + (py - a[1]) * ab[1]) / denom, 0.0, 1.0)
    return np.hypot(px - (a[0] + t * ab[0]), py - (a[1] + t * ab[1]))


def render_image(p2_image, skeleton: SkeletonModel, image_size: int = 64) -> np.ndarray:
    """Anti-aliased stick figure; returns a ``(1, S, S)`` array in [0, 1]."""
    p2 = np.asarray(p2_image, dtype=np.float64)
    py, px = np.mgrid[0:image_size, 0:image_size].astype(np.float64)
    img = np.zeros((image_size, image_size))
    for child, parent in zip(skeleton.children, skeleton.bone_parents):
        d = _segment_distance(px, py, p2[parent], p2[child])
        np.maximum(img, np.clip(1.0 - d / 2.0, 0.0, 1.0), out=img)
    for j in range(len(p2)):
        img[np.hypot(px - p2[j, 0], py - p2[j, 1]) <= 1.5] = 1.0
    return img[None]


def generate_sample(config: GenConfig, skeleton: SkeletonModel, index: int) -> tuple[AnnotatedSample, np.ndarray]:
    """Sample ``index`` of the dataset and its 3D truth (kept even for Only2D)."""
    rng = sample_rng(config.seed, index)
    pose = sample_pose(skeleton, rng, config.angle_jitter)
    cam = sample_camera(rng, config, pose)
    p2 = project_weak_perspective(pose, cam)
    heat = render_heatmaps(p2, config.heatmap_size, config.sigma_px)
    image = render_image(p2 * config.upscale, skeleton, config.image_size)
    kind = Kind.FULL3D if index < config.full3d_count else Kind.ONLY2D
    if kind == Kind.FULL3D or config.full3d_count == 0:
        ref = bone_lengths(pose, skeleton)
    else:
        # bone lengths of a randomly chosen 3D-labelled subject
        donor = int(rng.integers(config.full3d_count))
        donor_pose = sample_pose(skeleton, sample_rng(config.seed, donor), config.angle_jitter)
        ref = bone_lengths(donor_pose, skeleton)
    sample = AnnotatedSample(
        image=image,
        gt_heatmaps=heat,
        gt_2d=p2,
        gt_3d=pose if kind == Kind.FULL3D else None,
        ref_bone_lengths=ref,
        kind=kind,
        camera=cam,
    )
    return sample, pose


def record_dtype(image_size: int, heatmap_size: int, K: int) -> np.dtype:
    return np.dtype(
        [
            ("image", "<f4", (image_size * image_size,)),
            ("heatmaps", "<f4", (K * heatmap_size * heatmap_size,)),
            ("gt_2d", "<f4", (K * 2,)),
            ("gt_3d", "<f4", (K * 3,)),
            ("camera", "<f4", (4,)),
            ("kind", "u1"),
            ("ref_bone_lengths", "<f4", (K - 1,)),
        ]
    )


@dataclass
class Dataset:
    config: GenConfig
    skeleton: SkeletonModel
    images: np.ndarray  # (N, 1, S, S) float32
    heatmaps: np.ndarray  # (N, K, H, H)
    gt_2d: np.ndarray  # (N, K, 2)
    gt_3d: np.ndarray  # (N, K, 3), NaN for Only2D
    cameras: np.ndarray  # (N, 4)
    kinds: np.ndarray  # (N,) uint8
    ref_bone_lengths: np.ndarray  # (N, K-1)
    truth_3d: np.ndarray | None = field(default=None)  # sidecar, (N, K, 3)

    def __len__(self):
        return len(self.kinds)

    @property
    def joint_count(self) -> int:
        return self.skeleton.joint_count

    def indices_of(self, kind: Kind) -> np.ndarray:
        return np.flatnonzero(self.kinds == kind)

    def batch(self, indices) -> Batch:
        idx = np.asarray(indices, dtype=np.intp)
        return Batch(
            self.images[idx].astype(np.float64),
            self.heatmaps[idx].astype(np.float64),
            self.gt_2d[idx].astype(np.float64),
            self.gt_3d[idx].astype(np.float64),
            self.ref_bone_lengths[idx].astype(np.float64),
            self.kinds[idx].copy(),
        )

    def eval_truth(self) -> np.ndarray:
        """3D truth for every sample, taking withheld poses from the sidecar."""
        if self.truth_3d is not None:
            return self.truth_3d.astype(np.float64)
        if np.any(self.kinds == Kind.ONLY2D):
            raise IoError("dataset has Only2D samples but no sidecar was loaded")
        return self.gt_3d.astype(np.float64)


def sidecar_path(path) -> Path:
    return Path(str(path) + "s")


def _manifest(config: GenConfig, skeleton: SkeletonModel) -> bytes:
    body = {"format": "PLD1", "gen_config": config.to_dict(), "skeleton": skeleton.to_dict()}
    return json.dumps(body, sort_keys=True, separators=(",", ":")).encode()


def build_records(config: GenConfig, skeleton: SkeletonModel) -> tuple[np.ndarray, np.ndarray]:
    K = skeleton.joint_count
    recs = np.zeros(config.sample_count, dtype=record_dtype(config.image_size, config.heatmap_size, K))
    truth = np.zeros((config.sample_count, K * 3), dtype="<f4")
    for i in range(config.sample_count):
        s, pose = generate_sample(config, skeleton, i)
        r = recs[i]
        r["image"] = s.image.reshape(-1)
        r["heatmaps"] = s.gt_heatmaps.reshape(-1)
        r["gt_2d"] = s.gt_2d.reshape(-1)
        r["gt_3d"] = s.gt_3d.reshape(-1) if s.gt_3d is not None else np.nan
        r["camera"] = s.camera
        r["kind"] = int(s.kind)
        r["ref_bone_lengths"] = s.ref_bone_lengths
        truth[i] = pose.reshape(-1)
    return recs, truth


def generate_dataset(config: GenConfig, skeleton: SkeletonModel | None, path) -> Path:
    """Write the dataset to ``path`` and the 3D truth sidecar next to it."""
    skeleton = skeleton or default_skeleton()
    recs, truth = build_records(config, skeleton)
    manifest = _manifest(config, skeleton)
    side_manifest = json.dumps(
        {"format": "PLD1S", "sample_count": config.sample_count, "joint_count": skeleton.joint_count},
        sort_keys=True,
        separators=(",", ":"),
    ).encode()
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            f.write(MAGIC + struct.pack("<I", len(manifest)) + manifest)
            f.write(recs.tobytes())
        with open(sidecar_path(path), "wb") as f:
            f.write(SIDECAR_MAGIC + struct.pack("<I", len(side_manifest)) + side_manifest)
            f.write(truth.tobytes())
    except OSError as e:
        raise IoError(f"cannot write dataset {path}: {e}") from e
    return path


def _read_header(buf: bytes, magic: bytes, path) -> tuple[dict, int]:
    if buf[: len(magic)] != magic or len(buf) < len(magic) + 4:
        raise FormatError(f"{path}: bad magic")
    (n,) = struct.unpack_from("<I", buf, len(magic))
    start = len(magic) + 4
    if len(buf) < start + n:
        raise FormatError(f"{path}: truncated manifest")
    try:
        meta = json.loads(buf[start : start + n])
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: manifest is not JSON") from e
    return meta, start + n


def load_dataset(path, with_sidecar: bool = True) -> Dataset:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as e:
        raise IoError(f"cannot read dataset {path}: {e}") from e
    meta, offset = _read_header(buf, MAGIC, path)
    config = GenConfig.from_dict(meta["gen_config"])
    skeleton = SkeletonModel.from_dict(meta["skeleton"])
    K, S, H, N = skeleton.joint_count, config.image_size, config.heatmap_size, config.sample_count
    dt = record_dtype(S, H, K)
    if len(buf) - offset != N * dt.itemsize:
        raise FormatError(f"{path}: expected {N} records")
    recs = np.frombuffer(buf, dtype=dt, count=N, offset=offset)
    truth = None
    side = sidecar_path(path)
    if with_sidecar and side.exists():
        sbuf = side.read_bytes()
        smeta, soff = _read_header(sbuf, SIDECAR_MAGIC, side)
        if smeta.get("sample_count") != N or smeta.get("joint_count") != K:
            raise FormatError(f"{side}: sidecar does not match dataset")
        if len(sbuf) - soff != N * K * 3 * 4:
            raise FormatError(f"{side}: truncated sidecar")
        truth = np.frombuffer(sbuf, dtype="<f4", count=N * K * 3, offset=soff).reshape(N, K, 3)
    return Dataset(
        config=config,
        skeleton=skeleton,
        images=recs["image"].reshape(N, 1, S, S),
        heatmaps=recs["heatmaps"].reshape(N, K, H, H),
        gt_2d=recs["gt_2d"].reshape(N, K, 2),
        gt_3d=recs["gt_3d"].reshape(N, K, 3),
        cameras=recs["camera"].reshape(N, 4),
        kinds=recs["kind"].copy(),
        ref_bone_lengths=recs["ref_bone_lengths"].reshape(N, K - 1),
        truth_3d=truth,
    )
