"""Backbone, split latent, lifting network and camera head.

    image -> conv blocks -> F_3D = [h_2D | d] -> z -> {lift -> p3d, camera -> c}
    p2d = weak-perspective projection of p3d with c
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field, asdict

import numpy as np

from . import gradcore as gc
from .errors import InvalidConfig, ShapeMismatch
from .skeleton import project_tensor

@dataclass(frozen=True)
class ModelConfig:
    input_size: int = 64
    input_channels: int = 1
    latent_channels: int = 64
    heatmap_channels: int = 14
    latent_spatial: int = 16
    z_dim: int = 1024
    lifting_width: int = 1024
    lifting_layers: int = 4
    camera_hidden: int = 256
    kernel_size: int = 3
    pose_unit_mm: float = 1000.0
    backbone_blocks: tuple[tuple[int, int], ...] = ((16, 2), (32, 2), (64, 1), (64, 1))

    def __post_init__(self):
        object.__setattr__(self, "backbone_blocks", tuple(tuple(int(v) for v in b) for b in self.backbone_blocks))

    def validate(self) -> ModelConfig:
        positive = ("input_size", "input_channels", "latent_channels", "heatmap_channels",
                    "latent_spatial", "z_dim", "lifting_width", "camera_hidden")
        for name in positive:
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be positive")
        if self.heatmap_channels >= self.latent_channels:
            raise InvalidConfig("heatmap_channels must be smaller than latent_channels")
        if not self.pose_unit_mm > 0:
            raise InvalidConfig("pose_unit_mm must be positive")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise InvalidConfig("kernel_size must be a positive odd number")
        if len(self.backbone_blocks) < 2:
            raise InvalidConfig("need at least two backbone blocks (penultimate head + latent)")
        if self.backbone_blocks[-1][0] != self.latent_channels:
            raise InvalidConfig("last backbone block must output latent_channels")
        if any(s not in (1, 2) or c < 1 for c, s in self.backbone_blocks):
            raise InvalidConfig("block strides must be 1 or 2 and channels positive")
        if int(np.prod([s for _, s in self.backbone_blocks])) * self.latent_spatial != self.input_size:
            raise InvalidConfig("product of strides times latent_spatial must equal input_size")
        if self.lifting_layers < 2:
            raise InvalidConfig("lifting needs at least two layers for the residual connection")
        if self.z_dim != self.lifting_width:
            raise InvalidConfig("residual connection needs z_dim == lifting_width")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["backbone_blocks"] = [list(b) for b in self.backbone_blocks]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfig(f"unknown model config keys: {sorted(unknown)}")
        d = dict(d)
        if "backbone_blocks" in d:
            d["backbone_blocks"] = tuple(tuple(b) for b in d["backbone_blocks"])
        return cls(**d)


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every parameter, in canonical order."""
    config.validate()
    K, S = config.heatmap_channels, config.latent_spatial
    shapes: dict[str, tuple[int, ...]] = {}
    c_in = config.input_channels
    for i, (c_out, _) in enumerate(config.backbone_blocks):
        shapes[f"backbone.{i}.weight"] = (c_out, c_in, config.kernel_size, config.kernel_size)
        shapes[f"backbone.{i}.bias"] = (c_out,)
        c_in = c_out
    c_pen = config.backbone_blocks[-2][0]
    shapes["inter_head.weight"] = (K, c_pen, 1, 1)
    shapes["inter_head.bias"] = (K,)
    shapes["embed.weight"] = (config.latent_channels * S * S, config.z_dim)
    shapes["embed.bias"] = (config.z_dim,)
    width = config.z_dim
    for i in range(config.lifting_layers):
        shapes[f"lift.{i}.weight"] = (width, config.lifting_width)
        shapes[f"lift.{i}.bias"] = (config.lifting_width,)
        width = config.lifting_width
    shapes["lift.out.weight"] = (config.lifting_width, 3 * K)
    shapes["lift.out.bias"] = (3 * K,)
    shapes["cam.hidden.weight"] = (config.z_dim, config.camera_hidden)
    shapes["cam.hidden.bias"] = (config.camera_hidden,)
    shapes["cam.out.weight"] = (config.camera_hidden, 4)
    shapes["cam.out.bias"] = (4,)
    return shapes


def is_pretrained_name(name: str) -> bool:
    """Parameters trained during 2D pre-training (backbone and its heads)."""
    return name.startswith(("backbone.", "inter_head."))


@dataclass
class ModelParams:
    tensors: dict[str, gc.Tensor] = field(default_factory=dict)
    pretrained: frozenset[str] = frozenset()

    def __getitem__(self, name: str) -> gc.Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self) -> list[str]:
        return list(self.tensors)

    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def subset(self, predicate) -> ModelParams:
        keep = {k: v for k, v in self.tensors.items() if predicate(k)}
        return ModelParams(keep, frozenset(self.pretrained & set(keep)))


def _param_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def init_params(config: ModelConfig, seed: int, names=None) -> ModelParams:
    """Fan-in scaled uniform weights, zero biases; each tensor seeded by (seed, name).

    The camera output bias starts at (1, 1, S/2, S/2) so the first
    projections land in the middle of the heatmap grid.
    """
    shapes = parameter_shapes(config)
    tensors = {}
    for name, shape in shapes.items():
        if names is not None and name not in names:
            continue
        if name.endswith(".bias"):
            data = np.zeros(shape)
            if name == "cam.out.bias":
                half = config.latent_spatial / 2
                data[:] = (1.0, 1.0, half, half)
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
            bound = np.sqrt(6.0 / fan_in)
            data = _param_rng(seed, name).uniform(-bound, bound, size=shape)
        tensors[name] = gc.parameter(data)
    pretrained = frozenset(n for n in tensors if is_pretrained_name(n))
    return ModelParams(tensors, pretrained)


@dataclass
class ForwardOutput:
    intermediate_heatmaps: list[gc.Tensor]
    latent: gc.Tensor
    latent_heatmaps: gc.Tensor
    depth_features: gc.Tensor
    z: gc.Tensor
    p3d: gc.Tensor
    cam: gc.Tensor
    p2d: gc.Tensor

    def joints3d(self) -> gc.Tensor:
        B = self.p3d.shape[0]
        return gc.reshape(self.p3d, (B, -1, 3))


def _batched_image(image, config: ModelConfig) -> gc.Tensor:
    image = gc.as_tensor(image)
    if image.ndim == 3:
        image = gc.reshape(image, (1,) + image.shape)
    expect = (config.input_channels, config.input_size, config.input_size)
    if image.ndim != 4 or image.shape[1:] != expect:
        raise ShapeMismatch(f"image shape {image.shape} does not match config {expect}")
    return image


def backbone_forward(image, params: ModelParams, config: ModelConfig):
    """Returns ``([penultimate head heatmaps], F_3D)``."""
    x = _batched_image(image, config)
    feats = []
    last = len(config.backbone_blocks) - 1
    for i, (_, stride) in enumerate(config.backbone_blocks):
        x = gc.conv2d(x, params[f"backbone.{i}.weight"], stride=stride, pad=config.kernel_size // 2,
                      b=params[f"backbone.{i}.bias"])
        # The latent stays linear: a relu here lets heatmap channels die at
        # zero, where the heatmap loss can no longer revive them.
        if i < last:
            x = gc.relu(x)
        feats.append(x)
    inter = gc.conv2d(feats[-2], params["inter_head.weight"], b=params["inter_head.bias"])
    if inter.shape[-1] != config.latent_spatial:
        raise ShapeMismatch("penultimate feature map must be at latent resolution")
    return [inter], feats[-1]


def split_latent(latent: gc.Tensor, config: ModelConfig):
    if latent.ndim != 4 or latent.shape[1] != config.latent_channels:
        raise ShapeMismatch(f"latent shape {latent.shape} does not have {config.latent_channels} channels")
    K = config.heatmap_channels
    return latent[:, :K], latent[:, K:]


def embed(latent: gc.Tensor, params: ModelParams) -> gc.Tensor:
    B = latent.shape[0]
    flat = gc.reshape(latent, (B, -1))
    return gc.relu(gc.linear(flat, params["embed.weight"], params["embed.bias"]))


def lift(z: gc.Tensor, params: ModelParams, config: ModelConfig, residual: bool = True) -> gc.Tensor:
    if z.ndim != 2 or z.shape[1] != config.z_dim:
        raise ShapeMismatch(f"z shape {z.shape} does not match z_dim {config.z_dim}")
    h = z
    for i in range(config.lifting_layers):
        h = gc.relu(gc.linear(h, params[f"lift.{i}.weight"], params[f"lift.{i}.bias"]))
        if i == 1 and residual:
            h = h + z
    out = gc.linear(h, params["lift.out.weight"], params["lift.out.bias"])
    K = config.heatmap_channels
    mask = np.ones((1, 3 * K))
    mask[0, 0:3] = 0.0  # root joint pinned at the origin
    return out * mask


def camera_head(z: gc.Tensor, params: ModelParams) -> gc.Tensor:
    w = params["cam.hidden.weight"]
    if z.ndim != 2 or z.shape[1] != w.shape[0]:
        raise ShapeMismatch(f"z shape {z.shape} does not match camera head input {w.shape[0]}")
    h = gc.relu(gc.linear(z, w, params["cam.hidden.bias"]))
    return gc.linear(h, params["cam.out.weight"], params["cam.out.bias"])


def model_forward(image, params: ModelParams, config: ModelConfig, p3d_override=None) -> ForwardOutput:
    """Full forward pass.

    The lifting head works in units of ``pose_unit_mm``; ``p3d`` is returned
    in mm and the camera scale is expressed in heatmap px per unit.
    ``p3d_override`` (mm) replaces the lifting output, e.g. with ground-truth
    poses when only the camera head is being fitted.
    """
    inter, latent = backbone_forward(image, params, config)
    h2d, d = split_latent(latent, config)
    z = embed(latent, params)
    if p3d_override is None:
        raw = lift(z, params, config)
    else:
        raw = gc.as_tensor(np.asarray(p3d_override, dtype=np.float64) / config.pose_unit_mm)
        raw = gc.reshape(raw, (raw.shape[0], -1))
    p3d = raw * config.pose_unit_mm
    cam = camera_head(z, params)
    B = raw.shape[0]
    p2d = project_tensor(gc.reshape(raw, (B, -1, 3)), cam)
    return ForwardOutput(inter, latent, h2d, d, z, p3d, cam, p2d)
