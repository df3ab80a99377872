"""Two-stage training: 2D heatmap pre-training, then mixed 2D/3D training."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import gradcore as gc
from .checkpoint import Checkpoint, Stage, save_checkpoint
from .config import RunConfig, StageConfig
from .errors import EmptyDataset, StageMismatch
from .losses import Batch, Kind, LossWeights, loss_heatmap, total_loss
from .network import (
    ModelParams,
    backbone_forward,
    init_params,
    is_pretrained_name,
    model_forward,
    parameter_shapes,
    split_latent,
)
from .synthdata import Dataset

log = logging.getLogger(__name__)


@dataclass
class Pool:
    """A set of sample indices drawn from one dataset."""

    dataset: Dataset
    indices: np.ndarray

    def __len__(self):
        return len(self.indices)


class IndexStream:
    """Endless without-replacement sampling, reshuffled each epoch from (seed, stream, epoch)."""

    def __init__(self, n: int, seed: int, stream_id: int, epoch: int = 0, cursor: int = 0):
        self.n, self.seed, self.stream_id = n, seed, stream_id
        self.epoch, self.cursor = epoch, cursor
        self._perm = self._permutation(epoch) if n else None

    def _permutation(self, epoch: int) -> np.ndarray:
        return np.random.default_rng([self.seed, self.stream_id, epoch]).permutation(self.n)

    def take(self, k: int) -> np.ndarray:
        if k and not self.n:
            raise EmptyDataset("cannot draw from an empty pool")
        out = []
        while k > 0:
            if self.cursor == self.n:
                self.epoch += 1
                self.cursor = 0
                self._perm = self._permutation(self.epoch)
            m = min(k, self.n - self.cursor)
            out.append(self._perm[self.cursor : self.cursor + m])
            self.cursor += m
            k -= m
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)

    def state(self) -> list[int]:
        return [self.epoch, self.cursor]


class BatchStream:
    """Mixed batches: ``round(batch_size * mix_ratio_2d)`` Only2D samples, the rest Full3D."""

    def __init__(self, full3d: Pool | None, only2d: Pool | None, batch_size: int, mix_ratio_2d: float,
                 seed: int, state: dict | None = None):
        self.full3d, self.only2d = full3d, only2d
        self.n2d = int(math.floor(batch_size * mix_ratio_2d + 0.5))
        self.n3d = batch_size - self.n2d
        if self.n3d and not (full3d and len(full3d)):
            raise EmptyDataset("batches need Full3D samples but the Full3D pool is empty")
        if self.n2d and not (only2d and len(only2d)):
            raise EmptyDataset("batches need Only2D samples but the Only2D pool is empty")
        state = state or {}
        self.streams = {
            "full3d": IndexStream(len(full3d) if full3d else 0, seed, 0, *state.get("full3d", (0, 0))),
            "only2d": IndexStream(len(only2d) if only2d else 0, seed, 1, *state.get("only2d", (0, 0))),
        }

    def next_indices(self) -> list[tuple[Pool, np.ndarray]]:
        parts = []
        if self.n2d:
            parts.append((self.only2d, self.only2d.indices[self.streams["only2d"].take(self.n2d)]))
        if self.n3d:
            parts.append((self.full3d, self.full3d.indices[self.streams["full3d"].take(self.n3d)]))
        return parts

    def next_batch(self) -> Batch:
        parts = [pool.dataset.batch(idx) for pool, idx in self.next_indices()]
        return concat_batches(parts)

    def state(self) -> dict:
        return {k: s.state() for k, s in self.streams.items()}


def concat_batches(parts: list[Batch]) -> Batch:
    if len(parts) == 1:
        return parts[0]
    return Batch(*(np.concatenate([getattr(p, f) for p in parts]) for f in
                   ("images", "gt_heatmaps", "gt_2d", "gt_3d", "ref_bone_lengths", "kinds")))


def make_batches(full3d: Pool | None, only2d: Pool | None, batch_size: int, mix_ratio_2d: float, seed: int):
    """Deterministic endless stream of mixed batches."""
    stream = BatchStream(full3d, only2d, batch_size, mix_ratio_2d, seed)
    while True:
        yield stream.next_batch()


def pools_from(full3d: Dataset | None, only2d: Dataset | None) -> tuple[Pool | None, Pool | None]:
    p3 = Pool(full3d, full3d.indices_of(Kind.FULL3D)) if full3d is not None else None
    p2 = Pool(only2d, only2d.indices_of(Kind.ONLY2D)) if only2d is not None else None
    return p3, p2


def union_pool(full3d: Dataset | None, only2d: Dataset | None) -> list[Pool]:
    """All 2D-annotated samples of both sources (each dataset counted once)."""
    pools = []
    seen = set()
    for ds in (full3d, only2d):
        if ds is None or id(ds) in seen:
            continue
        seen.add(id(ds))
        pools.append(Pool(ds, np.arange(len(ds))))
    return pools


def learning_rates(params: ModelParams, lr: float, factor: float) -> dict[str, float]:
    return {n: (lr / factor if n in params.pretrained else lr) for n in params.names()}


@dataclass
class StepLog:
    iteration: int
    loss: float
    terms: dict


def pretrain_2d(
    config: RunConfig,
    full3d: Dataset | None,
    only2d: Dataset | None,
    init: Checkpoint | None = None,
    until: int | None = None,
    on_step: Callable[[StepLog], None] | None = None,
) -> Checkpoint:
    """Stage 1: backbone + heatmap heads only, heatmap losses only."""
    config.validate()
    stage: StageConfig = config.stage1
    if init is None:
        names = [n for n in parameter_shapes(config.model) if is_pretrained_name(n)]
        params = init_params(config.model, config.seed, names=names)
        opt = gc.AdadeltaState.zeros_like(params.tensors, config.optimizer.rho, config.optimizer.eps)
        ckpt = Checkpoint(config.model, params, opt, Stage.PRETRAIN_2D, 0, {})
    else:
        if init.stage != Stage.PRETRAIN_2D:
            raise StageMismatch("pre-training can only resume from a Pretrain2D checkpoint")
        ckpt = init
    pools = union_pool(full3d, only2d)
    total = sum(len(p) for p in pools)
    if stage.iterations > 0 and total == 0:
        raise EmptyDataset("no samples for pre-training")
    # one flat pool over the union; positions map back to (dataset, index)
    offsets = np.cumsum([0] + [len(p) for p in pools])
    stream = IndexStream(total, config.seed, 2, *ckpt.generator_state.get("pretrain", (0, 0)))
    w = config.weights
    stop = stage.iterations if until is None else min(until, stage.iterations)
    params = ckpt.params
    while ckpt.iteration < stop:
        t = ckpt.iteration
        flat = stream.take(stage.batch_size)
        parts = []
        for k, pool in enumerate(pools):
            sel = flat[(flat >= offsets[k]) & (flat < offsets[k + 1])] - offsets[k]
            if len(sel):
                parts.append(pool.dataset.batch(pool.indices[sel]))
        batch = concat_batches(parts)
        inter, latent = backbone_forward(batch.images, params, config.model)
        h2d, _ = split_latent(latent, config.model)
        l_lat = loss_heatmap(h2d, batch.gt_heatmaps)
        l_int = loss_heatmap(inter[0], batch.gt_heatmaps)
        loss = l_lat * w.w_heatmap + l_int * w.w_intermediate
        grads = gc.backward(loss)
        gc.adadelta_step(params.tensors, grads, ckpt.optimizer, stage.lr_at(t))
        ckpt.iteration = t + 1
        ckpt.generator_state = {"pretrain": stream.state()}
        if on_step:
            on_step(StepLog(t, float(loss.data), {"heatmap": float(l_lat.data), "intermediate": float(l_int.data)}))
    return ckpt


def start_full(config: RunConfig, init: Checkpoint) -> Checkpoint:
    """Stage-2 starting point: pretrained backbone plus freshly seeded remaining parameters."""
    fresh_names = [n for n in parameter_shapes(config.model) if not is_pretrained_name(n)]
    fresh = init_params(config.model, config.seed + 1, names=fresh_names)
    tensors = {}
    for n in parameter_shapes(config.model):
        if is_pretrained_name(n):
            tensors[n] = gc.parameter(init.params[n].data.copy())
        else:
            tensors[n] = fresh[n]
    params = ModelParams(tensors, frozenset(init.params.names()))
    opt = gc.AdadeltaState.zeros_like(params.tensors, config.optimizer.rho, config.optimizer.eps)
    return Checkpoint(config.model, params, opt, Stage.FULL, 0, {})


def train_full(
    config: RunConfig,
    init: Checkpoint,
    full3d: Dataset | None,
    only2d: Dataset | None,
    until: int | None = None,
    out_dir=None,
    on_step: Callable[[StepLog], None] | None = None,
) -> Checkpoint:
    """Stage 2: mixed Full3D / Only2D batches through ``total_loss``.

    Pretrained parameters step with ``lr / lr_discrepancy_factor``.
    """
    config.validate()
    if init.model_config != config.model:
        raise StageMismatch("initial checkpoint has a different model config")
    if init.stage == Stage.PRETRAIN_2D:
        ckpt = start_full(config, init)
    elif init.stage == Stage.FULL:
        ckpt = init
    else:
        raise StageMismatch(f"cannot train from stage {init.stage}")
    stage = config.stage2
    p3, p2 = pools_from(full3d, only2d)
    stream = BatchStream(p3, p2, stage.batch_size, stage.mix_ratio_2d, config.seed,
                         ckpt.generator_state.get("batches"))
    skeleton = (full3d or only2d).skeleton
    stop = stage.iterations if until is None else min(until, stage.iterations)
    params = ckpt.params
    while ckpt.iteration < stop:
        t = ckpt.iteration
        batch = stream.next_batch()
        out = model_forward(batch.images, params, config.model)
        loss, terms = total_loss(out, batch, config.weights, skeleton)
        grads = gc.backward(loss)
        lrs = learning_rates(params, stage.lr_at(t), stage.lr_discrepancy_factor)
        gc.adadelta_step(params.tensors, grads, ckpt.optimizer, lrs)
        ckpt.iteration = t + 1
        ckpt.generator_state = {"batches": stream.state()}
        if on_step:
            on_step(StepLog(t, float(loss.data), terms))
        if out_dir is not None and config.checkpoint_every and ckpt.iteration % config.checkpoint_every == 0:
            save_checkpoint(ckpt, Path(out_dir) / f"full_{ckpt.iteration:06d}.pwt")
    return ckpt


def fit_camera_head(
    ckpt: Checkpoint,
    dataset: Dataset,
    iterations: int = 500,
    batch_size: int = 16,
    lr: float = 1.0,
    decay_rate: float = 0.1,
    seed: int = 0,
    eps: float | None = None,
) -> ModelParams:
    """Train a freshly initialised camera head with ground-truth 3D poses
    standing in for the lifting output; everything else stays frozen."""
    cfg = ckpt.model_config
    cam_names = [n for n in parameter_shapes(cfg) if n.startswith("cam.")]
    fresh = init_params(cfg, seed, names=cam_names)
    tensors = {n: (fresh[n] if n in cam_names else gc.constant(ckpt.params[n].data)) for n in ckpt.params.names()}
    params = ModelParams(tensors, frozenset())
    cam_params = {n: tensors[n] for n in cam_names}
    opt = gc.AdadeltaState.zeros_like(cam_params, ckpt.optimizer.rho, ckpt.optimizer.eps if eps is None else eps)
    truth = dataset.eval_truth()
    stream = IndexStream(len(dataset), seed, 3)
    schedule = StageConfig(iterations=iterations, batch_size=batch_size, lr=lr, decay_rate=decay_rate)
    for t in range(iterations):
        idx = stream.take(batch_size)
        out = model_forward(dataset.images[idx].astype(np.float64), params, cfg, p3d_override=truth[idx])
        loss = gc.mse(out.p2d, dataset.gt_2d[idx].astype(np.float64))
        gc.adadelta_step(cam_params, gc.backward(loss), opt, schedule.lr_at(t))
    return params


def projection_error(params: ModelParams, ckpt_config, dataset: Dataset, batch_size: int = 50) -> float:
    """Mean Euclidean 2D error (heatmap px) of GT 3D projected with the predicted camera."""
    truth = dataset.eval_truth()
    errs = []
    for s in range(0, len(dataset), batch_size):
        idx = np.arange(s, min(s + batch_size, len(dataset)))
        out = model_forward(dataset.images[idx].astype(np.float64), params, ckpt_config, p3d_override=truth[idx])
        errs.append(np.linalg.norm(out.p2d.data - dataset.gt_2d[idx], axis=-1).ravel())
    return float(np.concatenate(errs).mean())


class Timer:
    def __init__(self):
        self.t0 = time.perf_counter()

    def __call__(self) -> float:
        return time.perf_counter() - self.t0
