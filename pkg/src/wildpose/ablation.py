"""Four-way ablation: which supervision signals the 2D-only data needs."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

from .checkpoint import Checkpoint
from .config import RunConfig
from .errors import EmptyDataset
from .losses import Kind
from .metrics import EvalReport, Protocol, evaluate
from .synthdata import Dataset
from .train import pretrain_2d, train_full


@dataclass(frozen=True)
class Variant:
    key: str
    label: str
    latent_2d: bool
    projection: bool

    @property
    def uses_only2d(self) -> bool:
        return self.latent_2d or self.projection


VARIANTS = (
    Variant("a", "Baseline (direct 3D prediction + bone loss)", False, False),
    Variant("b", "+ 2D latent loss + 2D-only data", True, False),
    Variant("c", "+ 3D-to-2D projection + 2D-only data", False, True),
    Variant("d", "+ 2D latent loss + 2D-only data + 3D-to-2D projection", True, True),
)


def variant_config(base: RunConfig, v: Variant) -> RunConfig:
    """The baseline drops heatmap, intermediate and projection terms and trains on Full3D only."""
    w = base.weights
    weights = replace(
        w,
        w_heatmap=w.w_heatmap if v.latent_2d else 0.0,
        w_intermediate=w.w_intermediate if v.latent_2d else 0.0,
        w_proj=w.w_proj if v.projection else 0.0,
    )
    mix = base.stage2.mix_ratio_2d if v.uses_only2d else 0.0
    return replace(base, weights=weights, stage2=replace(base.stage2, mix_ratio_2d=mix))


@dataclass
class AblationRow:
    variant: Variant
    report: EvalReport
    checkpoint: Checkpoint


def check_data(base: RunConfig, full3d: Dataset | None, only2d: Dataset | None) -> None:
    """Fail before any training if some variant would run out of samples."""
    if full3d is None or not len(full3d.indices_of(Kind.FULL3D)):
        raise EmptyDataset("ablation needs Full3D samples for every configuration")
    needs_2d = base.stage2.mix_ratio_2d > 0 and any(v.uses_only2d for v in VARIANTS)
    if needs_2d and (only2d is None or not len(only2d.indices_of(Kind.ONLY2D))):
        raise EmptyDataset("configurations b, c and d need Only2D samples")


def run_ablation(
    base: RunConfig,
    full3d: Dataset,
    only2d: Dataset | None,
    eval_set: Dataset,
    pretrained: Checkpoint | None = None,
    protocol: Protocol = Protocol.GLOB_SCALED,
    on_row: Callable[[AblationRow], None] | None = None,
) -> list[AblationRow]:
    """Train all four variants from one shared stage-1 checkpoint and evaluate each."""
    check_data(base, full3d, only2d)
    if pretrained is None:
        pretrained = pretrain_2d(base, full3d, only2d)
    rows = []
    for v in VARIANTS:
        ckpt = train_full(variant_config(base, v), pretrained, full3d, only2d)
        row = AblationRow(v, evaluate(eval_set, ckpt, protocol), ckpt)
        rows.append(row)
        if on_row:
            on_row(row)
    return rows


def format_table(rows: list[AblationRow]) -> str:
    width = max(len(r.variant.label) for r in rows)
    lines = [f"{'Method':<{width}}  {'PCK':>6}  {'AUC':>6}  {'MPJPE':>7}"]
    for r in rows:
        rep = r.report
        lines.append(f"{r.variant.label:<{width}}  {100 * rep.pck_150:6.1f}  {100 * rep.auc:6.1f}  {rep.mpjpe_mm:7.1f}")
    return "\n".join(lines)
