"""Train the seed-42 reference model and report held-out accuracy.

Usage: python scripts/reference_run.py [workdir]
"""
import sys
import time
from pathlib import Path

from wildpose.checkpoint import save_checkpoint
from wildpose.config import RunConfig
from wildpose.metrics import Protocol, evaluate
from wildpose.reference import SEED, depth_blind_bound, mean_pose_predictions, reference_data
from wildpose.train import fit_camera_head, pretrain_2d, projection_error, train_full


def main(workdir: Path) -> None:
    workdir.mkdir(parents=True, exist_ok=True)
    train, heldout = reference_data(workdir)
    cfg = RunConfig(seed=SEED)

    def log(s):
        if s.iteration % 250 == 0:
            print(f"  it {s.iteration:5d}  loss {s.loss:.4f}", flush=True)

    t0 = time.perf_counter()
    print("stage 1")
    pre = pretrain_2d(cfg, train, train, on_step=log)
    print("stage 2")
    full = train_full(cfg, pre, train, train, on_step=log)
    minutes = (time.perf_counter() - t0) / 60
    save_checkpoint(full, workdir / "full.pwt")

    base = evaluate(heldout, None, Protocol.UNSCALED, predictions=mean_pose_predictions(train, len(heldout)))
    print(f"\ntraining time {minutes:.1f} min")
    print(f"mean-pose baseline MPJPE {base.mpjpe_mm:.1f} mm, depth-blind floor {depth_blind_bound(heldout):.1f} mm")
    for p in Protocol:
        r = evaluate(heldout, full, p)
        print(f"{p.value:>12}: MPJPE {r.mpjpe_mm:6.1f} mm  PCK {100 * r.pck_150:5.1f}  AUC {100 * r.auc:5.1f}  "
              f"heatmap {r.heatmap_error_px:.2f} px")
    cam = fit_camera_head(full, train, iterations=500, lr=cfg.stage2.lr)
    print(f"camera head alone: projection error {projection_error(cam, full.model_config, heldout):.3f} px")


if __name__ == "__main__":
    main(Path(sys.argv[1] if len(sys.argv) > 1 else "runs/reference"))
