"""The reference synthetic setup shared by the acceptance suite and scripts."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .synthdata import Dataset, GenConfig, generate_dataset, load_dataset

SEED = 42
TRAIN = GenConfig(sample_count=2000, seed=SEED, fraction_only2d=0.3)
HELDOUT = GenConfig(sample_count=500, seed=SEED + 1000, fraction_only2d=0.0)


def reference_data(directory) -> tuple[Dataset, Dataset]:
    """Generate (or reuse) the 2000-sample training set and 500-sample held-out set."""
    d = Path(directory)
    out = []
    for name, cfg in (("train.pld", TRAIN), ("heldout.pld", HELDOUT)):
        path = d / name
        if path.exists():
            ds = load_dataset(path)
            if ds.config == cfg:
                out.append(ds)
                continue
        generate_dataset(cfg, None, path)
        out.append(load_dataset(path))
    return out[0], out[1]


def mean_pose_predictions(train: Dataset, n: int) -> np.ndarray:
    """The mean Full3D training pose, repeated ``n`` times."""
    full = train.gt_3d[np.isfinite(train.gt_3d).all(axis=(1, 2))].astype(np.float64)
    return np.broadcast_to(full.mean(axis=0), (n,) + full.shape[1:])


def depth_blind_bound(heldout: Dataset) -> float:
    """MPJPE of a predictor that knows x and y exactly and predicts zero root-relative depth.

    Images carry no depth ordering, so the conditional law of every joint's
    depth given the image is symmetric about 0 and 0 is its median. No
    predictor has a lower expected MPJPE on this data.
    """
    truth = heldout.eval_truth()
    return float(np.abs(truth[..., 2]).mean())
