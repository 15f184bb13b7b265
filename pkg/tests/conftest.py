import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

from segscore import LabelMap


def lm(rows, ignore_id=255):
    """Shorthand LabelMap builder for grid literals."""
    return LabelMap(np.asarray(rows, dtype=np.int32), ignore_id)


def random_mask_pair(rng, size=32, num_fg=3, ignore_frac=0.03, copy_prob=0.55):
    """A correlated (pred, gt) pair exercising blobs, misses, and ignores."""
    gt = rng.integers(0, num_fg + 1, size=(size, size), dtype=np.int32)
    pred = np.where(
        rng.random((size, size)) < copy_prob,
        gt,
        rng.integers(0, num_fg + 1, size=(size, size), dtype=np.int32),
    )
    gt = gt.copy()
    gt[rng.random((size, size)) < ignore_frac] = 255
    return pred, gt
