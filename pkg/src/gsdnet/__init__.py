"""Noise-robust segmentation training on dense 2-D grids.

The package trains two small co-regularized segmentation networks on
noisily annotated images.  Supervision is filtered by small-loss
selection, reweighted by distance to the annotation boundary, repaired
by superpixel-pooled predictions on rejected pixels, and enriched by
cross-image region transfer.  Everything runs in plain numpy with
seeded, bit-reproducible randomness.
"""

from .estimators import GsdSegmenter, SlicSuperpixels
from .losses import LossReport, SelectionSchedule
from .metrics import dice_score, final_report
from .noise import NoiseReport, NoiseSpec, simulate
from .trainer import Dataset, TrainConfig, load_dataset, train
from .validation import make_rng

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "GsdSegmenter",
    "LossReport",
    "NoiseReport",
    "NoiseSpec",
    "SelectionSchedule",
    "SlicSuperpixels",
    "TrainConfig",
    "dice_score",
    "final_report",
    "load_dataset",
    "make_rng",
    "simulate",
    "train",
    "__version__",
]
