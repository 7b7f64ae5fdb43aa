"""Scikit-learn style front ends for training and superpixels.

:class:`GsdSegmenter` wraps the full trainer behind fit/predict/score
with flat hyperparameters mirroring the config-file keys, so
``get_params``/``set_params`` and cloning work the standard way.
:class:`SlicSuperpixels` exposes the oversegmenter as a clusterer.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .grids import argmax_pixelwise
from .metrics import dice_score
from .superpixel import SlicConfig, slic
from .trainer import Dataset, TrainConfig, predict_probs, train
from .validation import check_image, check_labels


def _as_image_list(X, name="X"):
    if isinstance(X, (list, tuple)):
        return [check_image(x, name) for x in X]
    X = np.asarray(X)
    if X.ndim == 2:
        return [check_image(X, name)]
    if X.ndim == 3:
        return [check_image(X[i], name) for i in range(X.shape[0])]
    raise ValueError(f"{name}: expected (H, W) or (N, H, W), got shape {X.shape}")


def _as_label_list(y, name="y"):
    if isinstance(y, (list, tuple)):
        return [check_labels(v, num_classes=2, name=name) for v in y]
    y = np.asarray(y)
    if y.ndim == 2:
        return [check_labels(y, num_classes=2, name=name)]
    if y.ndim == 3:
        return [check_labels(y[i], num_classes=2, name=name) for i in range(y.shape[0])]
    raise ValueError(f"{name}: expected (H, W) or (N, H, W), got shape {y.shape}")


class GsdSegmenter(BaseEstimator):
    """Noise-robust binary segmenter trained on (image, noisy label) pairs.

    Parameters mirror :class:`gsdnet.trainer.TrainConfig`.  ``fit`` takes
    a stack or list of grayscale images and (possibly noisy) label grids;
    pass ``y_clean`` to resolve the selection schedule from the measured
    noise rate instead of the foreground heuristic.
    """

    def __init__(self, mode="gsd", epochs=100, batch_size=8, learning_rate=5e-3,
                 weight_decay=1e-5, momentum=0.0, kl_weight=1.0,
                 tau_source="foreground", tau=0.05, tau_fg_scale=0.15,
                 warmup_epochs=10, features=8, weight_cap=10.0,
                 slic_segments=0, slic_compactness=10.0,
                 kt_area_min=0.1, kt_area_max=0.4, aug_jitter=0.08,
                 aug_noise=0.02, eval_with="net1", seed=0):
        self.mode = mode
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.momentum = momentum
        self.kl_weight = kl_weight
        self.tau_source = tau_source
        self.tau = tau
        self.tau_fg_scale = tau_fg_scale
        self.warmup_epochs = warmup_epochs
        self.features = features
        self.weight_cap = weight_cap
        self.slic_segments = slic_segments
        self.slic_compactness = slic_compactness
        self.kt_area_min = kt_area_min
        self.kt_area_max = kt_area_max
        self.aug_jitter = aug_jitter
        self.aug_noise = aug_noise
        self.eval_with = eval_with
        self.seed = seed

    def _config(self):
        return TrainConfig(**self.get_params())

    def fit(self, X, y, y_clean=None):
        images = _as_image_list(X)
        noisy = _as_label_list(y)
        if len(images) != len(noisy):
            raise ValueError(f"{len(images)} images but {len(noisy)} label grids")
        for img, lab in zip(images, noisy):
            if img.shape[:2] != lab.shape:
                raise ValueError(f"image {img.shape[:2]} does not match labels {lab.shape}")
        clean = _as_label_list(y_clean, "y_clean") if y_clean is not None else noisy
        cfg = self._config()
        if y_clean is None and cfg.tau_source == "measured":
            raise ValueError("tau_source='measured' needs y_clean")
        data = Dataset(train_images=images, train_noisy=noisy, train_clean=clean,
                       test_images=[], test_labels=[])
        result = train(data, cfg)
        self.params1_ = result.state.params1
        self.params2_ = result.state.params2
        self.history_ = result.rows
        self.tau_ = result.state.tau
        return self

    def predict_proba(self, X):
        self._check_fitted()
        images = _as_image_list(X)
        return predict_probs(self.params1_, self.params2_, images, eval_with=self.eval_with)

    def predict(self, X):
        return argmax_pixelwise(self.predict_proba(X))

    def score(self, X, y):
        """Mean Dice overlap (in [0, 1]) against reference labels."""
        preds = self.predict(X)
        refs = _as_label_list(y)
        if len(refs) != preds.shape[0]:
            raise ValueError(f"{preds.shape[0]} predictions but {len(refs)} label grids")
        return float(np.mean([dice_score(preds[i], refs[i]) for i in range(len(refs))])) / 100.0

    def _check_fitted(self):
        if not hasattr(self, "params1_"):
            raise ValueError("estimator is not fitted; call fit first")


class SlicSuperpixels(BaseEstimator):
    """Superpixel oversegmentation with the cluster-style fit_predict API."""

    def __init__(self, n_segments=0, compactness=10.0, max_iters=10,
                 enforce_connectivity=True):
        self.n_segments = n_segments
        self.compactness = compactness
        self.max_iters = max_iters
        self.enforce_connectivity = enforce_connectivity

    def fit_predict(self, X):
        image = check_image(X)
        cfg = SlicConfig(n_segments=self.n_segments or None,
                         compactness=self.compactness,
                         max_iters=self.max_iters,
                         enforce_connectivity=self.enforce_connectivity)
        self.labels_ = slic(image, cfg)
        return self.labels_

    def fit(self, X, y=None):
        self.fit_predict(X)
        return self
