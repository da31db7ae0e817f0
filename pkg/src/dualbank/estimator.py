"""Scikit-learn style front end over the dual-bank engine.

DualBankDetector works on in-memory stacks of fused patch grids
([n, h, w, d]); the file/manifest pipeline in the CLI is the scalable
path, this facade is for composing with the wider ecosystem
(get_params/set_params, clone, pipelines).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .localization import localize_image
from .memory_banks import BankPair, bank_from_vectors
from .patch_features import PatchConfig, PatchGrid, aggregate_patches
from .reduction import make_projection
from .scoring import score_image
from .validation import (
    check_binary_labels,
    check_feature_maps,
    check_patch_grids,
    check_patch_masks,
)


class PatchAggregator(BaseEstimator, TransformerMixin):
    """Mean-pool backbone maps into patch grids: [n, c, h, w] -> [n, h, w, c]."""

    def __init__(self, patch_size=3, stride=1):
        self.patch_size = patch_size
        self.stride = stride

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        X = check_feature_maps(X)
        cfg = PatchConfig(patch_size=self.patch_size, stride=self.stride, levels=(2,))
        out = [aggregate_patches(fm, cfg).vectors for fm in X]
        return np.stack(out, axis=0)


class DualBankDetector(BaseEstimator):
    """Dual memory-bank anomaly detector over fused patch grids.

    fit(X, y, masks) pools nominal grids (y == 0) into the negative bank
    and mask-selected patches of anomalous grids (y == 1) into the
    positive bank, both projected and coreset-subsampled. score_samples
    returns the ratio score (higher = more anomalous); predict needs an
    explicit threshold since scores are uncalibrated.
    """

    def __init__(
        self,
        d_star=128,
        negative_rate=0.02,
        positive_rate=0.10,
        b=3,
        epsilon=1e-6,
        mode="ratio",
        sigma=2.0,
        projection_seed=0,
        negative_coreset_seed=1,
        positive_coreset_seed=2,
        store_projected=True,
        positive_at_negative_patch=False,
        threshold=None,
    ):
        self.d_star = d_star
        self.negative_rate = negative_rate
        self.positive_rate = positive_rate
        self.b = b
        self.epsilon = epsilon
        self.mode = mode
        self.sigma = sigma
        self.projection_seed = projection_seed
        self.negative_coreset_seed = negative_coreset_seed
        self.positive_coreset_seed = positive_coreset_seed
        self.store_projected = store_projected
        self.positive_at_negative_patch = positive_at_negative_patch
        self.threshold = threshold

    def fit(self, X, y=None, masks=None):
        X = check_patch_grids(X)
        n = X.shape[0]
        y = np.zeros(n, dtype=np.intp) if y is None else check_binary_labels(y, n)
        d = X.shape[3]
        if not 1 <= self.d_star <= d:
            raise ValueError(f"d_star must lie in [1, {d}], got {self.d_star}")
        nominal = X[y == 0]
        if nominal.shape[0] == 0:
            raise ValueError("fit needs at least one nominal (y == 0) grid")
        cfg = PatchConfig(patch_size=1, stride=1, levels=(2,))
        projection = make_projection(d, self.d_star, self.projection_seed)
        negative = bank_from_vectors(
            nominal.reshape(-1, d),
            "negative",
            projection,
            self.negative_rate,
            self.negative_coreset_seed,
            cfg,
            store_projected=self.store_projected,
        )
        positive = None
        anomalous = X[y == 1]
        if anomalous.shape[0] > 0:
            if masks is None:
                raise ValueError("anomalous grids need patch masks marking defects")
            masks = check_patch_masks(masks, X)[y == 1]
            pool = anomalous[masks]
            if pool.shape[0] == 0:
                raise ValueError("masks select no defective patches")
            positive = bank_from_vectors(
                pool,
                "positive",
                projection,
                self.positive_rate,
                self.positive_coreset_seed,
                cfg,
                store_projected=self.store_projected,
            )
        elif self.mode == "ratio":
            raise ValueError(
                "mode='ratio' needs anomalous training grids; use mode='negative_only'"
            )
        self.banks_ = BankPair(negative=negative, positive=positive)
        self.n_features_in_ = d
        return self

    def _check_fitted(self):
        if not hasattr(self, "banks_"):
            raise NotFittedError("call fit before scoring")

    def score_samples(self, X) -> np.ndarray:
        """Anomaly score per image; higher means more anomalous."""
        self._check_fitted()
        X = check_patch_grids(X)
        out = np.empty(X.shape[0], dtype=np.float64)
        for i, grid in enumerate(X):
            record = score_image(
                PatchGrid(vectors=grid, source_image_size=grid.shape[:2]),
                self.banks_,
                b=self.b,
                epsilon=self.epsilon,
                mode=self.mode,
                positive_at_negative_patch=self.positive_at_negative_patch,
            )
            out[i] = record.s_ratio
        return out

    def predict(self, X) -> np.ndarray:
        """1 = anomalous, 0 = nominal, using the configured threshold."""
        if self.threshold is None:
            raise ValueError("set threshold=... to use predict; scores are uncalibrated")
        return (self.score_samples(X) >= self.threshold).astype(np.intp)

    def anomaly_maps(self, X, image_size=None) -> np.ndarray:
        """Per-image anomaly maps [n, H, W]; image_size defaults to the grid."""
        self._check_fitted()
        X = check_patch_grids(X)
        size = tuple(image_size) if image_size is not None else X.shape[1:3]
        maps = [
            localize_image(
                PatchGrid(vectors=grid, source_image_size=size),
                self.banks_,
                b=self.b,
                epsilon=self.epsilon,
                mode=self.mode,
                sigma=self.sigma,
            ).values
            for grid in X
        ]
        return np.stack(maps, axis=0)
