"""Scikit-learn style front door.

ChangeDetector wraps model construction, training, and thresholded inference
behind the familiar fit/predict/score triple so the whole pipeline is usable
from a couple of lines:

    det = ChangeDetector(epochs=20, early_stop_f1=0.9)
    det.fit(x_pairs, y_masks)
    masks = det.predict(x_pairs)
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .metrics import Confusion, confusion, metrics
from .model import ChangeModel, ModelConfig
from .attention import WindowSpec
from .tensor import Tensor, no_grad
from .training import TrainConfig, train
from .validation import check_mask_array, check_pair_array


class ChangeDetector(BaseEstimator):
    """Bitemporal change detector with an sklearn front end.

    X is (n, 2, 3, H, W) float in [0, 1] (or uint8, or grayscale pairs);
    y is (n, H, W) or (n, 1, H, W) binary masks. predict returns (n, H, W)
    uint8 masks, predict_proba the per-pixel change probabilities.
    """

    def __init__(self, stem_channels: int = 16,
                 stage_depths: tuple[int, ...] = (1, 1, 2),
                 difference_channels: int = 16,
                 window_specs: tuple[tuple[int, int], ...] = ((2, 2), (4, 4), (8, 4)),
                 use_edm: bool = True, use_swsa: bool = True,
                 use_egsa: bool = True, use_four_stages: bool = False,
                 full_projections: bool = False, threshold: float = 0.5,
                 epochs: int = 10, batch_size: int = 32,
                 learning_rate: float = 5e-4, weight_decay: float = 0.01,
                 n_val: int = 0, early_stop_f1: float | None = None,
                 seed: int = 42):
        self.stem_channels = stem_channels
        self.stage_depths = stage_depths
        self.difference_channels = difference_channels
        self.window_specs = window_specs
        self.use_edm = use_edm
        self.use_swsa = use_swsa
        self.use_egsa = use_egsa
        self.use_four_stages = use_four_stages
        self.full_projections = full_projections
        self.threshold = threshold
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.n_val = n_val
        self.early_stop_f1 = early_stop_f1
        self.seed = seed

    def _build_config(self) -> ModelConfig:
        return ModelConfig(
            encoder=EncoderConfig(stem_channels=self.stem_channels,
                                  stage_depths=tuple(self.stage_depths)),
            c_d=self.difference_channels,
            decoder=DecoderConfig(
                window_specs=tuple(WindowSpec(*ws) for ws in self.window_specs),
                threshold=self.threshold),
            use_edm=self.use_edm, use_swsa=self.use_swsa, use_egsa=self.use_egsa,
            use_four_stages=self.use_four_stages,
            full_projections=self.full_projections)

    def fit(self, X, y) -> "ChangeDetector":
        x = check_pair_array(X)
        masks = check_mask_array(y, n=x.shape[0], hw=x.shape[3:])
        config = self._build_config()
        config.validate(x.shape[3:])
        model = ChangeModel(config, seed=self.seed)
        train_config = TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size,
            learning_rate=self.learning_rate, weight_decay=self.weight_decay,
            seed=self.seed, n_val=self.n_val,
            early_stop_f1=self.early_stop_f1, threshold=self.threshold)
        self.history_ = train(model, x, masks, train_config)
        self.model_ = model
        self.config_ = config
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        x = check_pair_array(X)
        outs = []
        with no_grad():
            for start in range(0, x.shape[0], self.batch_size):
                sel = slice(start, start + self.batch_size)
                out = self.model_(Tensor(x[sel, 0]), Tensor(x[sel, 1]))
                outs.append(out.probabilities.data[:, 0])
        return np.concatenate(outs, axis=0)

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) > self.threshold).astype(np.uint8)

    def score(self, X, y) -> float:
        """Micro-averaged F1 over every pixel of every sample."""
        pred = self.predict(X)
        masks = check_mask_array(y, n=pred.shape[0], hw=pred.shape[1:])
        total = Confusion(0, 0, 0, 0)
        for i in range(pred.shape[0]):
            total = total + confusion(pred[i], masks[i, 0].astype(np.uint8))
        return metrics(total)["f1"]
