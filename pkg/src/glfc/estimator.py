"""scikit-learn compatible wrapper: CBCT slices in, synthetic-CT slices out."""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .dataset import resize_nearest
from .losses import hu_to_norm, norm_to_hu
from .metrics import evaluate_pair
from .training import RunConfig, fit_new
from .validation import check_paired, check_slices


class SCTTranslator(RegressorMixin, BaseEstimator):
    """Train a MEUNet (or an ablation variant) to map CBCT to CT.

    ``X`` and ``y`` are HU slices shaped [n, H, W] (a single [H, W] slice is
    accepted). Slices are nearest-neighbour resized to ``input_size`` and
    normalised to [-1, 1]; ``predict`` returns HU at the input resolution.
    ``score`` is the mean full-body masked SSIM, not R^2.
    """

    def __init__(self, arch: str = "meunet", loss: str = "mcl", lr: float = 0.02,
                 batch_size: int = 4, epochs: int = 100, max_steps: Optional[int] = None,
                 input_size: int = 256, channels: Tuple[int, ...] = (64, 128, 256),
                 token_count: int = 1024, vss_depths: Tuple[int, int] = (16, 8),
                 embed_dims: Tuple[int, int] = (128, 256), state_dim: int = 8,
                 random_state: int = 0):
        self.arch = arch
        self.loss = loss
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.max_steps = max_steps
        self.input_size = input_size
        self.channels = channels
        self.token_count = token_count
        self.vss_depths = vss_depths
        self.embed_dims = embed_dims
        self.state_dim = state_dim
        self.random_state = random_state

    def _run_config(self) -> RunConfig:
        return RunConfig(arch=self.arch, loss=self.loss, lr=self.lr, batch=self.batch_size,
                         epochs=self.epochs, steps=self.max_steps, seed=self.random_state,
                         size=self.input_size, channels=tuple(self.channels),
                         tokens=self.token_count, vss_depths=tuple(self.vss_depths),
                         embed_dims=tuple(self.embed_dims), state_dim=self.state_dim)

    def _to_input(self, X: np.ndarray) -> np.ndarray:
        s = self.input_size
        return np.stack([hu_to_norm(resize_nearest(x, s)) for x in X])[:, None].astype(np.float32)

    def fit(self, X, y):
        X, y = check_paired(X, y)
        run = self._run_config().validate()
        self.model_, self.history_ = fit_new(self._to_input(X), self._to_input(y), run)
        self.n_steps_ = len(self.history_)
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_slices(X)
        out = []
        for x in X:
            pred = self.model_.predict(self._to_input(x[None]))[0, 0]
            out.append(resize_nearest(norm_to_hu(pred), x.shape))
        return np.stack(out)

    def score(self, X, y, sample_weight=None) -> float:
        X, y = check_paired(X, y)
        pred = self.predict(X)
        vals = [evaluate_pair(p, t).ssim["full"] for p, t in zip(pred, y)]
        return float(np.average(vals, weights=sample_weight))

