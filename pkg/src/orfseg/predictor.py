"""Patch predictors: the contract, a logistic pixel classifier and an oracle.

Any object with ``predict_proba(patch, spec=None) -> belief`` can be fed to
the stitcher.  ``spec`` carries the patch origin; content-based models ignore
it, the oracle requires it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol, Tuple, runtime_checkable

import numpy as np
from scipy.ndimage import uniform_filter
from scipy.special import expit
from sklearn.base import BaseEstimator

from ._validation import check_image, check_mask
from .imagecore import FormatError, luminance
from .patching import PatchDataset, PatchSpec, crop

N_FEATURES = 4
MODEL_MAGIC = "LPM1"


@runtime_checkable
class PatchPredictor(Protocol):
    def predict_proba(self, patch: np.ndarray, spec: Optional[PatchSpec] = None) -> np.ndarray:
        ...


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 20
    minibatch: Optional[int] = 4096  # None: full batch
    seed: int = 0
    l2: float = 1e-4

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.minibatch is not None and self.minibatch < 1:
            raise ValueError("minibatch must be positive")
        if self.l2 < 0:
            raise ValueError("l2 must be nonnegative")


def extract_features(patch: np.ndarray, window: int = 5) -> np.ndarray:
    """Per-pixel ``[luminance, window mean, window std, 1]``, shape ``(H, W, 4)``.

    Windows are clamped at the patch border (edge replication).
    """
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 1, got {window}")
    lum = luminance(patch)
    if window == 1:
        return np.stack([lum, lum, np.zeros_like(lum), np.ones_like(lum)], axis=-1)
    # mode="nearest" replicates the edge, i.e. clamped windows
    mean = uniform_filter(lum, size=window, mode="nearest")
    sq = uniform_filter(lum * lum, size=window, mode="nearest")
    std = np.sqrt(np.maximum(sq - mean * mean, 0.0))
    return np.stack([lum, mean, std, np.ones_like(lum)], axis=-1)


def loss_and_gradient(w: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float) -> Tuple[float, np.ndarray]:
    """Mean binary cross-entropy plus ``l2 * |w|^2 / 2`` and its gradient."""
    z = X @ w
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z)) + 0.5 * l2 * float(w @ w)
    grad = X.T @ (expit(z) - y) / len(y) + l2 * w
    return loss, grad


def dataset_arrays(dataset: PatchDataset, window: int) -> Tuple[np.ndarray, np.ndarray]:
    if not dataset.patches:
        raise ValueError("cannot train on an empty dataset")
    X = np.empty((sum(p.label.size for p in dataset.patches), N_FEATURES))
    y = np.empty(X.shape[0])
    pos = 0
    for p in dataset.patches:
        label = check_mask(p.label)
        if label.shape != p.image.shape[:2]:
            raise ValueError(f"label shape {label.shape} differs from patch {p.image.shape[:2]}")
        n = label.size
        X[pos : pos + n] = extract_features(p.image, window).reshape(-1, N_FEATURES)
        y[pos : pos + n] = label.ravel()
        pos += n
    return X, y


class LogisticPixelModel(BaseEstimator):
    """Logistic regression on windowed intensity statistics, one decision per pixel.

    Parameters
    ----------
    window : int
        Odd side of the square statistics window.
    learning_rate, epochs, minibatch, seed, l2
        Minibatch gradient descent settings; ``minibatch=None`` is full batch.

    Attributes
    ----------
    coef_ : ndarray of shape (4,)
        Weights for ``[luminance, mean, std, bias]``.
    loss_history_ : list of float
        Full-data objective before training and after each epoch.
    """

    def __init__(self, window=5, learning_rate=0.1, epochs=20, minibatch=4096, seed=0, l2=1e-4):
        self.window = window
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.minibatch = minibatch
        self.seed = seed
        self.l2 = l2

    @classmethod
    def from_weights(cls, weights, window: int = 5) -> "LogisticPixelModel":
        model = cls(window=window)
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (N_FEATURES,):
            raise ValueError(f"expected {N_FEATURES} weights, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        model.coef_ = w.copy()
        model.loss_history_ = []
        return model

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig(self.learning_rate, self.epochs, self.minibatch, self.seed, self.l2)

    def fit(self, dataset: PatchDataset, y=None, init: Optional["LogisticPixelModel"] = None):
        cfg = self.train_config
        if init is not None:
            if init.window != self.window:
                raise ValueError("init model uses a different feature window")
            w = np.array(init.coef_, dtype=np.float64)
        else:
            w = np.zeros(N_FEATURES)
        if cfg.epochs == 0:
            self.coef_ = w
            self.loss_history_ = []
            return self
        X, t = dataset_arrays(dataset, self.window)
        n = len(t)
        batch = n if cfg.minibatch is None else min(cfg.minibatch, n)
        rng = np.random.default_rng(cfg.seed)
        history = [loss_and_gradient(w, X, t, cfg.l2)[0]]
        for _ in range(cfg.epochs):
            order = rng.permutation(n) if batch < n else None
            for start in range(0, n, batch):
                if order is None:
                    Xb, tb = X, t
                else:
                    idx = order[start : start + batch]
                    Xb, tb = X[idx], t[idx]
                _, grad = loss_and_gradient(w, Xb, tb, cfg.l2)
                w = w - cfg.learning_rate * grad
            history.append(loss_and_gradient(w, X, t, cfg.l2)[0])
        self.coef_ = w
        self.loss_history_ = history
        return self

    def _check_fitted(self):
        if not hasattr(self, "coef_"):
            raise RuntimeError("model is not fitted")

    def decision_function(self, patch: np.ndarray, features: Optional[np.ndarray] = None) -> np.ndarray:
        self._check_fitted()
        if features is None:
            features = extract_features(check_image(patch), self.window)
        return features @ self.coef_

    def predict_proba(self, patch: np.ndarray, spec: Optional[PatchSpec] = None,
                      features: Optional[np.ndarray] = None) -> np.ndarray:
        return expit(self.decision_function(patch, features))

    def predict(self, patch: np.ndarray, threshold: float = 0.5) -> np.ndarray:
        return (self.predict_proba(patch) >= threshold).astype(np.uint8)


def train(dataset: PatchDataset, config: TrainConfig = TrainConfig(),
          init: Optional[LogisticPixelModel] = None, window: int = 5) -> LogisticPixelModel:
    if init is not None:
        window = init.window
    model = LogisticPixelModel(window=window, learning_rate=config.learning_rate,
                               epochs=config.epochs, minibatch=config.minibatch,
                               seed=config.seed, l2=config.l2)
    return model.fit(dataset, init=init)


def predict(model: PatchPredictor, patch: np.ndarray, spec: Optional[PatchSpec] = None) -> np.ndarray:
    return model.predict_proba(patch, spec)


class OraclePredictor:
    """Returns the ground-truth crop at the requested origin as a belief map."""

    def __init__(self, truth: np.ndarray):
        self.truth = check_mask(truth, "truth").astype(np.float64)

    def predict_proba(self, patch: np.ndarray, spec: Optional[PatchSpec] = None) -> np.ndarray:
        if spec is None:
            raise ValueError("the oracle predictor needs the patch origin")
        size = np.asarray(patch).shape[0]
        try:
            return crop(self.truth, spec, size)
        except IndexError as exc:
            raise ValueError(str(exc)) from exc


def oracle_predictor(truth: np.ndarray) -> OraclePredictor:
    return OraclePredictor(truth)


def save_model(model: LogisticPixelModel, path) -> None:
    model._check_fitted()
    weights = " ".join(format(float(v), ".17g") for v in model.coef_)
    Path(path).write_text(f"{MODEL_MAGIC}\n{int(model.window)}\n{weights}\n", encoding="ascii")


def load_model(path) -> LogisticPixelModel:
    lines = Path(path).read_text(encoding="ascii").splitlines()
    if len(lines) < 3 or lines[0].strip() != MODEL_MAGIC:
        raise FormatError(f"{path}: not an {MODEL_MAGIC} model file")
    try:
        window = int(lines[1])
        weights = [float(tok) for tok in lines[2].split()]
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if window < 1 or window % 2 == 0:
        raise FormatError(f"{path}: invalid window {window}")
    if len(weights) != N_FEATURES or not all(math.isfinite(v) for v in weights):
        raise FormatError(f"{path}: expected {N_FEATURES} finite weights, found {len(weights)}")
    return LogisticPixelModel.from_weights(weights, window=window)
