"""scikit-learn style wrapper around the LSTM: fit / predict / predict_frames."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .._validation import check_sequences, check_targets
from ..eval import EvaluationError, pcc, rmse
from ..features.matrix import NormalizationStats, apply_normalization, fit_normalization
from .checkpoint import ModelCheckpoint, ModelConfig
from .lstm import Adam, LSTMWeights, global_norm, init_weights, loss_and_gradients, predict_sequences

logger = logging.getLogger(__name__)


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass
class QualityTimeline:
    """Per-frame predicted MOS for one clip."""

    scores: np.ndarray
    clip_id: str = ""

    @property
    def clip_score(self) -> float:
        return float(np.mean(self.scores))

    def clamped(self, lo=1.0, hi=5.0) -> np.ndarray:
        return np.clip(self.scores, lo, hi)

    def __len__(self):
        return len(self.scores)


def _safe_pcc(x, y) -> float:
    try:
        return pcc(x, y)
    except EvaluationError:
        return float("nan")


def _column_names(X):
    names = getattr(X[0], "column_names", None) if isinstance(X, (list, tuple)) and X else None
    return tuple(names) if names else None


class VCMRegressor(RegressorMixin, BaseEstimator):
    """LSTM regressor predicting a quality score for every frame of a clip.

    ``X`` is a list of (T_i, F) feature sequences (arrays or FeatureMatrix).
    Clip predictions are the mean of the per-frame outputs. Training
    minimises squared error on the clip score with Adam and global-norm
    gradient clipping, and keeps the epoch with the best validation PCC.

    Parameters
    ----------
    num_layers, hidden_size : int
        Depth and width of the stacked LSTM.
    learning_rate : float
    batch_size : int
    max_epochs : int
        0 returns the initial weights.
    clip_norm : float or None
        Global gradient-norm limit.
    normalize : bool
        z-score features with statistics pooled over the training frames.
    seed : int
        Seeds both weight initialisation and batch shuffling.
    """

    def __init__(self, num_layers=6, hidden_size=256, learning_rate=1e-3, batch_size=16,
                 max_epochs=50, clip_norm=5.0, normalize=True, seed=0, log_path=None):
        self.num_layers = num_layers
        self.hidden_size = hidden_size
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.clip_norm = clip_norm
        self.normalize = normalize
        self.seed = seed
        self.log_path = log_path

    def _prepare(self, X):
        seqs = check_sequences(X, n_features=self.n_features_in_)
        if self.normalization_ is not None:
            seqs = [apply_normalization(s, self.normalization_) for s in seqs]
        return seqs

    def fit(self, X, y, eval_set=None):
        seqs = check_sequences(X)
        y = check_targets(y, len(seqs))
        self.n_features_in_ = seqs[0].shape[1]
        names = _column_names(X)
        if names is not None:
            self.feature_names_in_ = np.array(names, dtype=object)
        self.normalization_ = fit_normalization(seqs) if self.normalize else None

        if eval_set is not None:
            X_val, y_val = eval_set
            val_seqs = check_sequences(X_val)
            if val_seqs[0].shape[1] != self.n_features_in_:
                raise ValueError(
                    f"validation set has {val_seqs[0].shape[1]} features, training set {self.n_features_in_}"
                )
            y_val = check_targets(y_val, len(val_seqs))
        else:
            X_val, y_val = X, y

        train = self._prepare(seqs)
        val = self._prepare(X_val)
        weights = init_weights(self.n_features_in_, self.hidden_size, self.num_layers, seed=self.seed)
        optimizer = Adam(weights, lr=self.learning_rate)
        rng = np.random.default_rng(self.seed)

        def score(w):
            preds = np.array([q.mean() for q in predict_sequences(w, val)])
            return _safe_pcc(preds, y_val), rmse(preds, y_val)

        val_pcc, val_rmse = score(weights)
        best = (weights.copy(), 0, val_pcc)
        self.history_ = [{"epoch": 0, "train_loss": None, "val_pcc": val_pcc, "val_rmse": val_rmse}]
        log = open(self.log_path, "w") if self.log_path else None
        try:
            for epoch in range(1, self.max_epochs + 1):
                order = rng.permutation(len(train))
                losses = []
                for start in range(0, len(order), self.batch_size):
                    idx = order[start : start + self.batch_size]
                    loss, grads = loss_and_gradients(weights, [train[i] for i in idx], y[idx])
                    if not np.isfinite(loss):
                        raise TrainingDivergedError(
                            f"loss became {loss} at epoch {epoch}; lower learning_rate (now {self.learning_rate})"
                        )
                    if self.clip_norm:
                        norm = global_norm(grads)
                        if norm > self.clip_norm:
                            for a in grads.arrays():
                                a *= self.clip_norm / norm
                    optimizer.step(weights, grads)
                    losses.append(loss * len(idx))
                train_loss = float(sum(losses) / len(train))
                val_pcc, val_rmse = score(weights)
                entry = {"epoch": epoch, "train_loss": train_loss, "val_pcc": val_pcc, "val_rmse": val_rmse}
                self.history_.append(entry)
                if log:
                    log.write(json.dumps(entry) + "\n")
                logger.info("epoch %d loss %.5f val_pcc %.4f val_rmse %.4f", epoch, train_loss, val_pcc, val_rmse)
                if np.isfinite(val_pcc) and not val_pcc <= best[2]:
                    best = (weights.copy(), epoch, val_pcc)
        finally:
            if log:
                log.close()

        self.weights_, self.best_epoch_, self.best_score_ = best
        return self

    def predict_frames(self, X) -> list[np.ndarray]:
        check_is_fitted(self, "weights_")
        return predict_sequences(self.weights_, self._prepare(X))

    def predict(self, X) -> np.ndarray:
        return np.array([q.mean() for q in self.predict_frames(X)])

    def predict_timeline(self, X) -> list[QualityTimeline]:
        ids = [getattr(x, "clip_id", "") for x in X]
        return [QualityTimeline(q, cid) for q, cid in zip(self.predict_frames(X), ids)]

    def score(self, X, y, sample_weight=None):
        """Pearson correlation between clip predictions and ``y``."""
        return pcc(self.predict(X), y)

    def to_checkpoint(self) -> ModelCheckpoint:
        check_is_fitted(self, "weights_")
        names = getattr(self, "feature_names_in_", None)
        names = tuple(names) if names is not None else tuple(f"f{j}" for j in range(self.n_features_in_))
        config = ModelConfig(self.num_layers, self.hidden_size, self.n_features_in_, self.learning_rate,
                             self.batch_size, self.max_epochs, self.seed, float(self.clip_norm or 0.0))
        norm = None
        if self.normalization_ is not None:
            norm = NormalizationStats(self.normalization_.mean, self.normalization_.std, names)
        return ModelCheckpoint(config, self.weights_.copy(), names, norm, self.best_epoch_,
                               float(self.best_score_), list(self.history_))

    @classmethod
    def from_checkpoint(cls, ckpt: ModelCheckpoint) -> "VCMRegressor":
        c = ckpt.config
        model = cls(num_layers=c.num_layers, hidden_size=c.hidden_size, learning_rate=c.learning_rate,
                    batch_size=c.batch_size, max_epochs=c.max_epochs, clip_norm=c.clip_norm or None,
                    normalize=ckpt.normalization is not None, seed=c.seed)
        model.weights_ = ckpt.weights.copy()
        model.n_features_in_ = c.input_size
        model.feature_names_in_ = np.array(ckpt.column_names, dtype=object)
        model.normalization_ = ckpt.normalization
        model.best_epoch_ = ckpt.epoch
        model.best_score_ = ckpt.val_pcc
        model.history_ = list(ckpt.history)
        return model


def train(X_train, y_train, X_val, y_val, config: ModelConfig, log_path=None, normalize=True) -> ModelCheckpoint:
    """Train from a ModelConfig and return the best-validation checkpoint."""
    model = VCMRegressor(num_layers=config.num_layers, hidden_size=config.hidden_size,
                         learning_rate=config.learning_rate, batch_size=config.batch_size,
                         max_epochs=config.max_epochs, clip_norm=config.clip_norm,
                         normalize=normalize, seed=config.seed, log_path=log_path)
    model.fit(X_train, y_train, eval_set=(X_val, y_val))
    return model.to_checkpoint()


def forward_timeline(weights: LSTMWeights, matrix) -> QualityTimeline:
    """Per-frame scores of one (T, F) matrix under raw weights (no normalisation)."""
    seq = check_sequences([matrix], n_features=weights.input_size)[0]
    return QualityTimeline(predict_sequences(weights, [seq])[0], getattr(matrix, "clip_id", ""))
