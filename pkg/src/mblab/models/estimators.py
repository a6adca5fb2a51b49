"""scikit-learn style estimators wrapping the proposed model and the box baseline.

Both take a flat 2D ``X`` (one row per window); use :func:`pack_proposed` and
:func:`pack_baseline` to build it from a :class:`~mblab.dataset.SampleSet`.
"""
from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ..numcore.checkpoint import load_checkpoint, save_checkpoint
from ..scenesim import noisy_detector
from .config import ModelConfig, TrainConfig, model_preset
from .networks import BaselineModel, ProposedModel, box_features
from .training import THRESHOLD, History, predict_proba, train_model


# ---------------------------------------------------------------------------
# packing helpers
# ---------------------------------------------------------------------------

def pack_proposed(samples) -> np.ndarray:
    """Rows of [p*H*W image pixels, p beam indices]."""
    n = len(samples)
    return np.concatenate([samples.images.reshape(n, -1).astype(np.float64),
                           samples.beams.astype(np.float64)], axis=1)


def unpack_proposed(X: np.ndarray, n_frames: int, image_size: int) -> tuple[np.ndarray, np.ndarray]:
    pix = n_frames * image_size * image_size
    if X.shape[1] != pix + n_frames:
        raise ValueError(f"expected {pix + n_frames} features for {n_frames} frames of {image_size}x{image_size}, "
                         f"got {X.shape[1]}")
    images = X[:, :pix].reshape(-1, n_frames, image_size, image_size)
    return images, _beam_columns(X[:, pix:])


def detect(samples, miss_prob: float = 0.0, jitter: float = 0.0, seed: int = 0):
    """Noisy detections per window; the noise for a frame depends only on (seed, stream, step).

    Overlapping windows therefore see identical detections for shared frames.
    """
    out = []
    for frames, (u, b, t0) in zip(samples.boxes, samples.origins):
        win = []
        for j, frame in enumerate(frames):
            rng = np.random.default_rng([seed, int(u), int(b), int(t0) + j])
            win.append(noisy_detector(frame, miss_prob, jitter, rng))
        out.append(win)
    return out


def pack_baseline(samples, max_boxes: int = 6, miss_prob: float = 0.0, jitter: float = 0.0,
                  seed: int = 0) -> np.ndarray:
    """Rows of [p*4*max_boxes box coordinates, p beam indices]."""
    n, p = samples.beams.shape
    if n and not samples.boxes:
        raise ValueError("samples carry no ground-truth boxes")
    feats = np.zeros((n, p, 4 * max_boxes))
    for i, win in enumerate(detect(samples, miss_prob, jitter, seed)):
        feats[i] = box_features(win, max_boxes)
    return np.concatenate([feats.reshape(n, -1), samples.beams.astype(np.float64)], axis=1)


def unpack_baseline(X: np.ndarray, n_frames: int, max_boxes: int) -> tuple[np.ndarray, np.ndarray]:
    width = n_frames * 4 * max_boxes
    if X.shape[1] != width + n_frames:
        raise ValueError(f"expected {width + n_frames} features for {n_frames} frames x {max_boxes} boxes, "
                         f"got {X.shape[1]}")
    return X[:, :width].reshape(-1, n_frames, 4 * max_boxes), _beam_columns(X[:, width:])


def _beam_columns(cols: np.ndarray) -> np.ndarray:
    beams = np.rint(cols)
    if not np.array_equal(beams, cols):
        raise ValueError("beam columns must hold integer indices")
    return beams.astype(np.int64)


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------

class _SequenceClassifier(ClassifierMixin, BaseEstimator):
    kind = ""

    def _model_config(self) -> ModelConfig:
        raise NotImplementedError

    def _build(self, cfg: ModelConfig):
        raise NotImplementedError

    def _unpack(self, X: np.ndarray) -> tuple:
        raise NotImplementedError

    def _train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr_cnn=self.lr_cnn, lr_vit=self.lr_vit,
                           lr_head=self.lr_head, clip_threshold=self.clip_threshold, seed=self.seed)

    def fit(self, X, y, X_val=None, y_val=None, callback=None):
        """Train on (X, y); validation data defaults to the chronological tail of X (15%)."""
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = np.array([0, 1])
        if not np.isin(y, (0, 1)).all():
            raise ValueError("labels must be 0/1")
        if X_val is None:
            cut = max(1, int(round(0.85 * len(y))))
            if cut >= len(y):
                raise ValueError("too few samples to carve out a validation set; pass X_val/y_val")
            X, X_val, y, y_val = X[:cut], X[cut:], y[:cut], y[cut:]
        else:
            X_val, y_val = check_X_y(X_val, y_val, dtype=np.float64)
        self.n_features_in_ = X.shape[1]
        self.config_ = self._model_config()
        self.model_ = self._build(self.config_)
        self.initial_state_ = self.model_.state_dict()
        history, best = train_model(self.model_, self._unpack(X), y, self._unpack(X_val), y_val,
                                    self._train_config(), callback=callback)
        self.history_ = history
        self.final_state_ = self.model_.state_dict()
        self.best_state_ = best
        if self.restore_best:
            self.model_.load_state_dict(best)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, estimator was fitted with {self.n_features_in_}")
        p1 = predict_proba(self.model_, self._unpack(X))
        return np.stack([1.0 - p1, p1], axis=1)

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= THRESHOLD).astype(np.int64)

    # -- persistence ------------------------------------------------------
    def save(self, path, state: str = "current", metadata: dict | None = None) -> None:
        check_is_fitted(self, "model_")
        params = {"current": self.model_.state_dict(), "best": self.best_state_,
                  "final": self.final_state_, "initial": self.initial_state_}[state]
        meta = {"kind": self.kind, "estimator_params": self.get_params(),
                "model_config": dataclasses.asdict(self.config_), "n_features_in": self.n_features_in_}
        meta.update(metadata or {})
        save_checkpoint(path, params, metadata=meta)

    @classmethod
    def load(cls, path):
        params, _, meta = load_checkpoint(path)
        if meta.get("kind") != cls.kind:
            raise ValueError(f"checkpoint holds a {meta.get('kind')!r} model, not {cls.kind!r}")
        est = cls(**meta["estimator_params"])
        est.classes_ = np.array([0, 1])
        est.n_features_in_ = int(meta["n_features_in"])
        est.config_ = est._model_config()
        est.model_ = est._build(est.config_)
        est.model_.load_state_dict(params)
        est.checkpoint_metadata_ = meta
        est.history_ = History()
        return est


class BlockagePredictor(_SequenceClassifier):
    """CNN (beams) + ViT (frames) + GRU blockage classifier."""

    kind = "proposed"

    def __init__(self, scale="desk", n_frames=8, image_size=32, n_beams=32, n_antennas=32, beam_encoding="onehot",
                 epochs=200, batch_size=32, lr_cnn=1e-3, lr_vit=1e-3, lr_head=3e-3, clip_threshold=1.0,
                 seed=0, restore_best=True):
        self.scale = scale
        self.n_frames = n_frames
        self.image_size = image_size
        self.n_beams = n_beams
        self.n_antennas = n_antennas
        self.beam_encoding = beam_encoding
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_cnn = lr_cnn
        self.lr_vit = lr_vit
        self.lr_head = lr_head
        self.clip_threshold = clip_threshold
        self.seed = seed
        self.restore_best = restore_best

    def _model_config(self) -> ModelConfig:
        return model_preset(self.scale, n_frames=self.n_frames, image_size=self.image_size, n_beams=self.n_beams,
                            n_antennas=self.n_antennas, beam_encoding=self.beam_encoding)

    def _build(self, cfg):
        return ProposedModel(cfg, seed=self.seed)

    def _unpack(self, X):
        return unpack_proposed(X, self.n_frames, self.image_size)


class BoxBaselinePredictor(_SequenceClassifier):
    """Detected box coordinates + beams through the same GRU head."""

    kind = "baseline"

    def __init__(self, scale="desk", n_frames=8, n_beams=32, n_antennas=32, beam_encoding="onehot", max_boxes=6,
                 epochs=200, batch_size=32, lr_head=3e-3, clip_threshold=1.0, seed=0, restore_best=True):
        self.scale = scale
        self.n_frames = n_frames
        self.n_beams = n_beams
        self.n_antennas = n_antennas
        self.beam_encoding = beam_encoding
        self.max_boxes = max_boxes
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_head = lr_head
        self.clip_threshold = clip_threshold
        self.seed = seed
        self.restore_best = restore_best

    lr_cnn = lr_vit = 0.0

    def _model_config(self) -> ModelConfig:
        return model_preset(self.scale, n_frames=self.n_frames, n_beams=self.n_beams, n_antennas=self.n_antennas,
                            beam_encoding=self.beam_encoding, max_boxes=self.max_boxes)

    def _build(self, cfg):
        return BaselineModel(cfg, seed=self.seed)

    def _unpack(self, X):
        return unpack_baseline(X, self.n_frames, self.max_boxes)
