"""Mini-batch BCE training with per-component learning rates and a best-validation snapshot."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..numcore import ops
from ..numcore.optim import Adam
from ..numcore.tensor import Tensor, no_grad
from .config import TrainConfig

THRESHOLD = 0.5
HISTORY_FIELDS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc")


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class History:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(HISTORY_FIELDS)
            for r in self.records:
                w.writerow([r.epoch] + [repr(float(getattr(r, k))) for k in HISTORY_FIELDS[1:]])

    @classmethod
    def read_csv(cls, path) -> "History":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([EpochRecord(int(r["epoch"]), *(float(r[k]) for k in HISTORY_FIELDS[1:])) for r in rows])


def _index(inputs: tuple, idx) -> tuple:
    return tuple(x[idx] for x in inputs)


def predict_proba(model, inputs: tuple, batch_size: int = 128) -> np.ndarray:
    """Eval-mode probabilities for every sample, batched."""
    was_training = model.training
    model.eval()
    n = len(inputs[0])
    out = np.zeros(n)
    with no_grad():
        for s in range(0, n, batch_size):
            out[s:s + batch_size] = model(*_index(inputs, slice(s, s + batch_size))).data
    model.train(was_training)
    return out


def _bce(prob: np.ndarray, y: np.ndarray) -> float:
    p = np.clip(prob, 1e-12, 1 - 1e-12)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p))) if len(y) else 0.0


def evaluate(model, inputs: tuple, y: np.ndarray, batch_size: int = 128) -> tuple[float, float]:
    """(BCE loss, accuracy at threshold 0.5) in eval mode."""
    prob = predict_proba(model, inputs, batch_size)
    y = np.asarray(y, np.float64)
    acc = float(np.mean((prob >= THRESHOLD) == (y >= 0.5))) if len(y) else 0.0
    return _bce(prob, y), acc


def component_learning_rates(model, tc: TrainConfig) -> list[float]:
    table = {"cnn": tc.lr_cnn, "vit": tc.lr_vit}
    return [table.get(model.component_of(name), tc.lr_head) for name, _ in model.named_parameters()]


def train_model(model, train_inputs: tuple, y_train, val_inputs: tuple, y_val, tc: TrainConfig,
                callback=None) -> tuple[History, dict[str, np.ndarray]]:
    """Train in place; returns the history and the best-validation parameter snapshot.

    The snapshot is taken at the epoch with the highest validation accuracy,
    ties going to the lower validation loss. With zero epochs it is the
    initial state.
    """
    y_train = np.asarray(y_train, np.float64)
    y_val = np.asarray(y_val, np.float64)
    n = len(y_train)
    if n == 0 or len(y_val) == 0:
        raise ValueError("training needs non-empty train and validation sets")
    params = model.parameters()
    opt = Adam(params, lr=component_learning_rates(model, tc), clip_threshold=tc.clip_threshold)
    rng = np.random.default_rng([tc.seed, 21])
    history = History()
    best_state = model.state_dict()
    best_key = None
    for epoch in range(1, tc.epochs + 1):
        model.train()
        order = rng.permutation(n) if tc.shuffle else np.arange(n)
        loss_sum, correct = 0.0, 0
        for b, s in enumerate(range(0, n, tc.batch_size)):
            idx = order[s:s + tc.batch_size]
            logits = model.logits(*_index(train_inputs, idx))
            loss = ops.binary_cross_entropy_with_logits(logits, Tensor(y_train[idx]))
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDivergedError(f"non-finite loss {value} at epoch {epoch}, batch {b}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            loss_sum += value * len(idx)
            correct += int(np.sum((logits.data >= 0.0) == (y_train[idx] >= 0.5)))
        val_loss, val_acc = evaluate(model, val_inputs, y_val)
        rec = EpochRecord(epoch, loss_sum / n, correct / n, val_loss, val_acc)
        history.records.append(rec)
        key = (val_acc, -val_loss)
        if best_key is None or key > best_key:
            best_key = key
            best_state = model.state_dict()
            history.best_epoch = epoch
        if callback is not None:
            callback(rec)
    return history, best_state
