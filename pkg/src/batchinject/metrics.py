"""Evaluation and overfit-gap measurement."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset, prepare_batch
from .errors import ConfigurationError
from .tensor import no_grad, softmax_cross_entropy


@dataclass(frozen=True)
class EvalResult:
    """Top-1 accuracy over a full dataset pass (each sample exactly once)."""

    accuracy: float
    correct: int
    total: int
    mean_loss: float


@dataclass(frozen=True)
class GapRecord:
    """Train/test accuracy pair; the gap is the overfitting proxy."""

    train_accuracy: float
    test_accuracy: float

    @property
    def gap(self) -> float:
        return self.train_accuracy - self.test_accuracy


def evaluate(model, dataset: LabeledDataset, batch_size: int = 256) -> EvalResult:
    """Argmax-of-logits accuracy and mean loss in eval mode, no augmentation.

    Ties in the logits resolve to the lowest class index (argmax convention).
    """
    head_classes = model.active_spec.class_count
    if head_classes != dataset.class_count:
        raise ConfigurationError(
            f"model predicts {head_classes} classes but dataset has {dataset.class_count}"
        )
    forward = model.forward_active
    correct = 0
    loss_sum = 0.0
    n = len(dataset)
    with no_grad():
        for start in range(0, n, batch_size):
            idx = np.arange(start, min(start + batch_size, n))
            x, y = prepare_batch(dataset, idx)
            logits = forward(x, mode="eval")
            correct += int((np.argmax(logits.data, axis=1) == y).sum())
            loss_sum += softmax_cross_entropy(logits, y).item() * len(idx)
    return EvalResult(
        accuracy=correct / n, correct=correct, total=n, mean_loss=loss_sum / n
    )


def confusion_matrix(model, dataset: LabeledDataset, batch_size: int = 256) -> np.ndarray:
    """Full confusion counts; used as the recount oracle for ``evaluate``."""
    k = dataset.class_count
    counts = np.zeros((k, k), dtype=np.int64)
    n = len(dataset)
    with no_grad():
        for start in range(0, n, batch_size):
            idx = np.arange(start, min(start + batch_size, n))
            x, y = prepare_batch(dataset, idx)
            pred = np.argmax(model.forward_active(x, mode="eval").data, axis=1)
            np.add.at(counts, (y, pred), 1)
    return counts


def overhead_probe(history) -> float:
    """Passive-to-active step ratio over a completed run, exact."""
    active = history.total_active_steps
    passive = history.total_passive_steps
    return passive / active if active else 0.0
