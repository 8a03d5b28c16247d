from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptySet
from .sigsynth import CLASS_NAMES


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are ground truth, columns are predictions, in ``CLASS_NAMES`` order."""

    counts: np.ndarray
    class_names: tuple = CLASS_NAMES

    @classmethod
    def from_labels(cls, truth, predicted, n_classes=len(CLASS_NAMES)):
        truth = np.asarray(truth, dtype=np.int64)
        predicted = np.asarray(predicted, dtype=np.int64)
        if truth.size == 0:
            raise EmptySet("no frames to evaluate")
        counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(counts, (truth, predicted), 1)
        return cls(counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total

    def row_percent(self) -> np.ndarray:
        rows = self.counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(rows > 0, 100.0 * self.counts / rows, 0.0)

    def per_class_accuracy(self) -> np.ndarray:
        return np.diag(self.row_percent()) / 100.0

    def confused_pairs(self):
        """Unordered class pairs ranked by symmetric off-diagonal mass."""
        c = self.counts
        pairs = []
        for i in range(len(c)):
            for j in range(i + 1, len(c)):
                pairs.append(((self.class_names[i], self.class_names[j]), int(c[i, j] + c[j, i])))
        return sorted(pairs, key=lambda p: -p[1])
