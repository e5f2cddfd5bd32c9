"""Accuracy, harmless degree and harmonic mean."""

from __future__ import annotations

from typing import Sequence

import numpy as np


def predictions(oracle, x, classes: Sequence[str], extra: Sequence[str] = ()) -> np.ndarray:
    """Top-1 positions over ``classes + extra`` (positions >= len(classes) hit an extra class)."""
    probs = oracle.query(np.atleast_2d(np.asarray(x, dtype=np.float64)), list(classes) + list(extra))
    return np.asarray(probs).argmax(axis=1)


def acc(oracle, x, labels, classes: Sequence[str], extra: Sequence[str] = ()) -> float:
    """Top-1 accuracy; ``labels`` are positions in ``classes``, ``extra`` join the candidates."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("acc needs at least one sample")
    if labels.min() < 0 or labels.max() >= len(classes):
        raise ValueError("labels must index into classes")
    return float(np.mean(predictions(oracle, x, classes, extra) == labels))


def harmless_degree(watermarked, independent, x, labels, classes: Sequence[str],
                    extra: Sequence[str] = ()) -> float:
    """Mean misclassification of the watermarked oracle minus that of the independent one."""
    labels = np.asarray(labels)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if labels.size != x.shape[0]:
        raise ValueError(f"{x.shape[0]} samples but {labels.size} labels")
    if labels.size == 0:
        raise ValueError("harmless_degree needs at least one sample")
    wrong_w = predictions(watermarked, x, classes, extra) != labels
    wrong_i = predictions(independent, x, classes, extra) != labels
    return float(wrong_w.mean() - wrong_i.mean())


def harmonic_mean(acc_base: float, acc_novel: float) -> float:
    if acc_base <= 0 or acc_novel <= 0:
        raise ValueError("harmonic mean needs positive accuracies")
    return 2 * acc_base * acc_novel / (acc_base + acc_novel)
