import numpy as np
import pytest
from hypothesis import given, strategies as st

from swapmark.metrics import acc, harmless_degree, harmonic_mean, predictions


class ConstantOracle:
    """Always puts its mass on one candidate position."""

    def __init__(self, position):
        self.position = position

    def query(self, x, classes):
        out = np.full((len(x), len(classes)), 0.1 / max(len(classes) - 1, 1))
        out[:, self.position] = 0.9
        return out


class LabelOracle:
    """Answers with the label stored in the first input coordinate."""

    def query(self, x, classes):
        out = np.zeros((len(x), len(classes)))
        out[np.arange(len(x)), x[:, 0].astype(int)] = 1.0
        return out


CLASSES = [f"c{i}" for i in range(5)]


def test_accuracy_examples():
    labels = np.arange(50) % 5
    x = np.column_stack([labels, np.zeros(50)])
    assert acc(LabelOracle(), x, labels, CLASSES) == 1.0
    assert acc(ConstantOracle(2), x, labels, CLASSES) == pytest.approx(1 / 5)
    with pytest.raises(ValueError):
        acc(LabelOracle(), np.zeros((0, 2)), [], CLASSES)
    with pytest.raises(ValueError):
        acc(LabelOracle(), x, labels + 1, CLASSES)


def test_extra_candidates_can_steal_predictions():
    labels = np.zeros(4, dtype=int)
    x = np.zeros((4, 2))
    assert acc(ConstantOracle(5), x, labels, CLASSES, extra=["T"]) == 0.0
    assert np.all(predictions(ConstantOracle(5), x, CLASSES, ["T"]) == 5)


def test_harmless_degree_examples():
    labels = np.arange(20) % 5
    x = np.column_stack([labels, np.zeros(20)])
    assert harmless_degree(LabelOracle(), LabelOracle(), x, labels, CLASSES) == 0.0
    wrong = ConstantOracle(5)  # always an extra class, so always wrong
    assert harmless_degree(wrong, LabelOracle(), x, labels, CLASSES, extra=["T"]) == 1.0
    assert harmless_degree(LabelOracle(), wrong, x, labels, CLASSES, extra=["T"]) == -1.0
    with pytest.raises(ValueError):
        harmless_degree(LabelOracle(), LabelOracle(), x, labels[:-1], CLASSES)


def test_harmonic_mean_examples():
    assert harmonic_mean(1.0, 1.0) == 1.0
    assert harmonic_mean(0.5, 1.0) == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        harmonic_mean(0.0, 0.5)


@given(a=st.floats(1e-6, 1.0), b=st.floats(1e-6, 1.0))
def test_harmonic_mean_bounded_by_min_and_arithmetic_mean(a, b):
    h = harmonic_mean(a, b)
    assert min(a, b) * (1 - 1e-12) <= h <= (a + b) / 2 * (1 + 1e-12)
    assert h == pytest.approx(harmonic_mean(b, a))
