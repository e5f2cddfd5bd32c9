"""Watermark embedding into soft prompts.

SWAP trains prompts on ``L = L_f + lambda * L_o``: ``L_f`` is cross-entropy
over the task classes and ``L_o`` is a hinge that forces the raw logits of
the verification classes to ascend with margin ``epsilon``. BWAP is the
poisoning baseline: a fraction of training samples get a blended trigger and
are relabelled to a fresh target class.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .data import Dataset
from .toy_clip import DTYPE, DualEncoderModel, PromptParams, similarity_logits, trainable

TARGET_LABEL = -1  # label used for relabelled (poisoned) samples


@dataclass(frozen=True)
class SwapConfig:
    epsilon: float = 0.5
    lambda_: float = 1.0
    verification_classes: tuple[str, ...] = ("Target 1", "Target 2", "Target 3", "Target 4")
    epochs: int = 300
    learning_rate: float = 1.0
    batch_size: int = 0  # 0 means full batch
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "verification_classes", tuple(self.verification_classes))
        if len(self.verification_classes) < 2:
            raise ValueError("need at least two verification classes")
        if len(set(self.verification_classes)) != len(self.verification_classes):
            raise ValueError("verification classes must be distinct")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.lambda_ < 0 or self.epochs < 0 or self.learning_rate < 0 or self.batch_size < 0:
            raise ValueError("lambda_, epochs, learning_rate and batch_size must be non-negative")


@dataclass(frozen=True)
class BwapConfig:
    trigger_pattern: tuple[float, ...]
    trigger_mask: tuple[float, ...]
    target_class: str = "Target"
    poison_rate: float = 0.1
    epochs: int = 500
    learning_rate: float = 20.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "trigger_pattern", tuple(float(v) for v in self.trigger_pattern))
        object.__setattr__(self, "trigger_mask", tuple(float(v) for v in self.trigger_mask))
        if len(self.trigger_pattern) != len(self.trigger_mask):
            raise ValueError("trigger pattern and mask must have the same length")
        if any(not 0.0 <= a <= 1.0 for a in self.trigger_mask):
            raise ValueError("trigger mask entries must lie in [0, 1]")
        if not 0.0 < self.poison_rate <= 1.0:
            raise ValueError("poison_rate must lie in (0, 1]")

    @classmethod
    def default(cls, input_dim: int = 32, patch: int = 4, value: float = 2.0, **kw) -> "BwapConfig":
        """Patch trigger: the last ``patch`` coordinates are overwritten with ``value``."""
        mask = [0.0] * (input_dim - patch) + [1.0] * patch
        return cls(trigger_pattern=(value,) * input_dim, trigger_mask=tuple(mask), **kw)


@dataclass
class TrainingLog:
    records: list[dict] = field(default_factory=list)
    converged: bool = False
    note: str = ""

    def append(self, **rec) -> None:
        for k, v in rec.items():
            if isinstance(v, float) and not math.isfinite(v):
                raise FloatingPointError(f"non-finite {k} at epoch {rec.get('epoch')}")
        self.records.append(rec)

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "TrainingLog":
        return cls([json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()])


class TrainingDiverged(FloatingPointError):
    def __init__(self, msg: str, log: TrainingLog):
        super().__init__(msg)
        self.log = log


# ---------------------------------------------------------------------------
# losses


def class_positions(y, classes: Sequence[str], names: Sequence[str]) -> torch.Tensor:
    """Map dataset labels (indices into ``names``) to positions in ``classes``."""
    pos = {c: i for i, c in enumerate(classes)}
    out = []
    for label in np.asarray(y).tolist():
        name = names[label] if label >= 0 else None
        if name not in pos:
            raise ValueError(f"label {label} ({name}) is not among the training classes")
        out.append(pos[name])
    return torch.tensor(out, dtype=torch.long)


def functionality_loss(model: DualEncoderModel, prompts: PromptParams, x, labels: torch.Tensor,
                       classes: Sequence[str]) -> torch.Tensor:
    """Mean cross-entropy over ``classes`` only; ``labels`` are positions in ``classes``."""
    labels = torch.as_tensor(labels, dtype=torch.long)
    if labels.numel() and (labels.min() < 0 or labels.max() >= len(classes)):
        raise ValueError("label outside the original classes")
    z = similarity_logits(model, prompts, x, classes)
    return torch.nn.functional.cross_entropy(z, labels)


def order_hinge(z: torch.Tensor, epsilon: float) -> torch.Tensor:
    """Mean over rows of sum_i max(0, epsilon - (z[i+1] - z[i]))."""
    z = torch.atleast_2d(torch.as_tensor(z, dtype=DTYPE))
    if z.shape[1] < 2:
        raise ValueError("need at least two verification logits")
    return torch.clamp(epsilon - (z[:, 1:] - z[:, :-1]), min=0).sum(1).mean()


def order_loss(model: DualEncoderModel, prompts: PromptParams, x, config: SwapConfig) -> torch.Tensor:
    z = similarity_logits(model, prompts, x, config.verification_classes)
    return order_hinge(z, config.epsilon)


def total_loss(model: DualEncoderModel, prompts: PromptParams, x, labels, classes,
               config: SwapConfig) -> torch.Tensor:
    lf = functionality_loss(model, prompts, x, labels, classes)
    if config.lambda_ == 0:
        return lf
    return lf + config.lambda_ * order_loss(model, prompts, x, config)


# ---------------------------------------------------------------------------
# training


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    if batch_size == 0 or batch_size >= n:
        yield np.arange(n)
        return
    perm = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield perm[i:i + batch_size]


def _sgd_step(p: PromptParams, loss: torch.Tensor, lr: float) -> None:
    gv, gt = torch.autograd.grad(loss, (p.visual, p.text))
    with torch.no_grad():
        p.visual -= lr * gv
        p.text -= lr * gt


def task_classes_of(model: DualEncoderModel, data: Dataset) -> list[str]:
    return [model.original_classes[c] for c in data.classes() if c >= 0]


def run_prompt_training(model: DualEncoderModel, prompts: PromptParams, train: Dataset,
                        classes: Sequence[str], config: SwapConfig,
                        order_sign: float = 1.0) -> tuple[PromptParams, TrainingLog]:
    """Gradient descent on ``L_f + order_sign * lambda * L_o`` over the prompts only.

    ``order_sign=-1`` gives the unlearning objective. Each epoch record holds
    the losses and training-set metrics measured before that epoch's update.
    Returns a fresh :class:`PromptParams`; the inputs are not modified.
    """
    p = trainable(prompts)
    log = TrainingLog()
    x = torch.as_tensor(train.x, dtype=DTYPE)
    labels = class_positions(train.y, classes, model.original_classes)
    cand = list(classes) + list(config.verification_classes)
    k = len(classes)
    rng = np.random.default_rng(config.seed)
    for epoch in range(1, config.epochs + 1):
        for step, idx in enumerate(_batches(len(train), config.batch_size, rng)):
            z = similarity_logits(model, p, x[idx], cand)
            lf = torch.nn.functional.cross_entropy(z[:, :k], labels[idx])
            lo = order_hinge(z[:, k:], config.epsilon)
            loss = lf + order_sign * config.lambda_ * lo if config.lambda_ else lf
            if not torch.isfinite(loss):
                log.note = f"non-finite loss at epoch {epoch}"
                raise TrainingDiverged(log.note, log)
            if step == 0 and len(idx) == len(train):
                rec = _swap_record(z.detach(), labels, k, config)
            _sgd_step(p, loss, config.learning_rate)
        if config.batch_size and config.batch_size < len(train):
            with torch.no_grad():
                rec = _swap_record(similarity_logits(model, p, x, cand), labels, k, config)
        log.append(epoch=epoch, **rec)
    out = p.clone()
    if config.epochs:
        frac = swap_diagnostics(model, out, train, classes, config)["order_satisfied"]
        log.converged = frac >= 0.95
        if not log.converged and config.lambda_ > 0 and order_sign > 0:
            log.note = f"order loss zero on only {frac:.1%} of training samples"
    return out, log


def _swap_record(z: torch.Tensor, labels: torch.Tensor, k: int, config: SwapConfig) -> dict:
    lf = torch.nn.functional.cross_entropy(z[:, :k], labels).item()
    gaps = z[:, k + 1:] - z[:, k:-1]
    lo = torch.clamp(config.epsilon - gaps, min=0).sum(1)
    return dict(loss_f=lf, loss_o=lo.mean().item(), total=lf + config.lambda_ * lo.mean().item(),
                base_acc=(z.argmax(1) == labels).double().mean().item(),
                wsr=(gaps > 0).all(1).double().mean().item(),
                order_satisfied=(lo == 0).double().mean().item())


def swap_diagnostics(model, prompts, data: Dataset, classes: Sequence[str], config: SwapConfig) -> dict:
    """Losses and metrics on ``data``; accuracy counts verification classes as candidates."""
    labels = class_positions(data.y, classes, model.original_classes)
    with torch.no_grad():
        z = similarity_logits(model, prompts, data.x, list(classes) + list(config.verification_classes))
    return _swap_record(z, labels, len(classes), config)


def embed_swap(model: DualEncoderModel, prompts: PromptParams, train: Dataset,
               config: SwapConfig, classes: Sequence[str] | None = None) -> tuple[PromptParams, TrainingLog]:
    """Embed the sequential watermark; ``classes`` defaults to the classes present in ``train``."""
    missing = [t for t in config.verification_classes if t not in model.vocab]
    if missing:
        raise KeyError(f"unregistered verification classes: {missing}")
    classes = list(classes) if classes is not None else task_classes_of(model, train)
    overlap = set(classes) & set(config.verification_classes)
    if overlap:
        raise ValueError(f"verification classes overlap task classes: {sorted(overlap)}")
    return run_prompt_training(model, prompts, train, classes, config)


# ---------------------------------------------------------------------------
# BWAP


def apply_trigger(x, config: BwapConfig) -> np.ndarray:
    """Blend ``(1 - alpha) * x + alpha * t`` elementwise; works on one sample or a batch."""
    x = np.asarray(x, dtype=np.float64)
    alpha = np.asarray(config.trigger_mask)
    t = np.asarray(config.trigger_pattern)
    if x.shape[-1] != alpha.size:
        raise ValueError(f"sample has {x.shape[-1]} entries, trigger has {alpha.size}")
    return (1.0 - alpha) * x + alpha * t


def make_poisoned_dataset(train: Dataset, config: BwapConfig) -> tuple[Dataset, np.ndarray]:
    """Replace a seeded ``round(rate * N)`` subset by triggered copies labelled TARGET_LABEL.

    Returns the mixed dataset and the boolean mask of poisoned rows.
    """
    if config.poison_rate <= 0:
        raise ValueError("poison_rate must be positive")
    n = len(train)
    k = int(round(config.poison_rate * n))
    idx = np.random.default_rng(config.seed).choice(n, size=k, replace=False)
    mask = np.zeros(n, dtype=bool)
    mask[idx] = True
    x = train.x.copy()
    y = train.y.copy()
    x[mask] = apply_trigger(x[mask], config)
    y[mask] = TARGET_LABEL
    return Dataset(x, y, train.means), mask


def embed_bwap(model: DualEncoderModel, prompts: PromptParams, train: Dataset, config: BwapConfig,
               classes: Sequence[str] | None = None) -> tuple[PromptParams, TrainingLog]:
    """Cross-entropy prompt tuning on the poisoned set; softmax spans classes plus the target."""
    if config.target_class not in model.vocab:
        raise KeyError(f"unregistered target class {config.target_class!r}")
    classes = list(classes) if classes is not None else task_classes_of(model, train)
    mixed, _ = make_poisoned_dataset(train, config)
    cand = classes + [config.target_class]
    names = list(model.original_classes)
    pos = {c: i for i, c in enumerate(cand)}
    labels = torch.tensor([pos[config.target_class] if l == TARGET_LABEL else pos[names[l]]
                           for l in mixed.y.tolist()], dtype=torch.long)
    x = torch.as_tensor(mixed.x, dtype=DTYPE)
    clean_x = torch.as_tensor(train.x, dtype=DTYPE)
    clean_labels = class_positions(train.y, classes, names)
    trig_x = torch.as_tensor(apply_trigger(train.x, config), dtype=DTYPE)

    p = trainable(prompts)
    log = TrainingLog()
    for epoch in range(1, config.epochs + 1):
        loss = torch.nn.functional.cross_entropy(similarity_logits(model, p, x, cand), labels)
        if not torch.isfinite(loss):
            log.note = f"non-finite loss at epoch {epoch}"
            raise TrainingDiverged(log.note, log)
        _sgd_step(p, loss, config.learning_rate)
        with torch.no_grad():
            clean = similarity_logits(model, p, clean_x, cand).argmax(1)
            trig = similarity_logits(model, p, trig_x, cand).argmax(1)
        log.append(epoch=epoch, poison_loss=loss.item(), total=loss.item(),
                   base_acc=(clean == clean_labels).double().mean().item(),
                   wsr=(trig == len(classes)).double().mean().item())
    log.converged = True
    return p.clone(), log


def bwap_trigger_success(model, prompts, x, config: BwapConfig, classes: Sequence[str]) -> float:
    """Fraction of triggered samples predicted as the target (candidates: classes + target)."""
    with torch.no_grad():
        z = similarity_logits(model, prompts, apply_trigger(x, config), list(classes) + [config.target_class])
    return (z.argmax(1) == len(classes)).double().mean().item()
