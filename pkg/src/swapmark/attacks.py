"""Watermark-removal and false-claim attacks on prompt-tuned models.

Removal attacks (fine-tuning, pruning, overwriting, unlearning) act on the
prompts. False-claim attacks craft inputs with projected signed-gradient
steps so that some model shows an adversary-chosen verification ordering.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import torch

from .data import Dataset
from .toy_clip import DTYPE, DualEncoderModel, PromptParams, similarity_logits
from .watermark import (SwapConfig, TrainingDiverged, embed_swap, functionality_loss, order_hinge,
                        run_prompt_training, task_classes_of)


@dataclass
class AttackResult:
    attack: str
    params: dict = field(default_factory=dict)
    pre: dict = field(default_factory=dict)   # wsr, acc_base, acc_novel, p_value
    post: dict = field(default_factory=dict)
    asr: dict = field(default_factory=dict)   # false claims: {"reference": .., "victim": ..}
    seeds: dict = field(default_factory=dict)
    timestamp: float | None = None  # overwrite arbitration is recorded, never enforced

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# removal attacks


def finetune_attack(model: DualEncoderModel, prompts: PromptParams, clean: Dataset, epochs: int = 5,
                    lr: float = 1.0, batch_size: int = 32, seed: int = 1,
                    classes: Sequence[str] | None = None) -> PromptParams:
    """Cross-entropy-only tuning on the adversary's clean data."""
    classes = list(classes) if classes is not None else task_classes_of(model, clean)
    cfg = SwapConfig(lambda_=0.0, epochs=epochs, learning_rate=lr, batch_size=batch_size, seed=seed)
    out, _ = run_prompt_training(model, prompts, clean, classes, cfg)
    return out


def prune_attack(prompts: PromptParams, fraction: float) -> PromptParams:
    """Zero the ``fraction`` smallest-magnitude entries of each prompt matrix (ties by index)."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("prune fraction must lie in [0, 1]")

    def prune(t: torch.Tensor) -> torch.Tensor:
        flat = t.detach().clone().reshape(-1)
        k = int(round(fraction * flat.numel()))
        if k:
            order = np.argsort(np.abs(flat.numpy()), kind="stable")
            flat[torch.from_numpy(order[:k])] = 0.0
        return flat.reshape(t.shape)

    return PromptParams(prune(prompts.visual), prune(prompts.text))


def overwrite_attack(model: DualEncoderModel, prompts: PromptParams, train: Dataset,
                     new_verification: Sequence[str], config: SwapConfig,
                     original_verification: Sequence[str] = ()) -> PromptParams:
    """Embed a second sequential watermark with the adversary's own classes."""
    overlap = set(new_verification) & set(original_verification)
    if overlap:
        raise ValueError(f"new verification classes overlap the original ones: {sorted(overlap)}")
    out, _ = embed_swap(model, prompts, train, replace(config, verification_classes=tuple(new_verification)))
    return out


def unlearn_attack(model: DualEncoderModel, prompts: PromptParams, clean: Dataset,
                   verification: Sequence[str], lambda_: float = 1.0, epochs: int = 5, lr: float = 1.0,
                   epsilon: float = 0.5, batch_size: int = 32, seed: int = 1,
                   classes: Sequence[str] | None = None) -> PromptParams:
    """Descent on ``L_f - lambda * L_o`` with the owner's verification classes known."""
    classes = list(classes) if classes is not None else task_classes_of(model, clean)
    cfg = SwapConfig(epsilon=epsilon, lambda_=lambda_, verification_classes=tuple(verification),
                     epochs=epochs, learning_rate=lr, batch_size=batch_size, seed=seed)
    out, _ = run_prompt_training(model, prompts, clean, classes, cfg, order_sign=-1.0)
    return out


# ---------------------------------------------------------------------------
# false-claim attacks

INPUT_BOUNDS = (-4.0, 4.0)


@dataclass(frozen=True)
class PgdConfig:
    epsilon_inf: float = 8 / 255 * (INPUT_BOUNDS[1] - INPUT_BOUNDS[0])
    step_size: float | None = None  # defaults to epsilon_inf / 4
    steps: int = 40
    targeted: bool = False
    bounds: tuple[float, float] = INPUT_BOUNDS

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.epsilon_inf < 0:
            raise ValueError("epsilon_inf must be non-negative")
        if self.step_size is None:
            object.__setattr__(self, "step_size", self.epsilon_inf / 4)


Reference = tuple[DualEncoderModel, PromptParams]


def _pgd(objective: Callable[[torch.Tensor], torch.Tensor], x, config: PgdConfig, ascend: bool,
         trace: list | None = None) -> np.ndarray:
    x0 = torch.as_tensor(np.asarray(x), dtype=DTYPE)
    lo, hi = config.bounds
    adv = x0.clone()
    sign = 1.0 if ascend else -1.0
    for _ in range(config.steps):
        adv.requires_grad_(True)
        loss = objective(adv)
        (g,) = torch.autograd.grad(loss, adv)
        if not torch.all(torch.isfinite(g)):
            raise FloatingPointError("non-finite gradient in PGD")
        if trace is not None:
            trace.append(loss.item())
        with torch.no_grad():
            adv = adv + sign * config.step_size * g.sign()
            adv = torch.max(torch.min(adv, x0 + config.epsilon_inf), x0 - config.epsilon_inf)
            adv = adv.clamp(lo, hi)
    if trace is not None:
        with torch.no_grad():
            trace.append(objective(adv).item())
    return adv.detach().numpy()


def _ce(ref: Reference, labels, classes):
    model, prompts = ref
    return lambda x: functionality_loss(model, prompts, x, labels, classes)


def _order(ref: Reference, verification, epsilon):
    model, prompts = ref
    return lambda x: order_hinge(similarity_logits(model, prompts, x, verification), epsilon)


def pgd_false_claim(reference: Reference, x, config: PgdConfig = PgdConfig(), objective: str = "ce",
                    labels=None, classes: Sequence[str] = (), verification: Sequence[str] = (),
                    epsilon: float = 0.5, trace: list | None = None) -> np.ndarray:
    """Signed-gradient attack on a white-box reference.

    ``objective="ce"`` ascends the task cross-entropy (untargeted
    misclassification). ``objective="order"`` descends the order hinge so the
    reference shows ascending logits over ``verification``.
    """
    if objective == "ce":
        if labels is None or not classes:
            raise ValueError("CE objective needs labels and classes")
        fn = _ce(reference, torch.as_tensor(labels, dtype=torch.long), classes)
        return _pgd(fn, x, config, ascend=not config.targeted, trace=trace)
    if objective == "order":
        if len(verification) < 2:
            raise ValueError("order objective needs at least two verification classes")
        return _pgd(_order(reference, verification, epsilon), x, config, ascend=False, trace=trace)
    raise ValueError(f"unknown objective {objective!r}")


def adaptive_false_claim(references: Sequence[Reference], x, labels, classes: Sequence[str],
                         verification: Sequence[str], config: PgdConfig = PgdConfig(),
                         lambda_: float = 1.0, epsilon: float = 0.5, trace: list | None = None) -> np.ndarray:
    """Descent on sum over references of ``L_f + lambda * L_o`` (keep labels, impose order)."""
    if len(references) < 2:
        raise ValueError("the adaptive attack uses at least two references")
    labels = torch.as_tensor(labels, dtype=torch.long)
    parts = [(_ce(r, labels, classes), _order(r, verification, epsilon)) for r in references]

    def objective(xx):
        total = 0.0
        for ce, order in parts:
            total = total + ce(xx)
            if lambda_:
                total = total + lambda_ * order(xx)
        return total

    return _pgd(objective, x, config, ascend=False, trace=trace)


# ---------------------------------------------------------------------------
# success predicates


def asr(oracle, x, predicate: Callable[[np.ndarray], np.ndarray]) -> float:
    """Fraction of samples for which ``predicate(oracle, x)`` holds."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[0] == 0:
        raise ValueError("asr needs at least one sample")
    hits = np.asarray(predicate(oracle, x), dtype=bool)
    return float(hits.mean())


def misclassified(labels, classes: Sequence[str]):
    labels = np.asarray(labels)

    def pred(oracle, x):
        return np.asarray(oracle.query(x, list(classes))).argmax(1) != labels
    return pred


def sequence_match(verification: Sequence[str], task_classes: Sequence[str], reference=None):
    from .verification import sample_distances

    def pred(oracle, x):
        return sample_distances(oracle, x, verification, task_classes, reference) == 0
    return pred


__all__ = ["AttackResult", "PgdConfig", "TrainingDiverged", "finetune_attack", "prune_attack",
           "overwrite_attack", "unlearn_attack", "pgd_false_claim", "adaptive_false_claim", "asr",
           "misclassified", "sequence_match"]
