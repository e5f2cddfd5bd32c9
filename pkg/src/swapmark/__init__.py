"""Soft-prompt watermarking on a toy dual encoder: embedding, audits and attacks."""

from .attacks import (AttackResult, PgdConfig, adaptive_false_claim, finetune_attack, overwrite_attack,
                      pgd_false_claim, prune_attack, unlearn_attack)
from .data import Dataset, DatasetSpec, generate_dataset, sample_few_shot, split_base_novel
from .metrics import acc, harmless_degree, harmonic_mean
from .toy_clip import (DualEncoderModel, ModelConfig, ModelOracle, PromptParams, build_model, load_checkpoint,
                       save_checkpoint)
from .verification import (AuditReport, PermutationRecord, bwap_verify, monte_carlo_validate, rank_distance,
                           repeated_swap_audit, swap_verify, theorem_bound, wsr)
from .watermark import BwapConfig, SwapConfig, TrainingLog, embed_bwap, embed_swap

__version__ = "0.1.0"
