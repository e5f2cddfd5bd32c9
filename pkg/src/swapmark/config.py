"""Experiment configuration: typed sections read from and written to INI-style files.

Every key has a default; the shipped ``default.cfg`` is generated from these
dataclasses. Lists are comma-separated. ``section.key`` overrides can be
applied on top of a loaded file (the CLI uses this for its flags).
"""

from __future__ import annotations

import configparser
import dataclasses
import typing
import zlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .attacks import INPUT_BOUNDS

ATTACK_NAMES = ("finetune", "prune", "pgd", "adaptive", "overwrite", "unlearn")


@dataclass
class DataSection:
    num_classes: int = 20
    samples_per_class: int = 100
    input_dim: int = 32
    cluster_std: float = 0.3
    base_fraction: float = 0.5
    shots: int = 16


@dataclass
class ModelSection:
    feature_dim: int = 512
    hidden_image: int = 1024
    hidden_text: int = 1024
    token_dim: int = 32
    prompt_len_visual: int = 4
    prompt_len_text: int = 4
    temperature: float = 0.07
    prompt_site: str = "hidden"
    ground_steps: int = 400
    ground_lr: float = 0.05
    token_spread: float = 0.3


@dataclass
class SwapSection:
    epsilon: float = 0.5
    lambda_: float = 1.0
    verification: list[str] = field(default_factory=lambda: ["Target 1", "Target 2", "Target 3", "Target 4"])
    epochs: int = 300
    learning_rate: float = 1.0
    batch_size: int = 0


@dataclass
class BwapSection:
    target: str = "Target"
    poison_rate: float = 0.1
    trigger_patch: int = 4
    trigger_value: float = 2.0
    epochs: int = 500
    learning_rate: float = 20.0


@dataclass
class AuditSection:
    m: int = 100
    tau_thr: float = 0.5
    alpha: float = 0.01
    repeats: int = 3
    bwap_tau_thr: float = 0.2
    independent_classes: list[str] = field(default_factory=lambda: ["Miqi 1", "Miqi 2", "Miqi 3", "Miqi 4"])


@dataclass
class AttackSection:
    run: list[str] = field(default_factory=lambda: list(ATTACK_NAMES))
    batch_size: int = 32
    finetune_epochs: int = 5
    finetune_lr: float = 1.0
    prune_fractions: list[float] = field(default_factory=lambda: [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])
    pgd_epsilon: float = 8 / 255 * (INPUT_BOUNDS[1] - INPUT_BOUNDS[0])
    pgd_steps: int = 40
    adversary_classes: list[str] = field(default_factory=lambda: ["Miqi 1", "Miqi 2", "Miqi 3", "Miqi 4"])
    overwrite_classes: list[str] = field(default_factory=lambda: ["Miqi 1", "Miqi 2", "Miqi 3", "Miqi 4"])
    unlearn_lambda: float = 1.0
    unlearn_epochs: int = 5


@dataclass
class SweepSection:
    epsilons: list[float] = field(default_factory=lambda: [0.05, 0.1, 0.5, 1.0])
    lambdas: list[float] = field(default_factory=lambda: [0.1, 0.5, 1.0, 2.0])
    finetune_epochs: int = 20


@dataclass
class RunSection:
    seed: int = 0
    mode: str = "swap"  # swap or bwap
    output_dir: str = "results"
    sweeps: bool = False


@dataclass
class ExperimentConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    swap: SwapSection = field(default_factory=SwapSection)
    bwap: BwapSection = field(default_factory=BwapSection)
    audit: AuditSection = field(default_factory=AuditSection)
    attacks: AttackSection = field(default_factory=AttackSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    run: RunSection = field(default_factory=RunSection)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.run.mode not in ("swap", "bwap"):
            raise ValueError(f"run.mode must be swap or bwap, got {self.run.mode!r}")
        unknown = set(self.attacks.run) - set(ATTACK_NAMES)
        if unknown:
            raise ValueError(f"unknown attacks: {sorted(unknown)}")
        if self.audit.m < 2 or self.audit.repeats < 1:
            raise ValueError("audit.m must be >= 2 and audit.repeats >= 1")
        if set(self.swap.verification) & set(self.audit.independent_classes):
            raise ValueError("independent classes must differ from the verification classes")

    def seed_for(self, purpose: str) -> int:
        """Per-stage seed derived from the master seed."""
        if purpose in ("data", "model", "split", "shots"):
            return self.run.seed
        return zlib.crc32(f"{self.run.seed}:{purpose}".encode()) & 0x7FFFFFFF

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        lines = []
        for sec in dataclasses.fields(self):
            lines.append(f"[{sec.name}]")
            obj = getattr(self, sec.name)
            for f in dataclasses.fields(obj):
                lines.append(f"{f.name} = {_format(getattr(obj, f.name))}")
            lines.append("")
        return "\n".join(lines)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    def override(self, key: str, value: str) -> None:
        """Set ``section.key`` from its text form."""
        try:
            sec_name, name = key.split(".", 1)
        except ValueError:
            raise KeyError(f"override {key!r} must look like section.key") from None
        sec = getattr(self, sec_name, None)
        if sec is None or not dataclasses.is_dataclass(sec):
            raise KeyError(f"unknown config section {sec_name!r}")
        types = typing.get_type_hints(type(sec))
        if name not in types:
            raise KeyError(f"unknown key {name!r} in section [{sec_name}]")
        setattr(sec, name, _parse(value, types[name]))


def _format(v) -> str:
    if isinstance(v, list):
        return ", ".join(_format(i) for i in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(text: str, tp):
    text = text.strip()
    origin = typing.get_origin(tp)
    if origin is list:
        (inner,) = typing.get_args(tp)
        return [_parse(t, inner) for t in text.split(",") if t.strip()] if text else []
    if tp is bool:
        low = text.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {text!r}")
        return low in ("true", "1", "yes")
    if tp is int:
        return int(text)
    if tp is float:
        return float(text)
    return text


def loads(text: str, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read_string(text)
    cfg = ExperimentConfig()
    for sec in parser.sections():
        for key, value in parser.items(sec):
            cfg.override(f"{sec}.{key}", value)
    for key, value in (overrides or {}).items():
        cfg.override(key, str(value))
    cfg.validate()
    return cfg


def load(path=None, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Read a config file (the shipped defaults when ``path`` is None)."""
    text = Path(path).read_text() if path else default_text()
    return loads(text, overrides)


def default_text() -> str:
    return resources.files("swapmark").joinpath("default.cfg").read_text()
