"""A small frozen dual encoder with learnable soft prompts.

Both encoders are two-layer tanh networks with Gaussian weights drawn once
from a seeded generator. Image features are ``f(V_f, x)`` and class features
``g(V_g, c)``; both are L2-normalised and compared by cosine similarity
divided by a temperature, as in CLIP's zero-shot head.

Prompts are additive. With ``prompt_site="hidden"`` (the default) the
mean-pooled prompt rows are added to the hidden activation of each encoder,
which plays the role of a deep prompt. With ``prompt_site="input"`` they are
added to the raw input / token embedding instead. Zero prompts reproduce the
promptless encoders exactly in both modes.
"""

from __future__ import annotations

import io
import json
import re
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import torch

DTYPE = torch.float64
PROMPT_SITES = ("hidden", "input")

CHECKPOINT_MAGIC = b"SWAPCKPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 32
    feature_dim: int = 512
    hidden_dims: tuple[int, int] = (1024, 1024)  # (image encoder, text encoder)
    token_dim: int = 32
    prompt_len_visual: int = 4
    prompt_len_text: int = 4
    temperature: float = 0.07
    rng_seed: int = 0
    prompt_site: str = "hidden"
    # class-token grounding: the stand-in for image/text pretraining
    ground_steps: int = 400
    ground_lr: float = 0.05
    # verification-token families share a base vector; members differ by this much
    token_spread: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.feature_dim < 2:
            raise ValueError("feature_dim must be >= 2")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if len(self.hidden_dims) != 2 or min(self.hidden_dims) < 1:
            raise ValueError("hidden_dims needs one positive width per encoder")
        if min(self.input_dim, self.token_dim) < 1:
            raise ValueError("input_dim and token_dim must be positive")
        if min(self.prompt_len_visual, self.prompt_len_text) < 0:
            raise ValueError("prompt lengths must be non-negative")
        if self.prompt_site not in PROMPT_SITES:
            raise ValueError(f"prompt_site must be one of {PROMPT_SITES}")

    @property
    def visual_prompt_dim(self) -> int:
        return self.hidden_dims[0] if self.prompt_site == "hidden" else self.input_dim

    @property
    def text_prompt_dim(self) -> int:
        return self.hidden_dims[1] if self.prompt_site == "hidden" else self.token_dim

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{**d, "hidden_dims": tuple(d["hidden_dims"])})


@dataclass
class PromptParams:
    """Visual prompt V_f and text prompt V_g; the only trainable parameters."""

    visual: torch.Tensor
    text: torch.Tensor

    def __post_init__(self):
        for name in ("visual", "text"):
            t = getattr(self, name)
            if t.ndim != 2:
                raise ValueError(f"{name} prompt must be a matrix, got shape {tuple(t.shape)}")
            if not torch.all(torch.isfinite(t)):
                raise ValueError(f"{name} prompt has non-finite entries")

    @classmethod
    def zeros(cls, config: ModelConfig) -> "PromptParams":
        return cls(torch.zeros(config.prompt_len_visual, config.visual_prompt_dim, dtype=DTYPE),
                   torch.zeros(config.prompt_len_text, config.text_prompt_dim, dtype=DTYPE))

    @classmethod
    def random(cls, config: ModelConfig, seed: int, scale: float = 0.1) -> "PromptParams":
        g = torch.Generator().manual_seed(seed)
        v = scale * torch.randn(config.prompt_len_visual, config.visual_prompt_dim, generator=g, dtype=DTYPE)
        t = scale * torch.randn(config.prompt_len_text, config.text_prompt_dim, generator=g, dtype=DTYPE)
        return cls(v, t)

    def clone(self) -> "PromptParams":
        return PromptParams(self.visual.detach().clone(), self.text.detach().clone())

    def tensors(self) -> tuple[torch.Tensor, torch.Tensor]:
        return self.visual, self.text

    def check_shapes(self, config: ModelConfig) -> None:
        want_v = (config.prompt_len_visual, config.visual_prompt_dim)
        want_t = (config.prompt_len_text, config.text_prompt_dim)
        if tuple(self.visual.shape) != want_v or tuple(self.text.shape) != want_t:
            raise ValueError(f"prompt shapes {tuple(self.visual.shape)}, {tuple(self.text.shape)} "
                             f"do not match config {want_v}, {want_t}")

    def equal(self, other: "PromptParams") -> bool:
        return torch.equal(self.visual, other.visual) and torch.equal(self.text, other.text)


@dataclass(frozen=True)
class GradientRecord:
    visual: torch.Tensor
    text: torch.Tensor


# ---------------------------------------------------------------------------
# vocabulary

_MEMBER = re.compile(r"^(.*\S)\s+(\d+)$")


def _seed_for(*parts) -> int:
    return zlib.crc32("\x1f".join(str(p) for p in parts).encode()) & 0x7FFFFFFF


def _gauss(seed: int, dim: int) -> torch.Tensor:
    return torch.randn(dim, generator=torch.Generator().manual_seed(seed), dtype=DTYPE)


def fresh_token(name: str, config: ModelConfig) -> torch.Tensor:
    """Deterministic embedding for an out-of-distribution token.

    Names of the form ``"<prefix> <i>"`` belong to a family: they share a base
    vector drawn for the prefix and differ by ``token_spread`` times a member
    vector. Any other name gets an independent Gaussian embedding.
    """
    m = _MEMBER.match(name)
    if m:
        prefix, idx = m.group(1), int(m.group(2))
        base = _gauss(_seed_for(config.rng_seed, "family", prefix), config.token_dim)
        member = _gauss(_seed_for(config.rng_seed, "member", prefix, idx), config.token_dim)
        return base + config.token_spread * member
    return _gauss(_seed_for(config.rng_seed, "token", name), config.token_dim)


@dataclass
class ClassVocabulary:
    original_classes: tuple[str, ...]
    embeddings: dict[str, torch.Tensor] = field(default_factory=dict)

    def __post_init__(self):
        self.original_classes = tuple(self.original_classes)
        if len(self.original_classes) < 2:
            raise ValueError("need at least two original classes")
        if len(set(self.original_classes)) != len(self.original_classes):
            raise ValueError("original class names must be unique")

    def __contains__(self, name: str) -> bool:
        return name in self.embeddings

    def lookup(self, names: Sequence[str]) -> torch.Tensor:
        missing = [n for n in names if n not in self.embeddings]
        if missing:
            raise KeyError(f"unknown class token(s): {missing}")
        return torch.stack([self.embeddings[n] for n in names])

    def verification_tokens(self) -> list[str]:
        orig = set(self.original_classes)
        return [n for n in self.embeddings if n not in orig]


# ---------------------------------------------------------------------------
# model


@dataclass
class DualEncoderModel:
    """Frozen encoder weights plus the class vocabulary."""

    config: ModelConfig
    image_w1: torch.Tensor
    image_w2: torch.Tensor
    text_w1: torch.Tensor
    text_w2: torch.Tensor
    vocab: ClassVocabulary

    @property
    def original_classes(self) -> tuple[str, ...]:
        return self.vocab.original_classes

    def frozen_arrays(self) -> dict[str, torch.Tensor]:
        return {"image_w1": self.image_w1, "image_w2": self.image_w2,
                "text_w1": self.text_w1, "text_w2": self.text_w2}


def init_encoders(config: ModelConfig) -> dict[str, torch.Tensor]:
    """Gaussian weights with std 1/sqrt(fan_in), reproducible from ``rng_seed``."""
    g = torch.Generator().manual_seed(config.rng_seed)
    hi, ht = config.hidden_dims
    F = config.feature_dim

    def draw(rows, cols):
        return torch.randn(rows, cols, generator=g, dtype=DTYPE) / cols ** 0.5

    return {"image_w1": draw(hi, config.input_dim), "image_w2": draw(F, hi),
            "text_w1": draw(ht, config.token_dim), "text_w2": draw(F, ht)}


def _pool(p: torch.Tensor):
    return p.mean(0) if p.shape[0] else 0.0


def _as_batch(x, dim: int, what: str) -> torch.Tensor:
    x = torch.as_tensor(x, dtype=DTYPE)
    if x.ndim == 1:
        x = x[None]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"{what} must have {dim} entries per row, got shape {tuple(x.shape)}")
    if not torch.all(torch.isfinite(x)):
        raise ValueError(f"{what} contains non-finite values")
    return x


def _encode(w1, w2, inp, prompt, site):
    if site == "input":
        h = torch.tanh((inp + _pool(prompt)) @ w1.T)
    else:
        h = torch.tanh(inp @ w1.T) + _pool(prompt)
    out = h @ w2.T
    return out / out.norm(dim=-1, keepdim=True)


def encode_image(model: DualEncoderModel, prompts: PromptParams, x) -> torch.Tensor:
    """Unit-norm image features, shape (batch, feature_dim). Accepts one sample or a batch."""
    xb = _as_batch(x, model.config.input_dim, "image input")
    return _encode(model.image_w1, model.image_w2, xb, prompts.visual, model.config.prompt_site)


def encode_tokens(model: DualEncoderModel, prompts: PromptParams, tokens: torch.Tensor) -> torch.Tensor:
    tb = _as_batch(tokens, model.config.token_dim, "token embedding")
    return _encode(model.text_w1, model.text_w2, tb, prompts.text, model.config.prompt_site)


def encode_class(model: DualEncoderModel, prompts: PromptParams, classes: Sequence[str] | str) -> torch.Tensor:
    """Unit-norm class features for token names; unknown names raise KeyError."""
    names = [classes] if isinstance(classes, str) else list(classes)
    return encode_tokens(model, prompts, model.vocab.lookup(names))


def similarity_logits(model: DualEncoderModel, prompts: PromptParams, x, classes: Sequence[str]) -> torch.Tensor:
    """cos(f(x), g(c_j)) / temperature for every sample and class, shape (batch, len(classes))."""
    if len(classes) == 0:
        raise ValueError("class list is empty")
    return encode_image(model, prompts, x) @ encode_class(model, prompts, classes).T / model.config.temperature


def predict_probabilities(logits: torch.Tensor) -> torch.Tensor:
    if not torch.all(torch.isfinite(logits)):
        raise ValueError("logits must be finite")
    return torch.softmax(logits, dim=-1)


def gradient(loss_fn: Callable[[PromptParams], torch.Tensor], prompts: PromptParams) -> GradientRecord:
    """Gradient of a scalar loss with respect to both prompt matrices (autograd)."""
    v = prompts.visual.detach().clone().requires_grad_(True)
    t = prompts.text.detach().clone().requires_grad_(True)
    loss = loss_fn(PromptParams(v, t))
    if loss.ndim != 0:
        raise ValueError("loss must be a scalar")
    if not torch.isfinite(loss):
        raise FloatingPointError(f"loss is not finite: {loss.item()}")
    if not loss.requires_grad:
        return GradientRecord(torch.zeros_like(v), torch.zeros_like(t))
    gv, gt = torch.autograd.grad(loss, (v, t), allow_unused=True)
    return GradientRecord(torch.zeros_like(v) if gv is None else gv.detach(),
                          torch.zeros_like(t) if gt is None else gt.detach())


def trainable(prompts: PromptParams) -> PromptParams:
    """Detached copy whose tensors require grad."""
    return PromptParams(prompts.visual.detach().clone().requires_grad_(True),
                        prompts.text.detach().clone().requires_grad_(True))


# ---------------------------------------------------------------------------
# construction


def ground_class_tokens(weights: dict[str, torch.Tensor], config: ModelConfig, class_means) -> torch.Tensor:
    """Fit one token per class so its text feature points at the class-mean image feature.

    Stands in for contrastive pretraining: afterwards the promptless model
    classifies the class means zero-shot.
    """
    mu = torch.as_tensor(np.asarray(class_means), dtype=DTYPE)
    g = torch.Generator().manual_seed(_seed_for(config.rng_seed, "class-tokens"))
    tokens = torch.randn(mu.shape[0], config.token_dim, generator=g, dtype=DTYPE)
    if config.ground_steps == 0:
        return tokens
    with torch.no_grad():
        target = _encode(weights["image_w1"], weights["image_w2"], mu,
                         torch.zeros(0, config.visual_prompt_dim, dtype=DTYPE), config.prompt_site)
    tokens.requires_grad_(True)
    opt = torch.optim.Adam([tokens], lr=config.ground_lr)
    empty = torch.zeros(0, config.text_prompt_dim, dtype=DTYPE)
    for _ in range(config.ground_steps):
        feats = _encode(weights["text_w1"], weights["text_w2"], tokens, empty, config.prompt_site)
        loss = -(feats * target).sum(-1).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
    return tokens.detach()


DEFAULT_EXTRA_TOKENS = ("Target 1", "Target 2", "Target 3", "Target 4",
                        "Miqi 1", "Miqi 2", "Miqi 3", "Miqi 4", "Target")


def build_model(config: ModelConfig, class_means, class_names: Sequence[str] | None = None,
                extra_tokens: Iterable[str] = DEFAULT_EXTRA_TOKENS) -> DualEncoderModel:
    """Draw frozen encoders, ground the class tokens and register out-of-distribution tokens."""
    means = np.asarray(class_means, dtype=np.float64)
    if means.ndim != 2 or means.shape[1] != config.input_dim:
        raise ValueError(f"class_means must be (K, {config.input_dim})")
    names = list(class_names) if class_names is not None else [f"class {k}" for k in range(means.shape[0])]
    if len(names) != means.shape[0]:
        raise ValueError("one class name per class mean is required")
    weights = init_encoders(config)
    vocab = ClassVocabulary(tuple(names))
    for name, emb in zip(names, ground_class_tokens(weights, config, means)):
        vocab.embeddings[name] = emb
    for name in extra_tokens:
        if name in vocab.embeddings:
            raise ValueError(f"token {name!r} collides with an original class")
        vocab.embeddings[name] = fresh_token(name, config)
    return DualEncoderModel(config, vocab=vocab, **weights)


def with_tokens(model: DualEncoderModel, names: Iterable[str]) -> DualEncoderModel:
    """Copy of ``model`` with additional fresh tokens registered (frozen weights shared)."""
    vocab = ClassVocabulary(model.vocab.original_classes, dict(model.vocab.embeddings))
    for name in names:
        if name not in vocab.embeddings:
            vocab.embeddings[name] = fresh_token(name, model.config)
    return DualEncoderModel(model.config, model.image_w1, model.image_w2, model.text_w1,
                            model.text_w2, vocab)


class ModelOracle:
    """Query-only view of a (model, prompts) pair, returning numpy probabilities."""

    def __init__(self, model: DualEncoderModel, prompts: PromptParams):
        self.model = model
        self.prompts = prompts

    def logits(self, x, classes: Sequence[str]) -> torch.Tensor:
        with torch.no_grad():
            return similarity_logits(self.model, self.prompts, x, classes)

    def query(self, x, classes: Sequence[str]) -> np.ndarray:
        return predict_probabilities(self.logits(x, classes)).numpy()


# ---------------------------------------------------------------------------
# checkpoints


class CheckpointError(ValueError):
    """Raised for unreadable or corrupted checkpoint files."""


class CheckpointVersionError(CheckpointError):
    """Raised when a checkpoint declares an unsupported format version."""


def _write_array(buf, name: str, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    raw = name.encode()
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<I", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    buf.write(arr.tobytes())


def _read_exact(buf, n: int) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise CheckpointError("checkpoint truncated")
    return data


def _read_array(buf) -> tuple[str, np.ndarray]:
    (nlen,) = struct.unpack("<I", _read_exact(buf, 4))
    name = _read_exact(buf, nlen).decode()
    (ndim,) = struct.unpack("<I", _read_exact(buf, 4))
    shape = struct.unpack(f"<{ndim}Q", _read_exact(buf, 8 * ndim))
    count = int(np.prod(shape)) if ndim else 1
    arr = np.frombuffer(_read_exact(buf, 8 * count), dtype="<f8").reshape(shape)
    return name, arr.astype(np.float64)


def save_checkpoint(model: DualEncoderModel, prompts: PromptParams, path, extra: dict | None = None) -> None:
    """Write frozen weights, vocabulary and prompts in a self-describing binary format.

    Layout: magic, uint32 version, uint32-length JSON header, uint32 array
    count, then named little-endian float64 arrays with shape headers, and a
    trailing CRC32 of everything before it.
    """
    header = {"config": model.config.to_dict(), "original_classes": list(model.original_classes),
              "tokens": list(model.vocab.embeddings), "extra": extra or {}}
    arrays = {k: v.numpy() for k, v in model.frozen_arrays().items()}
    arrays.update({f"token:{n}": e.numpy() for n, e in model.vocab.embeddings.items()})
    arrays["prompt:visual"] = prompts.visual.detach().numpy()
    arrays["prompt:text"] = prompts.text.detach().numpy()

    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    raw = json.dumps(header, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        _write_array(buf, name, arr)
    body = buf.getvalue()
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def load_checkpoint(path, with_extra: bool = False):
    """Inverse of :func:`save_checkpoint`; returns ``(model, prompts)``."""
    data = Path(path).read_bytes()
    if len(data) < len(CHECKPOINT_MAGIC) + 8 or not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", data[len(CHECKPOINT_MAGIC):len(CHECKPOINT_MAGIC) + 4])
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {CHECKPOINT_VERSION}")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupt")
    buf = io.BytesIO(body[len(CHECKPOINT_MAGIC) + 4:])
    try:
        (hlen,) = struct.unpack("<I", _read_exact(buf, 4))
        header = json.loads(_read_exact(buf, hlen).decode())
        (count,) = struct.unpack("<I", _read_exact(buf, 4))
        arrays = dict(_read_array(buf) for _ in range(count))
    except (UnicodeDecodeError, json.JSONDecodeError, struct.error) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from exc

    def t(name):
        return torch.from_numpy(arrays[name].copy())

    config = ModelConfig.from_dict(header["config"])
    vocab = ClassVocabulary(tuple(header["original_classes"]),
                            {n: t(f"token:{n}") for n in header["tokens"]})
    model = DualEncoderModel(config, t("image_w1"), t("image_w2"), t("text_w1"), t("text_w2"), vocab)
    prompts = PromptParams(t("prompt:visual"), t("prompt:text"))
    if with_extra:
        return model, prompts, header.get("extra", {})
    return model, prompts
