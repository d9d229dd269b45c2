"""Dialog-level network: per-modality encoder stacks, attention fusion, classifier.

Inputs are per-utterance embeddings shaped ``(k, d)`` for one dialog or
``(M, k, d)`` for ``M`` dialogs of equal length. Text-space queries and
values attend over audio- or visual-keyed scores in every fusion layer.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import tensor as T
from .nn import Dropout, LayerNorm, Linear, Module
from .tensor import Tensor

MODALITIES = ("t", "a", "v")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    d_t: int = 32
    d_a: int = 16
    d_v: int = 16
    n_t: int = 1
    n_a: int = 1
    n_v: int = 1
    m: int = 5
    heads: int = 4
    hidden: Optional[int] = None  # encoder feed-forward width; None -> 4 x model dim
    dropout: float = 0.4
    n_classes: int = 7
    positional_encoding: bool = False
    fusion: str = "attention"
    modalities: Tuple[str, ...] = MODALITIES
    ln_eps: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        self.modalities = tuple(self.modalities)
        self.validate()

    def validate(self) -> None:
        if not set(self.modalities) <= set(MODALITIES) or not self.modalities:
            raise ConfigError(f"modalities must be a non-empty subset of t,a,v: {self.modalities}")
        if self.fusion not in ("attention", "concat"):
            raise ConfigError(f"fusion must be 'attention' or 'concat', got {self.fusion!r}")
        if self.m < 0 or min(self.n_t, self.n_a, self.n_v) < 0:
            raise ConfigError("layer counts must be non-negative")
        if self.heads < 1:
            raise ConfigError("heads must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.n_classes < 2:
            raise ConfigError("need at least two classes")
        for mod in self.modalities:
            if self.dim(mod) < 1:
                raise ConfigError(f"dimension of modality {mod} must be positive")
        if self.uses_fusion:
            if "t" not in self.modalities or len(self.key_modalities) == 0:
                raise ConfigError("attention fusion needs text plus audio and/or visual")
            if self.d_t % self.heads:
                raise ConfigError(f"d_t={self.d_t} not divisible by heads={self.heads}")
        for mod in self.modalities:
            if self.depth(mod) > 0 and self.dim(mod) % self.heads:
                raise ConfigError(f"d_{mod}={self.dim(mod)} not divisible by heads={self.heads}")

    @property
    def uses_fusion(self) -> bool:
        return self.fusion == "attention" and self.m > 0

    @property
    def key_modalities(self) -> Tuple[str, ...]:
        return tuple(mod for mod in ("a", "v") if mod in self.modalities)

    def dim(self, mod: str) -> int:
        return {"t": self.d_t, "a": self.d_a, "v": self.d_v}[mod]

    def depth(self, mod: str) -> int:
        return {"t": self.n_t, "a": self.n_a, "v": self.n_v}[mod]

    @property
    def final_dim(self) -> int:
        return sum(self.dim(mod) for mod in self.modalities)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["modalities"] = list(self.modalities)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class DialogForwardState:
    f_t: Optional[Tensor]
    f_a: Optional[Tensor]
    f_v: Optional[Tensor]
    fusion_outputs: List[Tensor] = field(default_factory=list)
    f_final: Optional[Tensor] = None
    logits: Optional[Tensor] = None
    probs: Optional[Tensor] = None


def sinusoidal_positions(k: int, d: int) -> np.ndarray:
    pos = np.arange(k)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


class MultiHeadAttention(Module):
    """Scaled dot-product attention with a separate key input width.

    Queries and values live in ``d_model``; keys come from a ``d_key``-wide
    input and are projected into the same per-head space.
    """

    def __init__(self, d_model: int, d_key: int, heads: int, rng: np.random.Generator):
        if d_model % heads:
            raise ConfigError(f"model width {d_model} not divisible by {heads} heads")
        self.heads = heads
        self.head_dim = d_model // heads
        self.q_proj = Linear(d_model, d_model, rng)
        self.k_proj = Linear(d_key, d_model, rng)
        self.v_proj = Linear(d_model, d_model, rng)
        self.out_proj = Linear(d_model, d_model, rng)
        self.last_weights: Optional[np.ndarray] = None

    def _split(self, x: Tensor) -> Tensor:
        lead = x.shape[:-1]
        x = T.reshape(x, lead + (self.heads, self.head_dim))
        nd = x.ndim
        axes = list(range(nd - 3)) + [nd - 2, nd - 3, nd - 1]
        return T.transpose(x, axes)  # (..., heads, k, head_dim)

    def _merge(self, x: Tensor) -> Tensor:
        nd = x.ndim
        axes = list(range(nd - 3)) + [nd - 2, nd - 3, nd - 1]
        x = T.transpose(x, axes)
        return T.reshape(x, x.shape[:-2] + (self.heads * self.head_dim,))

    def __call__(self, query: Tensor, key: Tensor, value: Tensor) -> Tensor:
        if query.shape[:-1] != key.shape[:-1] or query.shape[:-1] != value.shape[:-1]:
            raise T.ShapeError(f"attention inputs disagree on utterance axes: "
                               f"{query.shape}, {key.shape}, {value.shape}")
        q = self._split(self.q_proj(query))
        k = self._split(self.k_proj(key))
        v = self._split(self.v_proj(value))
        scores = T.matmul(q, T.swap_last(k)) * (1.0 / math.sqrt(self.head_dim))
        weights = T.softmax(scores, axis=-1)
        self.last_weights = weights.data
        return self.out_proj(self._merge(T.matmul(weights, v)))


class EncoderBlock(Module):
    """Post-norm transformer encoder block (self-attention + GELU feed-forward)."""

    def __init__(self, d: int, heads: int, ff: int, dropout: float, rng: np.random.Generator, eps: float):
        self.attn = MultiHeadAttention(d, d, heads, rng)
        self.norm1 = LayerNorm(d, eps)
        self.ff1 = Linear(d, ff, rng)
        self.ff2 = Linear(ff, d, rng)
        self.norm2 = LayerNorm(d, eps)
        self.drop = Dropout(dropout, rng)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.norm1(x + self.drop(self.attn(x, x, x)))
        return self.norm2(h + self.drop(self.ff2(T.gelu(self.ff1(h)))))


class EncoderStack(Module):
    """``n`` encoder blocks, each wrapped in an extra stack-level skip connection."""

    def __init__(self, d: int, n: int, heads: int, ff: int, dropout: float, rng: np.random.Generator, eps: float):
        self.blocks = [EncoderBlock(d, heads, ff, dropout, rng, eps) for _ in range(n)]

    def __call__(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x) + x
        return x


class AttentionFusionLayer(Module):
    """Text queries/values, one attention branch per key modality, joint projection back to ``d_t``."""

    def __init__(self, d_t: int, key_dims: Dict[str, int], heads: int, dropout: float, rng: np.random.Generator):
        self.key_modalities = tuple(key_dims)
        self.branches = [MultiHeadAttention(d_t, key_dims[mod], heads, rng) for mod in self.key_modalities]
        self.fc = Linear(d_t * len(self.branches), d_t, rng)
        self.drop = Dropout(dropout, rng)

    def __call__(self, text_like: Tensor, keys: Dict[str, Tensor]) -> Tensor:
        outs = []
        for mod, branch in zip(self.key_modalities, self.branches):
            key = keys[mod]
            if key.shape[:-1] != text_like.shape[:-1]:
                raise T.ShapeError(f"utterance count mismatch between text {text_like.shape} "
                                   f"and modality {mod} {key.shape}")
            outs.append(self.drop(branch(text_like, key, text_like)))
        joined = outs[0] if len(outs) == 1 else T.concat(outs, axis=-1)
        return self.drop(self.fc(joined))


class DialogModel(Module):
    def __init__(self, cfg: ModelConfig):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.rng = np.random.default_rng(cfg.seed + 1)  # dropout masks
        self.encoders = {}
        for mod in cfg.modalities:
            d = cfg.dim(mod)
            ff = cfg.hidden or 4 * d
            self.encoders[mod] = EncoderStack(d, cfg.depth(mod), cfg.heads, ff, cfg.dropout, rng, cfg.ln_eps)
        self.enc_t = self.encoders.get("t")
        self.enc_a = self.encoders.get("a")
        self.enc_v = self.encoders.get("v")
        key_dims = {mod: cfg.dim(mod) for mod in cfg.key_modalities}
        self.fusion = [AttentionFusionLayer(cfg.d_t, key_dims, cfg.heads, cfg.dropout, rng)
                       for _ in range(cfg.m if cfg.uses_fusion else 0)]
        self.fc1 = Linear(cfg.final_dim, cfg.d_t, rng)
        self.fc2 = Linear(cfg.d_t, cfg.n_classes, rng)
        self.drop = Dropout(cfg.dropout, self.rng)
        for module in self.modules():
            if isinstance(module, Dropout):
                module.rng = self.rng

    def encode(self, inputs: Dict[str, Tensor]) -> Dict[str, Tensor]:
        out = {}
        for mod in self.cfg.modalities:
            x = T.as_tensor(inputs[mod])
            if self.cfg.positional_encoding:
                x = x + sinusoidal_positions(x.shape[-2], x.shape[-1])
            out[mod] = self.encoders[mod](x)
        return out

    def fuse(self, feats: Dict[str, Tensor]) -> List[Tensor]:
        outputs = []
        text_like = feats["t"]
        keys = {mod: feats[mod] for mod in self.cfg.key_modalities}
        for layer in self.fusion:
            text_like = layer(text_like, keys)
            outputs.append(text_like)
        return outputs

    def classify(self, f_final: Tensor) -> Tuple[Tensor, Tensor]:
        logits = self.fc2(self.drop(T.gelu(self.fc1(f_final))))
        return logits, T.softmax(logits, axis=-1)

    def forward(self, f_it=None, f_ia=None, f_iv=None) -> DialogForwardState:
        given = {"t": f_it, "a": f_ia, "v": f_iv}
        inputs = {}
        for mod in self.cfg.modalities:
            if given[mod] is None:
                raise ValueError(f"modality {mod} is enabled but no features were given")
            x = T.as_tensor(given[mod])
            if x.shape[-1] != self.cfg.dim(mod):
                raise T.ShapeError(f"modality {mod}: expected width {self.cfg.dim(mod)}, got {x.shape}")
            inputs[mod] = x
        lengths = {x.shape[:-1] for x in inputs.values()}
        if len(lengths) != 1:
            raise T.ShapeError(f"modalities disagree on utterance count: {sorted(lengths)}")
        feats = self.encode(inputs)
        state = DialogForwardState(feats.get("t"), feats.get("a"), feats.get("v"))
        if self.fusion:
            state.fusion_outputs = self.fuse(feats)
            parts = [state.fusion_outputs[-1]] + [feats[mod] for mod in self.cfg.key_modalities]
        else:
            parts = [feats[mod] for mod in MODALITIES if mod in feats]
        state.f_final = parts[0] if len(parts) == 1 else T.concat(parts, axis=-1)
        state.logits, state.probs = self.classify(state.f_final)
        return state

    __call__ = forward

    def predict(self, f_it=None, f_ia=None, f_iv=None) -> np.ndarray:
        was_training = self.training
        self.eval()
        with T.no_grad():
            probs = self.forward(f_it, f_ia, f_iv).probs.data
        self.train(was_training)
        return probs
