"""Triplet feature extractor: small residual conv encoder plus linear projector.

The same network serves audio (mel spectrogram patches) and visual
(face / scene patches); only the input shape and training data differ.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import List, Sequence, Tuple

import numpy as np

from . import tensor as T
from .losses import ExtractorLossConfig, extractor_loss, triplet_distances
from .nn import Conv2d, Linear, Module
from .optim import AdamW
from .tensor import ShapeError, Tensor


@dataclass
class ExtractorConfig:
    input_shape: Tuple[int, int, int] = (48, 128, 1)  # H x W x channels
    encoder_channels: Tuple[int, ...] = (16, 32, 64)
    representation_dim: int = 300
    normalize_output: bool = True
    seed: int = 0

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        self.encoder_channels = tuple(int(v) for v in self.encoder_channels)
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ValueError(f"input_shape must be H x W x C with positive sizes, got {self.input_shape}")
        if not self.encoder_channels or min(self.encoder_channels) < 1:
            raise ValueError("encoder_channels must be a non-empty list of positive widths")
        if self.representation_dim < 1:
            raise ValueError("representation_dim must be >= 1")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["input_shape"] = list(self.input_shape)
        out["encoder_channels"] = list(self.encoder_channels)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExtractorConfig":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown extractor config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class Triplet:
    anchor: np.ndarray
    positive: np.ndarray
    negative: np.ndarray
    labels: Tuple[int, int, int]


class ResidualStage(Module):
    """3x3 stride-2 conv, ReLU, 3x3 conv, plus a 1x1 stride-2 projection shortcut."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        self.conv1 = Conv2d(c_in, c_out, 3, rng, stride=2, padding=1)
        self.conv2 = Conv2d(c_out, c_out, 3, rng, stride=1, padding=1)
        self.shortcut = Conv2d(c_in, c_out, 1, rng, stride=2, padding=0)

    def __call__(self, x: Tensor) -> Tensor:
        return T.relu(self.conv2(T.relu(self.conv1(x))) + self.shortcut(x))


class TripletExtractor(Module):
    def __init__(self, cfg: ExtractorConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        widths = (cfg.input_shape[2],) + cfg.encoder_channels
        self.stages = [ResidualStage(a, b, rng) for a, b in zip(widths[:-1], widths[1:])]
        self.projector = Linear(cfg.encoder_channels[-1], cfg.representation_dim, rng)

    @property
    def embedding_dim(self) -> int:
        return self.cfg.encoder_channels[-1]

    def _as_batch(self, x) -> Tuple[Tensor, bool]:
        x = T.as_tensor(x)
        single = x.ndim == 3
        if single:
            x = T.reshape(x, (1,) + x.shape)
        if x.ndim != 4 or x.shape[1:] != self.cfg.input_shape:
            raise ShapeError(f"extractor expects inputs of shape {self.cfg.input_shape}, got {x.shape}")
        return T.transpose(x, (0, 3, 1, 2)), single

    def encode(self, x) -> Tensor:
        """Embeddings of shape ``(N, C_last)``, or ``(C_last,)`` for a single input."""
        h, single = self._as_batch(x)
        for stage in self.stages:
            h = stage(h)
        emb = T.mean(h, axis=(2, 3))
        return T.reshape(emb, (emb.shape[1],)) if single else emb

    def project(self, e) -> Tensor:
        z = self.projector(T.as_tensor(e))
        return T.l2_normalize(z, axis=-1) if self.cfg.normalize_output else z

    def __call__(self, x) -> Tensor:
        return self.project(self.encode(x))

    def represent(self, x) -> np.ndarray:
        with T.no_grad():
            return self(x).data


def sample_triplet_indices(labels: Sequence[int], batch: int, rng: np.random.Generator) -> np.ndarray:
    """``(batch, 3)`` index rows: anchor and positive share a class, negative differs."""
    labels = np.asarray(labels)
    classes = np.unique(labels)
    members = {c: np.flatnonzero(labels == c) for c in classes}
    eligible = [c for c in classes if len(members[c]) >= 2]
    if len(classes) < 2:
        raise ValueError("triplet sampling needs at least two classes")
    if not eligible:
        raise ValueError("no class has two samples to form an anchor/positive pair")
    out = np.empty((batch, 3), dtype=np.int64)
    for i in range(batch):
        c = eligible[rng.integers(len(eligible))]
        a, p = rng.choice(members[c], size=2, replace=False)
        others = [o for o in classes if o != c]
        nc = others[rng.integers(len(others))]
        out[i] = (a, p, members[nc][rng.integers(len(members[nc]))])
    return out


def sample_triplets(inputs: np.ndarray, labels: Sequence[int], batch: int, seed: int) -> List[Triplet]:
    labels = np.asarray(labels)
    idx = sample_triplet_indices(labels, batch, np.random.default_rng(seed))
    return [Triplet(inputs[a], inputs[p], inputs[n], (int(labels[a]), int(labels[p]), int(labels[n])))
            for a, p, n in idx]


def triplet_arrays(triplets: Sequence[Triplet]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    return (np.stack([t.anchor for t in triplets]), np.stack([t.positive for t in triplets]),
            np.stack([t.negative for t in triplets]))


def extractor_train_step(model: TripletExtractor, triplets: Sequence[Triplet],
                         loss_cfg: ExtractorLossConfig, optimizer: AdamW) -> Tuple[float, dict]:
    """One forward/backward/update over a triplet batch; returns the loss and its parts."""
    a, p, n = triplet_arrays(triplets)
    b = len(triplets)
    z = model(np.concatenate([a, p, n], axis=0))
    za, zp, zn = z[:b], z[b:2 * b], z[2 * b:]
    loss, parts = extractor_loss(za, zp, zn, loss_cfg)
    if not np.isfinite(loss.item()):
        raise FloatingPointError(f"extractor loss is not finite: {loss.item()}")
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return loss.item(), parts


def mean_triplet_distances(model: TripletExtractor, triplets: Sequence[Triplet]) -> Tuple[float, float]:
    """Mean anchor-positive and anchor-negative distances in eval mode."""
    a, p, n = triplet_arrays(triplets)
    with T.no_grad():
        d_ap, d_an, _ = triplet_distances(model(a), model(p), model(n))
    return float(d_ap.data.mean()), float(d_an.data.mean())


def make_blob_patches(n_per_class: int, n_classes: int, shape: Tuple[int, int, int],
                      separation: float = 1.0, noise: float = 1.0, seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Class-templated gaussian patches: ``separation * template_c + noise``."""
    rng = np.random.default_rng(seed)
    templates = rng.normal(size=(n_classes,) + tuple(shape))
    labels = np.repeat(np.arange(n_classes), n_per_class)
    x = separation * templates[labels] + noise * rng.normal(size=(len(labels),) + tuple(shape))
    order = rng.permutation(len(labels))
    return x[order], labels[order]
