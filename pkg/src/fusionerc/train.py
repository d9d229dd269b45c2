"""Training loops for the dialog classifier and the triplet extractor."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .checkpoint import save_model
from .data import Corpus, dialog_batches, split_validation, stack_batch
from .extractor import (
    ExtractorConfig,
    TripletExtractor,
    extractor_train_step,
    mean_triplet_distances,
    sample_triplets,
)
from .losses import ExtractorLossConfig, cross_entropy
from .metrics import MetricsReport, compute_metrics
from .model import DialogModel, ModelConfig
from .optim import AdamW, AdamWConfig


@dataclass
class TrainConfig:
    lr: float = 5e-4
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 50
    batch_dialogs: int = 4
    seed: int = 0
    dropout: float = 0.4
    val_fraction: float = 0.1
    stop_at_train_accuracy: Optional[float] = None

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.dropout <= 0.5:
            raise ValueError(f"dropout must lie in [0, 0.5], got {self.dropout}")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.epochs < 1 or self.batch_dialogs < 1:
            raise ValueError("epochs and batch_dialogs must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")

    def optimizer_config(self) -> AdamWConfig:
        return AdamWConfig(lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.adam_eps,
                           weight_decay=self.weight_decay)


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: Optional[float]
    val_accuracy: Optional[float]

    def to_json(self) -> str:
        # repr-level float precision keeps logs bitwise comparable
        return json.dumps(dataclasses.asdict(self), sort_keys=True)


@dataclass
class TrainResult:
    model: DialogModel
    history: List[EpochLog] = field(default_factory=list)
    best_epoch: int = 0
    best_state: Dict[str, np.ndarray] = field(default_factory=dict)

    def best_model(self) -> DialogModel:
        model = DialogModel(self.model.cfg)
        model.load_state_dict(self.best_state)
        return model


def _features(model: DialogModel, text, audio, visual):
    mods = model.cfg.modalities
    return (text if "t" in mods else None, audio if "a" in mods else None, visual if "v" in mods else None)


def predict_corpus(model: DialogModel, corpus: Corpus) -> Tuple[np.ndarray, np.ndarray]:
    """Eval-mode probabilities and labels for every utterance, in corpus order."""
    probs = [model.predict(*_features(model, *rec.features())) for rec in corpus]
    return np.concatenate(probs), corpus.all_labels()


def evaluate(model: DialogModel, corpus: Corpus) -> MetricsReport:
    if len(corpus) == 0 or corpus.n_utterances == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    probs, labels = predict_corpus(model, corpus)
    return compute_metrics(labels, probs.argmax(-1), model.cfg.n_classes)


def _loss_and_accuracy(model: DialogModel, corpus: Corpus) -> Tuple[float, float]:
    probs, labels = predict_corpus(model, corpus)
    picked = np.maximum(probs[np.arange(len(labels)), labels], 1e-12)
    return float(-np.log(picked).mean()), float((probs.argmax(-1) == labels).mean())


def train_dialog_model(model_cfg: ModelConfig, corpus: Corpus, cfg: TrainConfig,
                       log: Optional[Callable[[EpochLog], None]] = None) -> TrainResult:
    """Train on whole-dialog batches with AdamW; keep the best validation state.

    Every source of randomness (initialisation, split, batch order, dropout)
    derives from ``cfg.seed`` so identical inputs reproduce bit for bit.
    Raises ``FloatingPointError`` as soon as a batch loss is not finite.
    """
    if len(corpus) == 0:
        raise ValueError("cannot train on an empty corpus")
    model_cfg = dataclasses.replace(model_cfg, dropout=cfg.dropout, seed=cfg.seed)
    if corpus.n_classes is not None and corpus.n_classes > model_cfg.n_classes:
        raise ValueError(f"corpus has {corpus.n_classes} classes but the model predicts {model_cfg.n_classes}")
    if corpus.dims is not None:
        for mod, d in zip("tav", corpus.dims):
            if mod in model_cfg.modalities and model_cfg.dim(mod) != d:
                raise ValueError(f"modality {mod}: corpus width {d} != model width {model_cfg.dim(mod)}")
    model = DialogModel(model_cfg)
    train_set, val_set = split_validation(corpus, cfg.val_fraction, seed=cfg.seed)
    optimizer = AdamW(model.parameters(), cfg.optimizer_config())
    order_rng = np.random.default_rng(cfg.seed + 2)
    result = TrainResult(model)
    best_key = None

    for epoch in range(1, cfg.epochs + 1):
        model.train()
        total, count = 0.0, 0
        for b, batch in enumerate(dialog_batches(train_set, cfg.batch_dialogs, order_rng)):
            text, audio, visual, labels = stack_batch(batch)
            loss = cross_entropy(model(*_features(model, text, audio, visual)).probs, labels)
            value = loss.item()
            if not math.isfinite(value):
                raise FloatingPointError(f"non-finite loss {value} at epoch {epoch}, batch {b}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += value * labels.size
            count += labels.size
        _, train_acc = _loss_and_accuracy(model, train_set)
        if len(val_set):
            val_loss, val_acc = _loss_and_accuracy(model, val_set)
            key = (val_acc, -val_loss)
        else:
            val_loss = val_acc = None
            key = (train_acc, -total / count)
        entry = EpochLog(epoch, total / count, train_acc, val_loss, val_acc)
        result.history.append(entry)
        if log is not None:
            log(entry)
        if best_key is None or key > best_key:
            best_key = key
            result.best_epoch = epoch
            result.best_state = {k: v.copy() for k, v in model.state_dict().items()}
        if cfg.stop_at_train_accuracy is not None and train_acc >= cfg.stop_at_train_accuracy:
            break
    return result


def write_training_outputs(result: TrainResult, out_dir, extra: Optional[dict] = None) -> Dict[str, Path]:
    """Write ``train_log.jsonl``, ``best.ckpt`` and ``final.ckpt``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"log": out / "train_log.jsonl", "best": out / "best.ckpt", "final": out / "final.ckpt"}
    paths["log"].write_text("".join(e.to_json() + "\n" for e in result.history))
    meta = dict(extra or {})
    save_model(paths["final"], result.model, {**meta, "epoch": len(result.history)})
    save_model(paths["best"], result.best_model(), {**meta, "epoch": result.best_epoch})
    return paths


def linear_probe_accuracy(x_train: np.ndarray, y_train: np.ndarray, x_test: np.ndarray, y_test: np.ndarray,
                          n_classes: int, ridge: float = 1e-3) -> float:
    """Held-out accuracy of a ridge least-squares fit to one-hot targets."""
    def design(x):
        return np.hstack([x, np.ones((len(x), 1))])

    a = design(x_train)
    targets = np.eye(n_classes)[y_train]
    w = np.linalg.solve(a.T @ a + ridge * np.eye(a.shape[1]), a.T @ targets)
    return float(((design(x_test) @ w).argmax(-1) == y_test).mean())


def modality_probe_accuracies(train: Corpus, test: Corpus, n_classes: int) -> Dict[str, float]:
    """Linear-probe accuracy of each single modality and of all three concatenated."""
    def gather(corpus, idx):
        return np.concatenate([rec.features()[idx] for rec in corpus])

    y_tr, y_te = train.all_labels(), test.all_labels()
    out = {}
    for idx, mod in enumerate("tav"):
        out[mod] = linear_probe_accuracy(gather(train, idx), y_tr, gather(test, idx), y_te, n_classes)
    joint_tr = np.hstack([gather(train, i) for i in range(3)])
    joint_te = np.hstack([gather(test, i) for i in range(3)])
    out["tav"] = linear_probe_accuracy(joint_tr, y_tr, joint_te, y_te, n_classes)
    return out


# -- extractor ---------------------------------------------------------
@dataclass
class ExtractorTrainConfig:
    steps: int = 200
    batch: int = 16
    lr: float = 1e-4
    weight_decay: float = 1e-6
    seed: int = 0
    held_out_fraction: float = 0.25

    def __post_init__(self):
        if self.steps < 1 or self.batch < 1:
            raise ValueError("steps and batch must be >= 1")
        if not self.lr >= 0:
            raise ValueError("lr must be non-negative")


@dataclass
class ExtractorStepLog:
    step: int
    loss: float
    parts: Dict[str, float]

    def to_json(self) -> str:
        return json.dumps({"step": self.step, "loss": self.loss, **self.parts}, sort_keys=True)


def train_extractor(inputs: np.ndarray, labels: Sequence[int], ext_cfg: ExtractorConfig,
                    loss_cfg: ExtractorLossConfig, cfg: ExtractorTrainConfig,
                    log: Optional[Callable[[ExtractorStepLog], None]] = None
                    ) -> Tuple[TripletExtractor, List[ExtractorStepLog], Dict[str, float]]:
    """Triplet training on a labelled sample set.

    A seeded held-out slice is kept aside; the returned summary holds mean
    anchor-positive / anchor-negative distances on triplets drawn from it, and
    is empty when that slice cannot form a triplet.
    """
    labels = np.asarray(labels)
    order = np.random.default_rng(cfg.seed).permutation(len(labels))
    n_held = int(round(cfg.held_out_fraction * len(labels)))
    held, train = order[:n_held], order[n_held:]
    model = TripletExtractor(dataclasses.replace(ext_cfg, seed=cfg.seed))
    optimizer = AdamW(model.parameters(), AdamWConfig(lr=cfg.lr, weight_decay=cfg.weight_decay))
    history = []
    seeds = np.random.default_rng(cfg.seed + 1).integers(2 ** 31, size=cfg.steps)
    for step in range(cfg.steps):
        trips = sample_triplets(inputs[train], labels[train], cfg.batch, int(seeds[step]))
        loss, parts = extractor_train_step(model, trips, loss_cfg, optimizer)
        entry = ExtractorStepLog(step + 1, loss, parts)
        history.append(entry)
        if log is not None:
            log(entry)
    summary: Dict[str, float] = {}
    try:
        held_triplets = sample_triplets(inputs[held], labels[held], 64, seed=cfg.seed + 3)
    except ValueError:
        held_triplets = []  # held-out slice too small to form a triplet
    if held_triplets:
        d_ap, d_an = mean_triplet_distances(model, held_triplets)
        summary = {"held_out_d_ap": d_ap, "held_out_d_an": d_an}
    return model, history, summary
