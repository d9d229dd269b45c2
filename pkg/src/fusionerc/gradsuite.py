"""Finite-difference sweep over every differentiable building block.

Each entry builds a fresh random case from a generator and returns a scalar
closure plus the tensors to check. Module entries check the module's
parameters together with its inputs.
"""

from __future__ import annotations

import time
import zlib
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from . import tensor as T
from .gradcheck import gradcheck
from .losses import ExtractorLossConfig, amt_loss_tensor, covariance_loss, cross_entropy, extractor_loss, variance_loss
from .model import AttentionFusionLayer, DialogModel, EncoderBlock, ModelConfig, MultiHeadAttention
from .tensor import Tensor

Case = Tuple[Callable[[], Tensor], List[Tensor], List[str]]
Builder = Callable[[np.random.Generator], Case]


def _leaves(*arrays) -> List[Tensor]:
    return [Tensor(a, requires_grad=True) for a in arrays]


def _weighted(op, arrays, rng) -> Case:
    """Reduce an arbitrary-shaped op output to a scalar with fixed random weights."""
    inputs = _leaves(*arrays)
    with T.no_grad():
        shape = op(*inputs).shape
    w = Tensor(rng.normal(size=shape))
    return (lambda: T.tsum(op(*inputs) * w)), inputs, [f"x{i}" for i in range(len(inputs))]


def _op(fn_of_rng) -> Builder:
    def build(rng):
        arrays, op = fn_of_rng(rng)
        return _weighted(op, arrays, rng)
    return build


def _positive(rng, shape):
    return rng.uniform(0.5, 2.0, size=shape)


def _dropout_case(rng):
    seed = int(rng.integers(2 ** 31))
    return [rng.normal(size=(4, 5))], lambda x: T.dropout(x, 0.3, np.random.default_rng(seed), True)


def _conv_case(rng):
    s, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    arrays = [rng.normal(size=(2, 2, 5, 5)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)]
    return arrays, lambda x, w, b: T.conv2d(x, w, b, stride=s, padding=pad)


OPS: Dict[str, Builder] = {
    "add": _op(lambda r: ([r.normal(size=(3, 4)), r.normal(size=(4,))], T.add)),
    "sub": _op(lambda r: ([r.normal(size=(2, 1, 3)), r.normal(size=(4, 3))], T.sub)),
    "mul": _op(lambda r: ([r.normal(size=(3, 4)), r.normal(size=(3, 1))], T.mul)),
    "div": _op(lambda r: ([r.normal(size=(3, 4)), _positive(r, (4,))], T.div)),
    "neg": _op(lambda r: ([r.normal(size=(5,))], T.neg)),
    "power": _op(lambda r: ([_positive(r, (3, 3))], lambda a: T.power(a, 2.5))),
    "exp": _op(lambda r: ([r.normal(size=(3, 3))], T.exp)),
    "log": _op(lambda r: ([_positive(r, (3, 3))], T.log)),
    "clamped_log": _op(lambda r: ([_positive(r, (3, 3))], T.clamped_log)),
    "sqrt": _op(lambda r: ([_positive(r, (3, 3))], T.sqrt)),
    "tanh": _op(lambda r: ([r.normal(size=(3, 3))], T.tanh)),
    "relu": _op(lambda r: ([r.normal(size=(4, 4))], T.relu)),
    "gelu": _op(lambda r: ([r.normal(size=(4, 4))], T.gelu)),
    "sum": _op(lambda r: ([r.normal(size=(3, 4, 2))], lambda a: T.tsum(a, axis=1, keepdims=True))),
    "mean": _op(lambda r: ([r.normal(size=(3, 4, 2))], lambda a: T.mean(a, axis=(0, 2)))),
    "reshape": _op(lambda r: ([r.normal(size=(2, 6))], lambda a: T.reshape(a, (3, 4)))),
    "transpose": _op(lambda r: ([r.normal(size=(2, 3, 4))], lambda a: T.transpose(a, (2, 0, 1)))),
    "concat": _op(lambda r: ([r.normal(size=(2, 3)), r.normal(size=(2, 2))], lambda a, b: T.concat([a, b], 1))),
    "stack": _op(lambda r: ([r.normal(size=(2, 3)), r.normal(size=(2, 3))], lambda a, b: T.stack([a, b], 1))),
    "getitem": _op(lambda r: ([r.normal(size=(4, 3))], lambda a: T.getitem(a, ([0, 2, 0], slice(1, 3))))),
    "matmul": _op(lambda r: ([r.normal(size=(2, 3, 4)), r.normal(size=(4, 2))], T.matmul)),
    "linear": _op(lambda r: ([r.normal(size=(2, 3, 4)), r.normal(size=(4, 2)), r.normal(size=2)], T.linear)),
    "softmax": _op(lambda r: ([r.normal(size=(3, 4))], lambda a: T.softmax(a, axis=-1))),
    "layer_norm": _op(lambda r: ([r.normal(size=(3, 5)), r.normal(size=5), r.normal(size=5)], T.layer_norm)),
    "max_pool": _op(lambda r: ([r.normal(size=(5, 4))], lambda x: T.max_pool_over_axis(x, 0))),
    "row_norm": _op(lambda r: ([r.normal(size=(3, 4))], T.row_norm)),
    "l2_normalize": _op(lambda r: ([r.normal(size=(3, 4))], T.l2_normalize)),
    "dropout": _op(_dropout_case),
    "conv2d": _op(_conv_case),
}


def _unit_rows(rng, n, d):
    z = rng.normal(size=(n, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def _amt(rng) -> Case:
    inputs = _leaves(*(rng.uniform(0.1, 1.9, size=5) for _ in range(3)))
    return (lambda: T.mean(amt_loss_tensor(*inputs, margin_gradient=True))), inputs, ["d_ap", "d_an", "d_pn"]


def _var(rng) -> Case:
    (z,) = _leaves(rng.normal(size=(6, 4)))
    return (lambda: variance_loss(z)), [z], ["z"]


def _cov(rng) -> Case:
    (z,) = _leaves(rng.normal(size=(6, 4)))
    return (lambda: covariance_loss(z)), [z], ["z"]


def _extractor(rng) -> Case:
    inputs = _leaves(*(_unit_rows(rng, 5, 4) for _ in range(3)))
    cfg = ExtractorLossConfig(margin_gradient=True)
    return (lambda: extractor_loss(*inputs, cfg)[0]), inputs, ["anchor", "positive", "negative"]


def _xent(rng) -> Case:
    (logits,) = _leaves(rng.normal(size=(2, 3, 4)))
    labels = rng.integers(0, 4, size=(2, 3))
    return (lambda: cross_entropy(T.softmax(logits, -1), labels)), [logits], ["logits"]


LOSSES: Dict[str, Builder] = {
    "amt_loss": _amt,
    "variance_loss": _var,
    "covariance_loss": _cov,
    "extractor_loss": _extractor,
    "cross_entropy": _xent,
}


def _module_case(module, fn, extra: Sequence[Tensor], extra_names: Sequence[str]) -> Case:
    named = list(module.named_parameters())
    return fn, [p for _, p in named] + list(extra), [n for n, _ in named] + list(extra_names)


def _attention(rng) -> Case:
    att = MultiHeadAttention(4, 3, 2, rng)
    q, k, v = _leaves(rng.normal(size=(3, 4)), rng.normal(size=(3, 3)), rng.normal(size=(3, 4)))
    w = rng.normal(size=(3, 4))
    return _module_case(att, lambda: T.tsum(att(q, k, v) * w), [q, k, v], ["query", "key", "value"])


def _encoder_block(rng) -> Case:
    block = EncoderBlock(4, 2, 8, 0.0, rng, 1e-5)
    (x,) = _leaves(rng.normal(size=(3, 4)))
    w = rng.normal(size=(3, 4))
    return _module_case(block, lambda: T.tsum(block(x) * w), [x], ["x"])


def _fusion_layer(rng) -> Case:
    layer = AttentionFusionLayer(4, {"a": 2, "v": 6}, 2, 0.0, rng)
    t, a, v = _leaves(rng.normal(size=(3, 4)), rng.normal(size=(3, 2)), rng.normal(size=(3, 6)))
    w = rng.normal(size=(3, 4))
    return _module_case(layer, lambda: T.tsum(layer(t, {"a": a, "v": v}) * w), [t, a, v], ["t", "a", "v"])


def _micro_model(rng) -> Case:
    cfg = ModelConfig(d_t=8, d_a=4, d_v=4, n_t=1, n_a=1, n_v=1, m=2, heads=2, dropout=0.0, n_classes=4,
                      seed=int(rng.integers(2 ** 31)))
    model = DialogModel(cfg)
    t, a, v = _leaves(rng.normal(size=(3, 8)), rng.normal(size=(3, 4)), rng.normal(size=(3, 4)))
    labels = rng.integers(0, 4, size=3)
    return _module_case(model, lambda: cross_entropy(model(t, a, v).probs, labels), [t, a, v],
                        ["f_t", "f_a", "f_v"])


MODULES: Dict[str, Builder] = {
    "attention": _attention,
    "encoder_block": _encoder_block,
    "fusion_layer": _fusion_layer,
    "micro_model": _micro_model,
}


@dataclass
class SuiteEntry:
    name: str
    group: str
    cases: int
    max_rel_error: float
    seconds: float

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def run_suite(cases: int = 20, module_cases: int = 3, max_entries: int = 12, seed: int = 0,
              groups: Sequence[str] = ("ops", "losses", "modules")) -> List[SuiteEntry]:
    """Run every registered case; module entries probe ``max_entries`` coordinates per tensor."""
    registry = {"ops": OPS, "losses": LOSSES, "modules": MODULES}
    results = []
    for group in groups:
        for name, build in registry[group].items():
            rng = np.random.default_rng(zlib.crc32(f"{seed}:{name}".encode()))
            n = module_cases if group == "modules" else cases
            start = time.perf_counter()
            worst = 0.0
            for _ in range(n):
                fn, inputs, names = build(rng)
                limit = max_entries if group == "modules" else None
                res = gradcheck(fn, inputs, names, max_entries=limit, seed=int(rng.integers(2 ** 31)))
                worst = max(worst, res.max_rel_error)
            results.append(SuiteEntry(name, group, n, worst, time.perf_counter() - start))
    return results
