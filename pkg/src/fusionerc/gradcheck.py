"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .tensor import Tensor, no_grad


@dataclass
class GradcheckResult:
    max_rel_error: float
    per_input: Dict[str, float] = field(default_factory=dict)
    n_checked: int = 0

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def gradcheck(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    names: Optional[Sequence[str]] = None,
    h: float = 1e-5,
    max_entries: Optional[int] = None,
    seed: int = 0,
    floor: float = 1e-6,
) -> GradcheckResult:
    """Compare ``backward`` gradients of ``fn()`` against central differences.

    ``fn`` closes over ``inputs`` and must be deterministic. Inputs are
    perturbed in place and restored. With ``max_entries`` only that many
    randomly chosen coordinates per input are probed.

    The error for each coordinate is ``|a - n| / max(|a|, |n|, floor)``;
    ``floor`` keeps round-off on exactly-zero gradients from dominating.
    """
    names = list(names) if names is not None else [f"input{i}" for i in range(len(inputs))]
    for t in inputs:
        t.grad = None
    loss = fn()
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    rng = np.random.default_rng(seed)
    result = GradcheckResult(max_rel_error=0.0)
    with no_grad():
        for name, t, a in zip(names, inputs, analytic):
            flat = t.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = rng.choice(flat.size, size=max_entries, replace=False)
            numeric = np.empty(len(idx))
            for j, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + h
                plus = fn().item()
                flat[i] = orig - h
                minus = fn().item()
                flat[i] = orig
                numeric[j] = (plus - minus) / (2 * h)
            err = relative_error(a.reshape(-1)[idx], numeric, floor)
            worst = float(err.max()) if err.size else 0.0
            result.per_input[name] = worst
            result.max_rel_error = max(result.max_rel_error, worst)
            result.n_checked += len(idx)
    return result


def module_gradcheck(fn: Callable[[], Tensor], module, extra: Sequence[Tensor] = (),
                     **kwargs) -> GradcheckResult:
    """``gradcheck`` over every parameter of ``module`` plus ``extra`` tensors."""
    named = list(module.named_parameters())
    inputs: List[Tensor] = [p for _, p in named] + list(extra)
    names = [n for n, _ in named] + [f"extra{i}" for i in range(len(extra))]
    return gradcheck(fn, inputs, names=names, **kwargs)
