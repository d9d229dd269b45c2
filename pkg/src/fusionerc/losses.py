"""Extractor objective (adaptive-margin triplet, variance, covariance) and cross-entropy."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Dict, Tuple

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class TripletDistances:
    d_ap: float
    d_an: float
    d_pn: float

    def __post_init__(self):
        if min(self.d_ap, self.d_an, self.d_pn) < 0:
            raise ValueError(f"distances must be non-negative: {self}")


@dataclass(frozen=True)
class MarginComponents:
    m_sim: float
    m_dissim: float
    m_am: float


@dataclass
class ExtractorLossConfig:
    """Weights of the extractor objective and the regulariser settings.

    ``margin_gradient`` controls whether the adaptive margin is
    differentiated (the exact gradient of the loss value) or held
    constant per step, so the triplet gradient is ``+1`` on the
    anchor-positive distance and ``-1/2`` on the other two.
    """

    lambda_amt: float = 20.0
    lambda_cov: float = 5.0
    lambda_var: float = 1.0
    eps: float = 1e-4
    squared_covariance: bool = True
    margin_gradient: bool = False

    def __post_init__(self):
        if min(self.lambda_amt, self.lambda_cov, self.lambda_var) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.eps <= 0:
            raise ValueError("eps must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def pairwise_distance(u, v) -> float:
    u, v = np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ShapeError(f"distance between vectors of shape {u.shape} and {v.shape}")
    return float(np.sqrt(np.sum((u - v) ** 2)))


def adaptive_margin(d_ap: float, d_an: float) -> MarginComponents:
    m_sim = 1.0 + 2.0 / math.exp(4.0 * d_ap)
    m_dissim = 1.0 + 2.0 / math.exp(-4.0 * d_an + 4.0)
    return MarginComponents(m_sim, m_dissim, m_sim + m_dissim)


def amt_loss(t: TripletDistances) -> float:
    return t.d_ap - (t.d_an + t.d_pn) / 2.0 + adaptive_margin(t.d_ap, t.d_an).m_am


def margin_tensor(d_ap, d_an) -> Tensor:
    d_ap, d_an = T.as_tensor(d_ap), T.as_tensor(d_an)
    return 2.0 + 2.0 * T.exp(-4.0 * d_ap) + 2.0 * T.exp(4.0 * d_an - 4.0)


def amt_loss_tensor(d_ap, d_an, d_pn, margin_gradient: bool = True) -> Tensor:
    """Per-triplet adaptive-margin loss; no hinge, so it may be negative."""
    d_ap, d_an, d_pn = T.as_tensor(d_ap), T.as_tensor(d_an), T.as_tensor(d_pn)
    if margin_gradient:
        margin = margin_tensor(d_ap, d_an)
    else:
        margin = Tensor(2.0 + 2.0 * np.exp(-4.0 * d_ap.data) + 2.0 * np.exp(4.0 * d_an.data - 4.0))
    return d_ap - (d_an + d_pn) * 0.5 + margin


def triplet_distances(za, zp, zn) -> Tuple[Tensor, Tensor, Tensor]:
    za, zp, zn = T.as_tensor(za), T.as_tensor(zp), T.as_tensor(zn)
    if not za.shape == zp.shape == zn.shape:
        raise ShapeError(f"triplet batches differ in shape: {za.shape}, {zp.shape}, {zn.shape}")
    return T.row_norm(za - zp), T.row_norm(za - zn), T.row_norm(zp - zn)


def _centered(z: Tensor) -> Tensor:
    if z.ndim != 2:
        raise ShapeError(f"representation batch must be N x d, got {z.shape}")
    if z.shape[0] < 2:
        raise ValueError(f"variance/covariance need at least 2 representations, got {z.shape[0]}")
    return z - T.mean(z, axis=0, keepdims=True)


def variance_loss(z, eps: float = 1e-4) -> Tensor:
    """Mean over dimensions of ``1 - sqrt(Var + eps)`` with the unbiased variance."""
    zc = _centered(T.as_tensor(z))
    n = zc.shape[0]
    var = T.tsum(zc * zc, axis=0) * (1.0 / (n - 1))
    return T.mean(1.0 - T.sqrt(var + eps))


def covariance_matrix(z) -> Tensor:
    zc = _centered(T.as_tensor(z))
    return T.matmul(T.transpose(zc), zc) * (1.0 / (zc.shape[0] - 1))


def covariance_loss(z, squared: bool = True) -> Tensor:
    """Off-diagonal covariance penalty divided by the dimension.

    ``squared=False`` gives the raw signed off-diagonal sum, which is
    unbounded below and kept only for comparison.
    """
    z = T.as_tensor(z)
    cov = covariance_matrix(z)
    d = cov.shape[0]
    off = Tensor(1.0 - np.eye(d))
    terms = cov * cov * off if squared else cov * off
    return T.tsum(terms) * (1.0 / d)


def combine_extractor_loss(amt, cov, var, cfg: ExtractorLossConfig):
    return cfg.lambda_amt * amt + cfg.lambda_cov * cov + cfg.lambda_var * var


def extractor_loss(za, zp, zn, cfg: ExtractorLossConfig = ExtractorLossConfig()) -> Tuple[Tensor, Dict[str, float]]:
    """Weighted triplet + covariance + variance objective over an anchor/positive/negative batch.

    The regularisers are summed over the three batches. Returns the scalar
    loss tensor and a dict of the unweighted components.
    """
    za, zp, zn = T.as_tensor(za), T.as_tensor(zp), T.as_tensor(zn)
    d_ap, d_an, d_pn = triplet_distances(za, zp, zn)
    amt = T.mean(amt_loss_tensor(d_ap, d_an, d_pn, cfg.margin_gradient))
    cov = covariance_loss(za, cfg.squared_covariance) + covariance_loss(zp, cfg.squared_covariance) \
        + covariance_loss(zn, cfg.squared_covariance)
    var = variance_loss(za, cfg.eps) + variance_loss(zp, cfg.eps) + variance_loss(zn, cfg.eps)
    total = combine_extractor_loss(amt, cov, var, cfg)
    parts = {
        "amt": amt.item(), "cov": cov.item(), "var": var.item(), "total": total.item(),
        "d_ap": float(d_ap.data.mean()), "d_an": float(d_an.data.mean()),
    }
    return total, parts


LOG_FLOOR = 1e-12


def cross_entropy(probs, labels) -> Tensor:
    """Mean negative log-probability of the labelled class over all utterances.

    ``probs`` has shape ``(..., C)``; ``labels`` matches the leading shape.
    """
    probs = T.as_tensor(probs)
    labels = np.asarray(labels)
    if labels.shape != probs.shape[:-1]:
        raise ShapeError(f"labels {labels.shape} do not match probabilities {probs.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        if labels.size and not np.all(labels == np.round(labels)):
            raise ValueError("labels must be integers")
        labels = labels.astype(np.int64)
    n_classes = probs.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"label outside [0, {n_classes}): {labels.min()}..{labels.max()}")
    flat = T.reshape(probs, (-1, n_classes))
    picked = flat[np.arange(flat.shape[0]), labels.reshape(-1)]
    return -T.mean(T.clamped_log(picked, LOG_FLOOR))
