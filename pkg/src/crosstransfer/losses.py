"""The three training loss terms and their weighted composition.

Per-sample admission weights (discriminator entropy, normalized to [0, 1])
and distillation intensities are plain numpy constants by design: they scale
losses but are never themselves differentiated, otherwise the discriminator
and the intensity rule could be gamed by the main objective.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

log = logging.getLogger(__name__)

LN2 = math.log(2.0)


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.5  # distillation term
    beta: float = 1.0   # domain discriminator term

    def validate(self):
        for name, v in (("alpha", self.alpha), ("beta", self.beta)):
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


@dataclass
class BatchLossBreakdown:
    l_y: float
    l_di: float
    l_da: float
    l_total: float
    w_da: np.ndarray
    w_pow: np.ndarray
    total_node: ad.Node


def admission_weights(domain_probs: np.ndarray, is_target: np.ndarray) -> np.ndarray:
    """Per-sample admission: 1 for native target records, normalized
    discriminator entropy for transferred ones.  Confidently-source records
    (prob near 0 or 1) are driven toward 0."""
    p = np.asarray(domain_probs, dtype=np.float64).reshape(-1)
    if p.shape != np.shape(is_target):
        raise ValueError(f"admission_weights: {p.shape} probs vs {np.shape(is_target)} flags")
    w = ad.binary_entropy(p) / LN2
    return np.where(is_target, 1.0, w)


def label_loss(probs: ad.Node, labels: np.ndarray, weights: np.ndarray) -> ad.Node:
    """(1/n) sum_i w_i * BCE(p_i, y_i) over the mixed training batch."""
    n = probs.value.shape[0]
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if len(weights) != n:
        raise ValueError(f"label_loss: {len(weights)} weights for {n} predictions")
    bce = ad.binary_cross_entropy(probs, labels)
    weighted = ad.mul(bce, weights.reshape(bce.value.shape[0], *([1] * (bce.value.ndim - 1))))
    return ad.mul(ad.sum_all(weighted), 1.0 / n)


def distill_loss(adapted: ad.Node, source_reps: np.ndarray, intensity: np.ndarray) -> ad.Node:
    """Mean of intensity_i * (1 - cos(adapted_i, source_i)); zero at alignment."""
    n = adapted.value.shape[0]
    intensity = np.asarray(intensity, dtype=np.float64).reshape(-1)
    if len(intensity) != n:
        raise ValueError(f"distill_loss: {len(intensity)} intensities for {n} rows")
    cos = ad.cosine_similarity(adapted, ad.wrap(source_reps))
    gap = ad.add(ad.neg(cos), 1.0)
    return ad.mul(ad.sum_all(ad.mul(gap, intensity)), 1.0 / n)


def domain_loss(domain_probs: ad.Node, domain_labels: np.ndarray) -> ad.Node:
    """Mean BCE of the discriminator on the mixed batch."""
    labels = np.asarray(domain_labels, dtype=np.float64)
    flat = labels.reshape(-1)
    if flat.all() or not flat.any():
        log.warning("domain_loss: single-class batch (%d samples)", flat.size)
    return ad.mean_all(ad.binary_cross_entropy(domain_probs, labels))


def combined_loss(
    probs: ad.Node,
    labels: np.ndarray,
    w_da: np.ndarray,
    weights: LossWeights,
    adapted: ad.Node | None = None,
    source_reps: np.ndarray | None = None,
    w_pow: np.ndarray | None = None,
    domain_probs: ad.Node | None = None,
    domain_labels: np.ndarray | None = None,
) -> BatchLossBreakdown:
    """Weighted sum of the three terms.  Terms with zero weight or missing
    inputs are skipped entirely, so the degenerate configuration reduces to
    the plain label loss, graph and all."""
    weights.validate()
    n = probs.value.shape[0]
    w_da = np.asarray(w_da, dtype=np.float64).reshape(-1)

    l_y = label_loss(probs, labels, w_da)
    total = l_y

    l_di_val = 0.0
    if w_pow is None:
        w_pow = np.zeros(0)
    if weights.alpha > 0 and adapted is not None:
        if source_reps is None:
            raise ValueError("combined_loss: distillation needs source representations")
        l_di = distill_loss(adapted, source_reps, w_pow)
        l_di_val = float(l_di.value)
        total = ad.add(total, ad.mul(l_di, weights.alpha))

    l_da_val = 0.0
    if weights.beta > 0 and domain_probs is not None:
        if domain_labels is None:
            raise ValueError("combined_loss: domain term needs labels")
        l_da = domain_loss(domain_probs, domain_labels)
        l_da_val = float(l_da.value)
        total = ad.add(total, ad.mul(l_da, weights.beta))

    return BatchLossBreakdown(
        l_y=float(l_y.value),
        l_di=l_di_val,
        l_da=l_da_val,
        l_total=float(total.value),
        w_da=w_da,
        w_pow=np.asarray(w_pow, dtype=np.float64).reshape(-1),
        total_node=total,
    )
