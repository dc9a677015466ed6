"""Training objective: batch-hard triplet + label-smoothed cross-entropy.

The triplet term mines, per anchor, the farthest same-identity sample and
the nearest different-identity sample under the true (non-squared)
Euclidean distance, then averages the hinge max(0, d+ - d- + margin).
Mining ties break toward the lowest sample index. The classification term
smooths the one-hot target with a uniform distribution over classes; the
total is their weighted sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MiningError
from .tensor import Tensor, log_softmax, mul, relu, reshape, sqrt, sub, take_pairs, tmean, tsum


@dataclass
class LossConfig:
    margin: float = 0.3
    epsilon: float = 0.1
    balance: float = 1.0
    num_classes: int = 2

    def __post_init__(self):
        if self.margin < 0:
            raise ValueError(f"margin must be >= 0, got {self.margin}")
        if not 0 <= self.epsilon < 1:
            raise ValueError(f"smoothing rate must be in [0,1), got {self.epsilon}")
        if self.num_classes < 2:
            raise ValueError(f"class count must be >= 2, got {self.num_classes}")


@dataclass
class Batch:
    embeddings: Tensor  # (N, D)
    logits: Tensor  # (N, K)
    labels: np.ndarray  # (N,) identity ids

    def __post_init__(self):
        self.labels = np.asarray(self.labels)


def pairwise_euclidean(f: Tensor) -> Tensor:
    """All-pairs distance matrix via explicit differences (exact diagonal)."""
    n, d = f.shape
    a = reshape(f, (n, 1, d))
    b = reshape(f, (1, n, d))
    diff = sub(a, b)
    return sqrt(tsum(mul(diff, diff), axis=2))


def hard_mining_indices(dist: np.ndarray, labels: np.ndarray):
    """Per anchor: farthest positive and nearest negative (first on ties)."""
    n = len(labels)
    pos_idx = np.empty(n, dtype=np.intp)
    neg_idx = np.empty(n, dtype=np.intp)
    for i in range(n):
        same = labels == labels[i]
        same[i] = False
        if not same.any():
            raise MiningError(labels[i])
        diff = labels != labels[i]
        if not diff.any():
            raise MiningError(labels[i])
        pos_candidates = np.where(same)[0]
        neg_candidates = np.where(diff)[0]
        pos_idx[i] = pos_candidates[np.argmax(dist[i, pos_candidates])]
        neg_idx[i] = neg_candidates[np.argmin(dist[i, neg_candidates])]
    return pos_idx, neg_idx


def triplet_batch_hard(b: Batch, margin: float) -> Tensor:
    """Mean over anchors of max(0, d+ - d- + margin) with batch-hard mining."""
    dist = pairwise_euclidean(b.embeddings)
    pos_idx, neg_idx = hard_mining_indices(dist.data, b.labels)
    anchors = np.arange(len(b.labels))
    d_pos = take_pairs(dist, anchors, pos_idx)
    d_neg = take_pairs(dist, anchors, neg_idx)
    return tmean(relu(sub(d_pos, d_neg) + margin))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Plain mean cross-entropy against integer labels."""
    labels = _checked_labels(labels, logits.shape[1])
    logp = log_softmax(logits, axis=1)
    picked = take_pairs(logp, np.arange(len(labels)), labels)
    return -tmean(picked)


def _checked_labels(labels, k):
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"label out of range [0,{k}): {labels}")
    return labels.astype(np.intp)


def ce_label_smoothed(logits: Tensor, labels, epsilon: float) -> Tensor:
    """Cross-entropy against (1-eps)*onehot + eps/K targets.

    epsilon = 0 recovers plain cross-entropy bit for bit.
    """
    n, k = logits.shape
    labels = _checked_labels(labels, k)
    if epsilon == 0.0:
        return cross_entropy(logits, labels)
    logp = log_softmax(logits, axis=1)
    weights = np.full((n, k), epsilon / k)
    weights[np.arange(n), labels] += 1.0 - epsilon
    return -(1.0 / n) * tsum(mul(logp, Tensor(weights)))


def uniform_log_loss(logits: Tensor) -> Tensor:
    """-(1/K) mean_i sum_k log p_{i,k}: the uniform-target component."""
    logp = log_softmax(logits, axis=1)
    return -tmean(tmean(logp, axis=1))


def loss_components(b: Batch, cfg: LossConfig):
    """(classification, triplet, total) terms of the training objective."""
    l_cls = ce_label_smoothed(b.logits, b.labels, cfg.epsilon)
    l_tri = triplet_batch_hard(b, cfg.margin)
    return l_cls, l_tri, l_cls + cfg.balance * l_tri


def total_loss(b: Batch, cfg: LossConfig) -> Tensor:
    """Classification term plus balance-weighted triplet term."""
    return loss_components(b, cfg)[2]
