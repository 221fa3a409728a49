# src/core/losses.py
"""
Training objectives with analytic gradients: cross-entropy, batch-hard triplet,
domain-aware center regularization, the center-loss baseline, and the overall
weighted sum.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from src.utils.constants import DEFAULT_VALUES
from src.utils.exceptions import LossError

logger = logging.getLogger(__name__)

DCR_MODES = ('sample', 'domain_center')


@dataclass
class LossValue:
    """Scalar loss plus gradients keyed by input name"""

    value: float
    grads: Dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class ClassCenters:
    """Per-class feature centers for the center loss"""

    centers: np.ndarray
    update_rate: float = DEFAULT_VALUES['CENTER_UPDATE_RATE']

    @classmethod
    def zeros(cls, num_classes: int, dim: int, update_rate: float = DEFAULT_VALUES['CENTER_UPDATE_RATE'],
              dtype=np.float32) -> 'ClassCenters':
        if not 0 < update_rate <= 1:
            raise LossError(f"update_rate must lie in (0, 1], got {update_rate}")
        return cls(centers=np.zeros((num_classes, dim), dtype=dtype), update_rate=update_rate)

    @property
    def num_classes(self) -> int:
        return int(self.centers.shape[0])

    def update(self, features: np.ndarray, labels: np.ndarray):
        """Move each class present in the batch toward its batch mean"""
        centers = self.centers.copy()
        for label in np.unique(labels):
            batch_mean = features[labels == label].mean(axis=0)
            centers[label] += self.update_rate * (batch_mean - centers[label])
        self.centers = centers.astype(self.centers.dtype)


def _as_labels(labels: Sequence[int], count: int) -> np.ndarray:
    arr = np.asarray(labels, dtype=np.int64)
    if arr.shape != (count,):
        raise LossError(f"expected {count} labels, got shape {arr.shape}")
    return arr


def cross_entropy(logits: np.ndarray, labels: Sequence[int]) -> LossValue:
    """Mean negative log-softmax of the true class; gradient (softmax - onehot) / N"""
    n, k = logits.shape
    y = _as_labels(labels, n)
    bad = sorted(set(int(c) for c in y if c < 0 or c >= k))
    if bad:
        raise LossError(f"labels {bad} outside [0, {k - 1}]")

    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    value = float(-log_probs[np.arange(n), y].mean())

    grad = np.exp(log_probs)
    grad[np.arange(n), y] -= 1.0
    return LossValue(value=value, grads={'logits': grad / n})


def pairwise_distances(embeddings: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance matrix"""
    diff = embeddings[:, None, :] - embeddings[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=2))


def batch_hard_triplet(embeddings: np.ndarray, labels: Sequence[int],
                       margin: float = DEFAULT_VALUES['TRIPLET_MARGIN']) -> LossValue:
    """
    Batch-hard triplet loss averaged over anchors.

    For each anchor the farthest same-label sample and the closest other-label
    sample are mined; ties go to the lowest index. Gradients flow only through
    active hinges, and a zero distance contributes a zero subgradient.
    """
    n = embeddings.shape[0]
    y = _as_labels(labels, n)
    unique, counts = np.unique(y, return_counts=True)
    if len(unique) < 2:
        raise LossError("batch-hard mining needs at least two labels in the batch")
    singletons = unique[counts < 2].tolist()
    if singletons:
        raise LossError(f"labels {singletons} have a single sample, so no positive exists")

    dist = pairwise_distances(embeddings)
    same = y[:, None] == y[None, :]
    not_self = ~np.eye(n, dtype=bool)

    pos_dist = np.where(same & not_self, dist, -np.inf)
    neg_dist = np.where(~same, dist, np.inf)
    hardest_pos = pos_dist.argmax(axis=1)
    hardest_neg = neg_dist.argmin(axis=1)

    anchors = np.arange(n)
    d_ap = dist[anchors, hardest_pos]
    d_an = dist[anchors, hardest_neg]
    hinge = d_ap - d_an + margin
    active = hinge > 0
    value = float(np.where(active, hinge, 0.0).mean())

    grad = np.zeros_like(embeddings)
    for a in np.flatnonzero(active):
        p, q = hardest_pos[a], hardest_neg[a]
        if d_ap[a] > 0:
            unit = (embeddings[a] - embeddings[p]) / d_ap[a]
            grad[a] += unit
            grad[p] -= unit
        if d_an[a] > 0:
            unit = (embeddings[a] - embeddings[q]) / d_an[a]
            grad[a] -= unit
            grad[q] += unit
    return LossValue(value=value, grads={'embeddings': grad / n})


def dcr_loss(features: np.ndarray, domain_ids: Optional[Sequence[int]] = None,
             mode: str = 'sample') -> LossValue:
    """
    Domain-aware center regularization.

    mode='sample': sum over samples of the squared distance to the batch mean.
    mode='domain_center': sum over domains of the squared distance between the
    domain's mean feature and the batch mean.
    """
    if mode not in DCR_MODES:
        raise LossError(f"unknown dcr mode '{mode}', expected one of {DCR_MODES}")
    n = features.shape[0]
    if n < 1:
        raise LossError("dcr needs at least one sample")
    center = features.mean(axis=0)

    if mode == 'sample':
        deviation = features - center
        return LossValue(value=float((deviation ** 2).sum()), grads={'features': 2.0 * deviation})

    if domain_ids is None:
        raise LossError("domain_center mode needs domain ids")
    domains = _as_labels(domain_ids, n)
    grad = np.zeros_like(features)
    value = 0.0
    offsets = []
    for domain in np.unique(domains):
        members = domains == domain
        offset = features[members].mean(axis=0) - center
        value += float((offset ** 2).sum())
        grad[members] += 2.0 * offset / members.sum()
        offsets.append(offset)
    grad -= 2.0 * np.sum(offsets, axis=0) / n
    return LossValue(value=value, grads={'features': grad})


def center_loss(features: np.ndarray, labels: Sequence[int], centers: ClassCenters,
                update: bool = True) -> LossValue:
    """Half the summed squared distance to each sample's class center"""
    n = features.shape[0]
    y = _as_labels(labels, n)
    unknown = sorted(set(int(c) for c in y if c < 0 or c >= centers.num_classes))
    if unknown:
        raise LossError(f"unknown class ids {unknown}")

    deviation = features - centers.centers[y]
    result = LossValue(value=float(0.5 * (deviation ** 2).sum()), grads={'features': deviation.copy()})
    if update:
        centers.update(features, y)
    return result


def overall_loss(l_cls: float, l_tri: float, l_dcr: float,
                 lam: float = DEFAULT_VALUES['DCR_LAMBDA']) -> float:
    """L_cls + L_tri + lambda * L_reg"""
    terms = {'l_cls': l_cls, 'l_tri': l_tri, 'l_dcr': l_dcr, 'lambda': lam}
    bad = [name for name, v in terms.items() if not np.isfinite(v)]
    if bad:
        raise LossError(f"non-finite loss terms: {', '.join(bad)}")
    return float(l_cls + l_tri + lam * l_dcr)
