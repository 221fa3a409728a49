# src/validation/evaluation.py
"""
Evaluation of trained models: unseen-domain classification accuracy, cosine
retrieval mAP/CMC, domain-center diagnostics, a 2-D PCA projection and a
linear domain probe.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from src.core.data import LabeledDataset
from src.core.losses import cross_entropy
from src.utils.constants import DEFAULT_VALUES
from src.utils.exceptions import EvaluationError

logger = logging.getLogger(__name__)


@dataclass
class RetrievalResult:
    mean_ap: float
    cmc: Dict[int, float]
    average_precisions: np.ndarray = field(repr=False, default=None)


@dataclass
class EvalReport:
    """Metrics of one evaluated model"""

    target_acc: float
    map: float
    cmc: Dict[int, float]
    center_distances: Dict[int, float]
    source_acc: Dict[int, float] = field(default_factory=dict)
    center_distance_mean: float = 0.0

    def validate(self):
        scores = [self.target_acc, self.map] + list(self.cmc.values()) + list(self.source_acc.values())
        if any(not 0.0 <= s <= 1.0 for s in scores):
            raise EvaluationError(f"scores outside [0, 1]: {scores}")
        ranks = sorted(self.cmc)
        if any(self.cmc[a] > self.cmc[b] for a, b in zip(ranks, ranks[1:])):
            raise EvaluationError(f"CMC is not monotone: {self.cmc}")

    def to_dict(self) -> dict:
        data = asdict(self)
        data['cmc'] = {str(k): v for k, v in self.cmc.items()}
        data['center_distances'] = {str(k): v for k, v in self.center_distances.items()}
        data['source_acc'] = {str(k): v for k, v in self.source_acc.items()}
        return data

    def metrics_row(self) -> Dict[str, float]:
        return {
            'target_acc': self.target_acc,
            'map': self.map,
            'cmc1': self.cmc.get(1, float('nan')),
            'cmc5': self.cmc.get(5, float('nan')),
            'cmc10': self.cmc.get(10, float('nan')),
            'center_distance': self.center_distance_mean,
        }


def _require_eval(model):
    if model.training:
        raise EvaluationError("model must be in eval mode")


def embed(model, dataset: LabeledDataset) -> Tuple[np.ndarray, np.ndarray]:
    """(embeddings, logits) of a dataset through an eval-mode model"""
    _require_eval(model)
    if len(dataset) == 0:
        raise EvaluationError("empty dataset")
    x = np.asarray(dataset.features, dtype=model.dtype)
    return model.forward(x, dataset.domain_ids)


def evaluate_classification(model, dataset: LabeledDataset) -> float:
    """Top-1 accuracy over shared class ids"""
    _, logits = embed(model, dataset)
    predictions = logits.argmax(axis=1)
    return float((predictions == dataset.class_ids).mean())


def cosine_distance(query: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64)
    g = np.asarray(gallery, dtype=np.float64)
    q = q / np.maximum(np.linalg.norm(q, axis=1, keepdims=True), 1e-12)
    g = g / np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-12)
    return 1.0 - q @ g.T


def retrieval_metrics(query_features: np.ndarray, query_ids: Sequence[int],
                      gallery_features: np.ndarray, gallery_ids: Sequence[int],
                      ranks: Sequence[int] = DEFAULT_VALUES['CMC_RANKS']) -> RetrievalResult:
    """
    Rank the gallery by cosine distance for every query.

    Ties keep gallery order. AP is the mean precision at each relevant hit;
    CMC(k) is the fraction of queries with a relevant item in the top k.
    """
    q_ids = np.asarray(query_ids)
    g_ids = np.asarray(gallery_ids)
    if len(q_ids) == 0:
        raise EvaluationError("no queries")
    missing = sorted(set(int(i) for i in q_ids) - set(int(i) for i in g_ids))
    if missing:
        raise EvaluationError(f"query identities {missing} are absent from the gallery")

    order = np.argsort(cosine_distance(query_features, gallery_features), axis=1, kind='stable')
    matches = g_ids[order] == q_ids[:, None]

    first_hit = matches.argmax(axis=1)
    cmc = {int(k): float((first_hit < k).mean()) for k in ranks}

    hits = np.cumsum(matches, axis=1)
    positions = np.arange(1, matches.shape[1] + 1)
    precision = hits / positions
    ap = (precision * matches).sum(axis=1) / matches.sum(axis=1)
    return RetrievalResult(mean_ap=float(ap.mean()), cmc=cmc, average_precisions=ap)


def evaluate_retrieval(model, query: LabeledDataset, gallery: LabeledDataset,
                       ranks: Sequence[int] = DEFAULT_VALUES['CMC_RANKS']) -> RetrievalResult:
    q_emb, _ = embed(model, query)
    g_emb, _ = embed(model, gallery)
    return retrieval_metrics(q_emb, query.class_ids, g_emb, gallery.class_ids, ranks)


def domain_center_stats(features: np.ndarray, domain_ids: Sequence[int]) -> Dict[int, float]:
    """Distance of every domain's mean feature to the overall mean"""
    domains = np.asarray(domain_ids)
    present = np.unique(domains)
    if len(present) < 2:
        raise EvaluationError(f"need at least 2 domains, got {len(present)}")
    f = np.asarray(features, dtype=np.float64)
    center = f.mean(axis=0)
    return {int(d): float(np.linalg.norm(f[domains == d].mean(axis=0) - center)) for d in present}


def _top_direction(cov: np.ndarray, start: np.ndarray, against: Optional[np.ndarray],
                   iterations: int, tol: float) -> np.ndarray:
    v = start / np.linalg.norm(start)
    for _ in range(iterations):
        w = cov @ v
        if against is not None:
            w -= (w @ against) * against
        norm = np.linalg.norm(w)
        if norm < 1e-300:
            return v
        w /= norm
        if np.linalg.norm(w - v) < tol:
            return w
        v = w
    return v


def pca_project_2d(features: np.ndarray, iterations: int = 1000,
                   tol: float = 1e-12) -> Tuple[np.ndarray, bool]:
    """
    Project onto the top two principal components by power iteration.

    Returns:
        (N x 2 coordinates ordered by variance, degenerate flag)
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3:
        raise EvaluationError(f"need at least 3 samples in an N x B matrix, got shape {x.shape}")
    centered = x - x.mean(axis=0)
    row_norms = np.linalg.norm(centered, axis=1)
    scale = max(1.0, float(np.abs(x).max()))
    if row_norms.max() <= 1e-12 * scale:
        logger.warning("Zero-variance input: PCA projection is all zeros")
        return np.zeros((x.shape[0], 2)), True

    cov = centered.T @ centered / x.shape[0]
    first = _top_direction(cov, centered[row_norms.argmax()], None, iterations, tol)
    coords = np.zeros((x.shape[0], 2))
    coords[:, 0] = centered @ first

    residual = centered - np.outer(coords[:, 0], first)
    residual_norms = np.linalg.norm(residual, axis=1)
    if x.shape[1] > 1 and residual_norms.max() > 1e-9 * row_norms.max():
        deflated = cov - (first @ cov @ first) * np.outer(first, first)
        second = _top_direction(deflated, residual[residual_norms.argmax()], first, iterations, tol)
        coords[:, 1] = centered @ second
    return coords, False


def _standardize(x: np.ndarray) -> np.ndarray:
    std = x.std(axis=0)
    return (x - x.mean(axis=0)) / np.where(std > 0, std, 1.0)


def linear_probe_accuracy(features: np.ndarray, labels: Sequence[int], steps: int = 300,
                          lr: float = 0.5) -> float:
    """
    Held-out accuracy of a softmax-regression probe.

    Even-indexed samples train the probe by full-batch gradient descent and
    odd-indexed samples score it.
    """
    x = _standardize(np.asarray(features, dtype=np.float64).reshape(len(labels), -1))
    y = np.asarray(labels, dtype=np.int64)
    classes, y_index = np.unique(y, return_inverse=True)
    if len(classes) < 2 or len(y) < 4:
        raise EvaluationError("a probe needs at least 2 classes and 4 samples")
    train, test = np.arange(0, len(y), 2), np.arange(1, len(y), 2)

    weight = np.zeros((x.shape[1], len(classes)))
    bias = np.zeros(len(classes))
    for _ in range(steps):
        loss = cross_entropy(x[train] @ weight + bias, y_index[train])
        grad = loss.grads['logits']
        weight -= lr * x[train].T @ grad
        bias -= lr * grad.sum(axis=0)
    predictions = (x[test] @ weight + bias).argmax(axis=1)
    return float((predictions == y_index[test]).mean())


def evaluate_model(model, benchmark) -> EvalReport:
    """Target accuracy, target retrieval, source accuracy per domain, and center distances"""
    was_training = model.training
    model.eval()
    try:
        target_acc = evaluate_classification(model, benchmark.target)
        retrieval = evaluate_retrieval(model, benchmark.query, benchmark.gallery)
        source_acc = {int(s.domains[0]): evaluate_classification(model, s) for s in benchmark.sources}
        pool = benchmark.source_pool()
        if benchmark.num_sources >= 2:
            embeddings, _ = embed(model, pool)
            distances = domain_center_stats(embeddings, pool.domain_ids)
        else:
            distances = {int(pool.domains[0]): 0.0}
    finally:
        if was_training:
            model.train()

    report = EvalReport(
        target_acc=target_acc,
        map=retrieval.mean_ap,
        cmc=retrieval.cmc,
        center_distances=distances,
        source_acc=source_acc,
        center_distance_mean=float(np.mean(list(distances.values()))),
    )
    report.validate()
    return report
