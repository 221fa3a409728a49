# src/validation/gradcheck.py
"""
Finite-difference verification of every analytic gradient: the normalization
layers, each loss, and the full model end to end in a 64-bit shadow copy.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from src.core.config import DmnConfig, ModelConfig
from src.core.losses import (
    ClassCenters,
    batch_hard_triplet,
    center_loss,
    cross_entropy,
    dcr_loss,
)
from src.core.model import build_model
from src.core.normlayers import NormLayerState, bn_forward_train, dmn_backward, dmn_forward_train
from src.core.numerics import ORACLE_DTYPE, RngStream, finite_diff_grad, relative_error
from src.core.partition import PartitionPolicy, sample_partition
from src.utils.constants import DEFAULT_VALUES

logger = logging.getLogger(__name__)

END_TO_END_STEP = 1e-6


@dataclass
class ComponentResult:
    name: str
    worst_error: float
    tolerance: float
    trials: int
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return self.worst_error <= self.tolerance


@dataclass
class GradcheckReport:
    results: List[ComponentResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def failed(self) -> List[str]:
        return [r.name for r in self.results if not r.passed]

    def worst(self, name: str) -> float:
        for result in self.results:
            if result.name == name:
                return result.worst_error
        raise KeyError(name)


def _random_domain_batch(rng: RngStream, min_domains: int = 2):
    """Random batch with 3-5 samples per domain, rank 2 or rank 4"""
    num_domains = int(rng.integers(min_domains, 5))
    # two-sample groups have an O(eps) input gradient that finite differences cannot resolve
    per_domain = rng.integers(3, 6, size=num_domains)
    channels = int(rng.integers(2, 5))
    domain_ids = np.concatenate([np.full(n, d) for d, n in enumerate(per_domain)])
    domain_ids = domain_ids[rng.permutation(len(domain_ids))]
    if rng.random() < 0.5:
        shape = (len(domain_ids), channels)
    else:
        shape = (len(domain_ids), channels, 2, 2)
    x = rng.normal(0.0, 1.0, size=shape) * rng.uniform(0.5, 2.0) + rng.normal()
    return x, domain_ids, num_domains, channels


def _random_state(channels: int, rng: RngStream) -> NormLayerState:
    state = NormLayerState.create(channels, dtype=ORACLE_DTYPE)
    state.gamma = rng.uniform(0.5, 1.5, size=channels)
    state.beta = rng.normal(0.0, 0.5, size=channels)
    return state


def _norm_errors(forward: Callable, x: np.ndarray, state: NormLayerState, rng: RngStream) -> float:
    """Worst relative error over grad_x, grad_gamma and grad_beta for f = sum(y * w)"""
    y, cache = forward(x, state)
    weights = rng.normal(size=y.shape)
    grad_x, grad_gamma, grad_beta = dmn_backward(weights, cache, state)

    def loss_x(value):
        return float((forward(value, state)[0] * weights).sum())

    def with_param(name: str):
        original = getattr(state, name)

        def loss(value):
            setattr(state, name, value)
            try:
                return float((forward(x, state)[0] * weights).sum())
            finally:
                setattr(state, name, original)
        return loss

    return max(
        relative_error(grad_x, finite_diff_grad(loss_x, x)),
        relative_error(grad_gamma, finite_diff_grad(with_param('gamma'), state.gamma)),
        relative_error(grad_beta, finite_diff_grad(with_param('beta'), state.beta)),
    )


def check_bn(rng: RngStream, trials: int) -> float:
    worst = 0.0
    for t in range(trials):
        trial_rng = rng.split(f'trial-{t}')
        x, _, _, channels = _random_domain_batch(trial_rng)
        state = _random_state(channels, trial_rng)
        worst = max(worst, _norm_errors(bn_forward_train, x, state, trial_rng))
    return worst


def check_dmn(rng: RngStream, trials: int) -> float:
    worst = 0.0
    for t in range(trials):
        trial_rng = rng.split(f'trial-{t}')
        x, domain_ids, num_domains, channels = _random_domain_batch(trial_rng)
        rule = 'd' if trial_rng.random() < 0.5 else 'd_minus_1'
        policy = PartitionPolicy.from_rule(num_domains, rule)
        partition = sample_partition(policy, trial_rng.split('partition'))
        state = _random_state(channels, trial_rng)

        def forward(value, layer_state):
            return dmn_forward_train(value, domain_ids, layer_state, policy, partition=partition)

        worst = max(worst, _norm_errors(forward, x, state, trial_rng))
    return worst


def _pk_labels(rng: RngStream, num_ids: int, per_id: int) -> np.ndarray:
    labels = np.repeat(np.arange(num_ids), per_id)
    return labels[rng.permutation(len(labels))]


def check_cross_entropy(rng: RngStream, trials: int) -> float:
    worst = 0.0
    for t in range(trials):
        trial_rng = rng.split(f'trial-{t}')
        n, k = int(trial_rng.integers(2, 9)), int(trial_rng.integers(2, 6))
        logits = trial_rng.normal(0.0, 2.0, size=(n, k))
        labels = trial_rng.integers(0, k, size=n)
        analytic = cross_entropy(logits, labels).grads['logits']
        numeric = finite_diff_grad(lambda z: cross_entropy(z, labels).value, logits)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def check_triplet(rng: RngStream, trials: int) -> float:
    worst = 0.0
    for t in range(trials):
        trial_rng = rng.split(f'trial-{t}')
        labels = _pk_labels(trial_rng, int(trial_rng.integers(2, 4)), int(trial_rng.integers(2, 4)))
        embeddings = trial_rng.normal(size=(len(labels), int(trial_rng.integers(2, 5))))
        margin = DEFAULT_VALUES['TRIPLET_MARGIN']
        analytic = batch_hard_triplet(embeddings, labels, margin).grads['embeddings']
        numeric = finite_diff_grad(lambda e: batch_hard_triplet(e, labels, margin).value, embeddings)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def _check_dcr(rng: RngStream, trials: int, mode: str) -> float:
    worst = 0.0
    for t in range(trials):
        trial_rng = rng.split(f'trial-{t}')
        num_domains = int(trial_rng.integers(2, 5))
        domain_ids = np.repeat(np.arange(num_domains), trial_rng.integers(1, 4, size=num_domains))
        features = trial_rng.normal(size=(len(domain_ids), int(trial_rng.integers(2, 5))))
        analytic = dcr_loss(features, domain_ids, mode).grads['features']
        numeric = finite_diff_grad(lambda f: dcr_loss(f, domain_ids, mode).value, features)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def check_dcr(rng: RngStream, trials: int) -> float:
    return _check_dcr(rng, trials, 'sample')


def check_dcr_domain_center(rng: RngStream, trials: int) -> float:
    return _check_dcr(rng, trials, 'domain_center')


def check_center(rng: RngStream, trials: int) -> float:
    worst = 0.0
    for t in range(trials):
        trial_rng = rng.split(f'trial-{t}')
        num_classes, dim = int(trial_rng.integers(2, 5)), int(trial_rng.integers(2, 5))
        centers = ClassCenters(centers=trial_rng.normal(size=(num_classes, dim)))
        labels = trial_rng.integers(0, num_classes, size=int(trial_rng.integers(2, 9)))
        features = trial_rng.normal(size=(len(labels), dim))
        analytic = center_loss(features, labels, centers, update=False).grads['features']
        numeric = finite_diff_grad(lambda f: center_loss(f, labels, centers, update=False).value, features)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def _end_to_end(rng: RngStream, trials: int, norm: str) -> float:
    """Total-loss gradient wrt one randomly chosen weight matrix of a small 64-bit model"""
    worst = 0.0
    for t in range(trials):
        trial_rng = rng.split(f'trial-{t}')
        num_domains, num_classes = 3, 3
        model_config = ModelConfig(widths=[4, 6, 5, 3], norm=norm, num_classes=num_classes)
        model = build_model(model_config, trial_rng.split('model'), num_domains, DmnConfig()).astype(ORACLE_DTYPE)

        labels = np.tile(np.repeat(np.arange(num_classes), 2), num_domains)
        domain_ids = np.repeat(np.arange(num_domains), 2 * num_classes)
        x = trial_rng.normal(size=(len(labels), 4))
        partitions = None
        if norm == 'dmn':
            partitions = [sample_partition(model.policy, trial_rng.split(f'partition-{i}'))
                          for i in range(model.num_slots)]
        lam = DEFAULT_VALUES['DCR_LAMBDA']
        model.freeze_activations()

        def total_loss(backward: bool = False) -> float:
            embedding, logits = model.forward(x, domain_ids, partitions)
            cls = cross_entropy(logits, labels)
            tri = batch_hard_triplet(embedding, labels)
            reg = dcr_loss(embedding, domain_ids)
            if backward:
                model.backward(tri.grads['embeddings'] + lam * reg.grads['features'], cls.grads['logits'])
            return cls.value + tri.value + lam * reg.value

        total_loss(backward=True)
        weight_names = [name for name in model.parameters() if name.endswith('.weight')]
        name = weight_names[int(trial_rng.integers(0, len(weight_names)))]
        analytic = model.gradients()[name]

        def loss_at(value):
            original = model.parameters()[name]
            model.set_parameter(name, value)
            try:
                return total_loss()
            finally:
                model.set_parameter(name, original)

        numeric = finite_diff_grad(loss_at, model.parameters()[name], h=END_TO_END_STEP)
        error = relative_error(analytic, numeric)
        logger.debug(f"end_to_end_{norm} trial {t}: {name} relative error {error:.3e}")
        worst = max(worst, error)
    return worst


def check_end_to_end_bn(rng: RngStream, trials: int) -> float:
    return _end_to_end(rng, trials, 'bn')


def check_end_to_end_dmn(rng: RngStream, trials: int) -> float:
    return _end_to_end(rng, trials, 'dmn')


COMPONENTS: Dict[str, tuple] = {
    'normlayers/bn': (check_bn, DEFAULT_VALUES['GRADCHECK_TOLERANCE']),
    'normlayers/dmn': (check_dmn, DEFAULT_VALUES['GRADCHECK_TOLERANCE']),
    'losses/cross_entropy': (check_cross_entropy, DEFAULT_VALUES['GRADCHECK_TOLERANCE']),
    'losses/triplet': (check_triplet, DEFAULT_VALUES['GRADCHECK_TOLERANCE']),
    'losses/dcr': (check_dcr, DEFAULT_VALUES['GRADCHECK_TOLERANCE']),
    'losses/dcr_domain_center': (check_dcr_domain_center, DEFAULT_VALUES['GRADCHECK_TOLERANCE']),
    'losses/center': (check_center, DEFAULT_VALUES['GRADCHECK_TOLERANCE']),
    'trainer/end_to_end_bn': (check_end_to_end_bn, DEFAULT_VALUES['END_TO_END_TOLERANCE']),
    'trainer/end_to_end_dmn': (check_end_to_end_dmn, DEFAULT_VALUES['END_TO_END_TOLERANCE']),
}


def run_gradcheck(seed: int = 0, trials: int = 20, end_to_end_trials: int = 3,
                  components: Optional[List[str]] = None) -> GradcheckReport:
    """Run the selected components (all by default) and collect the worst error of each"""
    rng = RngStream(seed).split('gradcheck')
    report = GradcheckReport()
    for name in components or list(COMPONENTS):
        check, tolerance = COMPONENTS[name]
        n = end_to_end_trials if name.startswith('trainer/') else trials
        started = time.perf_counter()
        worst = check(rng.split(name), n)
        result = ComponentResult(name=name, worst_error=worst, tolerance=tolerance, trials=n,
                                 seconds=time.perf_counter() - started)
        level = logging.INFO if result.passed else logging.ERROR
        logger.log(level, f"{name}: worst relative error {worst:.3e} (tolerance {tolerance:.0e}, {n} trials)")
        report.results.append(result)
    return report
