# src/core/normlayers.py
"""
Batch normalization and domain-aware mix-normalization (DMN).

Both layers share one per-channel affine pair (gamma, beta) and one pair of
running statistics. DMN normalizes each group of a sampled domain partition
with that group's own mean and standard deviation; plain BN is the special
case of a single group holding the whole batch.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .numerics import (
    RngStream,
    channel_shape,
    combine_group_stats,
    positions_per_sample,
    reduce_axes,
)
from .partition import Partition, PartitionPolicy, sample_partition
from src.utils.constants import DEFAULT_VALUES
from src.utils.exceptions import NormalizationError

logger = logging.getLogger(__name__)

NORM_KINDS = ('none', 'bn', 'dmn')
ACCUMULATION_RULES = ('global', 'per_group')


@dataclass
class NormLayerState:
    """Affine parameters, running statistics and mode of one normalization layer"""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = DEFAULT_VALUES['MOMENTUM']
    eps: float = DEFAULT_VALUES['NORM_EPS']
    mode: str = 'train'
    accumulation: str = 'global'

    @classmethod
    def create(cls, channels: int, dtype=np.float32, momentum: float = DEFAULT_VALUES['MOMENTUM'],
               eps: float = DEFAULT_VALUES['NORM_EPS'], accumulation: str = 'global') -> 'NormLayerState':
        state = cls(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            momentum=momentum,
            eps=eps,
            accumulation=accumulation,
        )
        state.validate()
        return state

    @property
    def channels(self) -> int:
        return int(self.gamma.shape[0])

    def validate(self):
        lengths = {self.gamma.shape, self.beta.shape, self.running_mean.shape, self.running_var.shape}
        if len(lengths) != 1:
            raise NormalizationError(f"per-channel vectors disagree in shape: {sorted(lengths)}")
        if np.any(self.running_var < 0):
            raise NormalizationError("running_var must be non-negative")
        if not 0 < self.momentum <= 1:
            raise NormalizationError(f"momentum must lie in (0, 1], got {self.momentum}")
        if self.eps <= 0:
            raise NormalizationError(f"eps must be positive, got {self.eps}")
        if self.mode not in ('train', 'eval'):
            raise NormalizationError(f"mode must be 'train' or 'eval', got '{self.mode}'")
        if self.accumulation not in ACCUMULATION_RULES:
            raise NormalizationError(f"unknown accumulation rule '{self.accumulation}'")


@dataclass
class GroupCache:
    indices: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    std: np.ndarray
    x_hat: np.ndarray


@dataclass
class NormCache:
    """Everything the backward pass needs from one training forward"""

    input_shape: tuple
    partition: Partition
    groups: List[GroupCache] = field(default_factory=list)


def _check_input(x: np.ndarray, state: NormLayerState, expected_mode: str):
    if state.mode != expected_mode:
        raise NormalizationError(f"layer is in '{state.mode}' mode, expected '{expected_mode}'")
    if x.ndim not in (2, 4):
        raise NormalizationError(f"expected a rank-2 or rank-4 input, got rank {x.ndim}")
    if x.shape[0] < 1:
        raise NormalizationError("empty batch")
    if x.shape[1] != state.channels:
        raise NormalizationError(f"input has {x.shape[1]} channels, layer has {state.channels}")


def _normalize_group(x: np.ndarray, indices: np.ndarray, state: NormLayerState,
                     y: np.ndarray) -> GroupCache:
    members = x[indices]
    axes = reduce_axes(members)
    shape = channel_shape(members)
    mean = members.mean(axis=axes)
    var = members.var(axis=axes)
    std = np.sqrt(var + state.eps)
    x_hat = (members - mean.reshape(shape)) / std.reshape(shape)
    y[indices] = state.gamma.reshape(shape) * x_hat + state.beta.reshape(shape)
    return GroupCache(indices=indices, mean=mean, var=var, std=std, x_hat=x_hat)


def update_running(state: NormLayerState, batch_mean: np.ndarray, batch_var: np.ndarray,
                   momentum: Optional[float] = None):
    """Exponential running-statistics update; arrays are replaced, never mutated"""
    if state.mode != 'train':
        raise NormalizationError("running statistics only update in train mode")
    m = state.momentum if momentum is None else momentum
    dtype = state.running_mean.dtype
    state.running_mean = ((1 - m) * state.running_mean + m * batch_mean).astype(dtype)
    state.running_var = ((1 - m) * state.running_var + m * batch_var).astype(dtype)


def _accumulate(x: np.ndarray, cache: NormCache, state: NormLayerState):
    per_sample = positions_per_sample(x)
    counts = [len(g.indices) * per_sample for g in cache.groups]
    means = [g.mean for g in cache.groups]
    variances = [g.var for g in cache.groups]

    if state.accumulation == 'per_group':
        total = float(sum(counts))
        for count, mean, var in zip(counts, means, variances):
            update_running(state, mean, var, momentum=state.momentum * count / total)
        return

    if len(cache.groups) == 1:
        update_running(state, means[0], variances[0])
    else:
        batch_mean, batch_var = combine_group_stats(counts, means, variances)
        update_running(state, batch_mean, batch_var)


def bn_forward_train(x: np.ndarray, state: NormLayerState):
    """Plain batch normalization with batch statistics over all non-channel axes"""
    _check_input(x, state, 'train')
    y = np.empty_like(x, dtype=np.result_type(x.dtype, state.gamma.dtype))
    group = _normalize_group(x, np.arange(x.shape[0]), state, y)
    cache = NormCache(input_shape=x.shape, partition=Partition.single_group(1), groups=[group])
    _accumulate(x, cache, state)
    return y, cache


def dmn_forward_train(x: np.ndarray, domain_ids: Sequence[int], state: NormLayerState,
                      policy: PartitionPolicy, rng: Optional[RngStream] = None,
                      partition: Optional[Partition] = None):
    """
    Domain-aware mix-normalization forward pass.

    Args:
        x: batch, rank 2 or 4
        domain_ids: per-sample domain id in [0, policy.num_domains)
        state: layer state in train mode
        policy: partition policy
        rng: stream used to sample the partition
        partition: use this partition instead of sampling one

    Returns:
        (y, cache)
    """
    _check_input(x, state, 'train')
    domains = np.asarray(domain_ids)
    if domains.shape != (x.shape[0],):
        raise NormalizationError(f"expected {x.shape[0]} domain ids, got shape {domains.shape}")
    out_of_range = sorted(set(int(d) for d in domains if d < 0 or d >= policy.num_domains))
    if out_of_range:
        raise NormalizationError(
            f"domain ids {out_of_range} outside [0, {policy.num_domains - 1}]"
        )
    missing = sorted(set(range(policy.num_domains)) - set(int(d) for d in domains))
    if missing:
        raise NormalizationError(f"domains {missing} have no samples in the batch")

    if partition is None:
        if rng is None:
            raise NormalizationError("either rng or partition is required")
        partition = sample_partition(policy, rng)
    else:
        partition.validate(policy.num_domains)

    y = np.empty_like(x, dtype=np.result_type(x.dtype, state.gamma.dtype))
    cache = NormCache(input_shape=x.shape, partition=partition)
    for group in partition.groups:
        indices = np.flatnonzero(np.isin(domains, group))
        cache.groups.append(_normalize_group(x, indices, state, y))

    _accumulate(x, cache, state)
    return y, cache


def dmn_backward(grad_y: np.ndarray, cache: NormCache, state: NormLayerState):
    """
    Backward pass shared by BN and DMN.

    Each group's statistics depend only on that group's members, so the
    standard normalization backward is applied per group.

    Returns:
        (grad_x, grad_gamma, grad_beta)
    """
    if grad_y.shape != tuple(cache.input_shape):
        raise NormalizationError(
            f"gradient shape {grad_y.shape} does not match cached input {tuple(cache.input_shape)}"
        )
    axes = reduce_axes(grad_y)
    shape = channel_shape(grad_y)
    grad_x = np.zeros_like(grad_y, dtype=np.result_type(grad_y.dtype, state.gamma.dtype))
    grad_gamma = np.zeros_like(state.gamma, dtype=grad_x.dtype)
    grad_beta = np.zeros_like(state.beta, dtype=grad_x.dtype)

    per_sample = positions_per_sample(grad_y)
    for group in cache.groups:
        g = grad_y[group.indices]
        grad_beta += g.sum(axis=axes)
        grad_gamma += (g * group.x_hat).sum(axis=axes)

        count = len(group.indices) * per_sample
        dx_hat = g * state.gamma.reshape(shape)
        sum_dx_hat = dx_hat.sum(axis=axes).reshape(shape)
        sum_dx_hat_xhat = (dx_hat * group.x_hat).sum(axis=axes).reshape(shape)
        grad_x[group.indices] = (
            (count * dx_hat - sum_dx_hat - group.x_hat * sum_dx_hat_xhat)
            / (count * group.std.reshape(shape))
        )

    return grad_x, grad_gamma, grad_beta


def norm_forward_eval(x: np.ndarray, state: NormLayerState) -> np.ndarray:
    """Per-sample map through the running statistics; no state mutation"""
    _check_input(x, state, 'eval')
    shape = channel_shape(x)
    scale = state.gamma / np.sqrt(state.running_var + state.eps)
    return (x - state.running_mean.reshape(shape)) * scale.reshape(shape) + state.beta.reshape(shape)


class NormLayer:
    """A normalization slot of the network: identity, BN or DMN"""

    def __init__(self, kind: str, channels: int, policy: Optional[PartitionPolicy] = None,
                 rng: Optional[RngStream] = None, dtype=np.float32,
                 momentum: float = DEFAULT_VALUES['MOMENTUM'], eps: float = DEFAULT_VALUES['NORM_EPS'],
                 accumulation: str = 'global'):
        if kind not in NORM_KINDS:
            raise NormalizationError(f"unknown norm kind '{kind}', expected one of {NORM_KINDS}")
        if kind == 'dmn' and (policy is None or rng is None):
            raise NormalizationError("a dmn layer needs a partition policy and an rng stream")
        self.kind = kind
        self.policy = policy
        self.rng = rng
        self.state = NormLayerState.create(channels, dtype=dtype, momentum=momentum, eps=eps,
                                           accumulation=accumulation)
        self.grads: Dict[str, np.ndarray] = {}
        self.cache: Optional[NormCache] = None

    def parameters(self) -> Dict[str, np.ndarray]:
        if self.kind == 'none':
            return {}
        return {'gamma': self.state.gamma, 'beta': self.state.beta}

    def set_parameter(self, name: str, value: np.ndarray):
        setattr(self.state, name, value)

    def set_mode(self, mode: str):
        self.state.mode = mode

    def forward(self, x: np.ndarray, domain_ids: Sequence[int],
                partition: Optional[Partition] = None) -> np.ndarray:
        if self.kind == 'none':
            return x
        if self.state.mode == 'eval':
            return norm_forward_eval(x, self.state)
        if self.kind == 'bn':
            y, self.cache = bn_forward_train(x, self.state)
        else:
            y, self.cache = dmn_forward_train(x, domain_ids, self.state, self.policy,
                                              rng=self.rng, partition=partition)
        return y

    def backward(self, grad_y: np.ndarray) -> np.ndarray:
        if self.kind == 'none':
            return grad_y
        if self.cache is None:
            raise NormalizationError("backward called before a training forward")
        grad_x, grad_gamma, grad_beta = dmn_backward(grad_y, self.cache, self.state)
        self.grads = {'gamma': grad_gamma, 'beta': grad_beta}
        return grad_x
