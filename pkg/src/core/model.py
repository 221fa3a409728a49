# src/core/model.py
"""
Fully-connected embedding network with pluggable normalization slots, and the
Adam optimizer that trains it.

Each slot is Linear -> Norm (none | bn | dmn) -> ReLU; the last slot skips the
activation and its output is the embedding fed to the triplet and center
losses. A linear classifier over the training identities sits on top.
"""

import copy
import logging
from collections import OrderedDict
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .normlayers import NormLayer
from .numerics import WORK_DTYPE, RngStream
from .partition import Partition, PartitionPolicy
from src.utils.constants import DEFAULT_VALUES
from src.utils.exceptions import ConfigurationError, ModelError

logger = logging.getLogger(__name__)


class Linear:
    """y = x W^T + b"""

    def __init__(self, fan_in: int, fan_out: int, rng: RngStream, dtype=WORK_DTYPE):
        bound = 1.0 / np.sqrt(fan_in)
        self.weight = rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(dtype)
        self.bias = np.zeros(fan_out, dtype=dtype)
        self.grads: Dict[str, np.ndarray] = {}
        self._input: Optional[np.ndarray] = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._input = x
        return x @ self.weight.T + self.bias

    def backward(self, grad_y: np.ndarray) -> np.ndarray:
        if self._input is None:
            raise ModelError("backward called before forward")
        self.grads = {'weight': grad_y.T @ self._input, 'bias': grad_y.sum(axis=0)}
        return grad_y @ self.weight

    def parameters(self) -> Dict[str, np.ndarray]:
        return {'weight': self.weight, 'bias': self.bias}

    def set_parameter(self, name: str, value: np.ndarray):
        setattr(self, name, value)


class ReLU:
    """Rectifier; a frozen unit replays the mask of the first forward after freezing"""

    def __init__(self):
        self.mask: Optional[np.ndarray] = None
        self.frozen = False

    def forward(self, x: np.ndarray) -> np.ndarray:
        if not (self.frozen and self.mask is not None):
            self.mask = x > 0
        elif self.mask.shape != x.shape:
            raise ModelError(f"frozen mask has shape {self.mask.shape}, input has {x.shape}")
        return x * self.mask

    def backward(self, grad_y: np.ndarray) -> np.ndarray:
        return grad_y * self.mask


class EmbeddingNet:
    """Stack of normalization slots plus a classifier head"""

    def __init__(self, widths: Sequence[int], norm_kinds: Sequence[str], num_classes: int,
                 rng: RngStream, policy: Optional[PartitionPolicy] = None, dtype=WORK_DTYPE,
                 momentum: float = DEFAULT_VALUES['MOMENTUM'], eps: float = DEFAULT_VALUES['NORM_EPS'],
                 accumulation: str = 'global'):
        widths = list(widths)
        if len(widths) < 2 or any(w < 1 for w in widths):
            raise ModelError(f"invalid widths {widths}: need at least two positive entries")
        if widths[-1] < 2:
            raise ModelError(f"embedding dimension must be >= 2, got {widths[-1]}")
        if len(norm_kinds) != len(widths) - 1:
            raise ModelError(f"{len(widths) - 1} norm slots but {len(norm_kinds)} norm kinds")
        if num_classes < 2:
            raise ModelError(f"need at least 2 classes, got {num_classes}")

        self.widths = widths
        self.norm_kinds = list(norm_kinds)
        self.num_classes = num_classes
        self.dtype = dtype
        self.policy = policy
        self.linears: List[Linear] = []
        self.norms: List[NormLayer] = []
        self.activations: List[Optional[ReLU]] = []
        init_rng = rng.split('init')
        for i, kind in enumerate(self.norm_kinds):
            self.linears.append(Linear(widths[i], widths[i + 1], init_rng.split(f'linear-{i}'), dtype))
            self.norms.append(NormLayer(kind, widths[i + 1], policy=policy if kind == 'dmn' else None,
                                        rng=rng.split(f'partition-{i}') if kind == 'dmn' else None,
                                        dtype=dtype, momentum=momentum, eps=eps, accumulation=accumulation))
            self.activations.append(ReLU() if i < len(self.norm_kinds) - 1 else None)
        self.classifier = Linear(widths[-1], num_classes, init_rng.split('classifier'), dtype)
        self.training = True

    @property
    def num_slots(self) -> int:
        return len(self.norms)

    @property
    def embedding_dim(self) -> int:
        return self.widths[-1]

    @property
    def has_dmn(self) -> bool:
        return 'dmn' in self.norm_kinds

    def train(self) -> 'EmbeddingNet':
        self.training = True
        for norm in self.norms:
            norm.set_mode('train')
        return self

    def eval(self) -> 'EmbeddingNet':
        self.training = False
        for norm in self.norms:
            norm.set_mode('eval')
        return self

    def _slot_partitions(self, partitions) -> List[Optional[Partition]]:
        if partitions is None or isinstance(partitions, Partition):
            return [partitions] * self.num_slots
        partitions = list(partitions)
        if len(partitions) != self.num_slots:
            raise ModelError(f"{len(partitions)} partitions for {self.num_slots} slots")
        return partitions

    def forward(self, x: np.ndarray, domain_ids: Sequence[int],
                partitions: Union[None, Partition, Sequence[Optional[Partition]]] = None):
        """
        Run the network.

        Args:
            x: N x widths[0] features
            domain_ids: per-sample domain ids, used by dmn slots in train mode
            partitions: one partition shared by every slot, or one per slot; None samples per slot

        Returns:
            (embedding, logits)
        """
        if x.ndim != 2 or x.shape[1] != self.widths[0]:
            raise ModelError(f"expected N x {self.widths[0]} input, got shape {x.shape}")
        h = x
        for linear, norm, act, partition in zip(self.linears, self.norms, self.activations,
                                                self._slot_partitions(partitions)):
            h = norm.forward(linear.forward(h), domain_ids, partition=partition)
            if act is not None:
                h = act.forward(h)
        embedding = h
        return embedding, self.classifier.forward(embedding)

    def backward(self, grad_embedding: np.ndarray, grad_logits: np.ndarray):
        """Accumulate parameter gradients from gradients on the two outputs"""
        grad = self.classifier.backward(grad_logits) + grad_embedding
        for linear, norm, act in zip(reversed(self.linears), reversed(self.norms), reversed(self.activations)):
            if act is not None:
                grad = act.backward(grad)
            grad = linear.backward(norm.backward(grad))
        return grad

    def _modules(self):
        for i, (linear, norm) in enumerate(zip(self.linears, self.norms)):
            yield f'slot{i}.linear', linear
            yield f'slot{i}.norm', norm
        yield 'classifier', self.classifier

    def parameters(self) -> Dict[str, np.ndarray]:
        params = OrderedDict()
        for prefix, module in self._modules():
            for name, value in module.parameters().items():
                params[f'{prefix}.{name}'] = value
        return params

    def gradients(self) -> Dict[str, np.ndarray]:
        grads = OrderedDict()
        for prefix, module in self._modules():
            for name in module.parameters():
                if name not in module.grads:
                    raise ModelError(f"no gradient for {prefix}.{name}; run backward first")
                grads[f'{prefix}.{name}'] = module.grads[name]
        return grads

    def buffers(self) -> Dict[str, np.ndarray]:
        """Running statistics of every normalizing slot"""
        buffers = OrderedDict()
        for i, norm in enumerate(self.norms):
            if norm.kind != 'none':
                buffers[f'slot{i}.norm.running_mean'] = norm.state.running_mean
                buffers[f'slot{i}.norm.running_var'] = norm.state.running_var
        return buffers

    def _resolve(self, name: str):
        prefix, _, attr = name.rpartition('.')
        modules = dict(self._modules())
        if prefix not in modules:
            raise ModelError(f"unknown parameter '{name}'")
        return modules[prefix], attr

    def set_parameter(self, name: str, value: np.ndarray):
        module, attr = self._resolve(name)
        current = module.parameters().get(attr)
        if current is None:
            raise ModelError(f"unknown parameter '{name}'")
        if current.shape != value.shape:
            raise ModelError(f"{name}: expected shape {current.shape}, got {value.shape}")
        module.set_parameter(attr, value)

    def set_buffer(self, name: str, value: np.ndarray):
        module, attr = self._resolve(name)
        if not isinstance(module, NormLayer) or attr not in ('running_mean', 'running_var'):
            raise ModelError(f"unknown buffer '{name}'")
        setattr(module.state, attr, value)

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters().values()))

    def freeze_activations(self):
        """Fix every ReLU mask to the one produced by the next forward pass"""
        for act in self.activations:
            if act is not None:
                act.frozen = True
                act.mask = None

    def astype(self, dtype) -> 'EmbeddingNet':
        """Copy with every parameter and running statistic cast to dtype"""
        clone = copy.deepcopy(self)
        clone.dtype = dtype
        for name, value in self.parameters().items():
            clone.set_parameter(name, value.astype(dtype))
        for name, value in self.buffers().items():
            clone.set_buffer(name, value.astype(dtype))
        return clone


def build_model(config, rng: RngStream, num_domains: int, dmn=None, dtype=WORK_DTYPE) -> EmbeddingNet:
    """
    Build an EmbeddingNet from a ModelConfig.

    Args:
        config: ModelConfig
        rng: stream for weight initialization and per-slot partition sampling
        num_domains: number of source domains seen by dmn slots
        dmn: DmnConfig with the partition rule and running-statistics settings
    """
    try:
        config.validate()
    except ConfigurationError as e:
        raise ModelError(str(e))
    policy = None
    momentum, eps, accumulation = DEFAULT_VALUES['MOMENTUM'], DEFAULT_VALUES['NORM_EPS'], 'global'
    if dmn is not None:
        momentum, eps, accumulation = dmn.momentum, dmn.eps, dmn.accumulation
    kinds = config.norm_kinds()
    if 'dmn' in kinds:
        rule = dmn.max_group if dmn is not None else 'd_minus_1'
        fixed_c = dmn.fixed_c if dmn is not None else None
        policy = PartitionPolicy.from_rule(num_domains, rule, fixed_c)
        policy.validate()
        if num_domains == 1:
            logger.warning("Single source domain: mix-normalization reduces to batch normalization")
    model = EmbeddingNet(config.widths, kinds, config.num_classes, rng, policy=policy, dtype=dtype,
                         momentum=momentum, eps=eps, accumulation=accumulation)
    logger.info(f"Built model {config.widths} with norms {kinds} ({model.parameter_count()} parameters)")
    return model


class Adam:
    """Adam over a model's named parameters"""

    def __init__(self, betas=DEFAULT_VALUES['ADAM_BETAS'], eps: float = DEFAULT_VALUES['ADAM_EPS']):
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, model: EmbeddingNet, lr: float):
        self.step_count += 1
        t = self.step_count
        grads = model.gradients()
        for name, param in model.parameters().items():
            g = grads[name]
            m = self.beta1 * self.m.get(name, np.zeros_like(param)) + (1 - self.beta1) * g
            v = self.beta2 * self.v.get(name, np.zeros_like(param)) + (1 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            if lr == 0:
                continue
            m_hat = m / (1 - self.beta1 ** t)
            v_hat = v / (1 - self.beta2 ** t)
            update = lr * m_hat / (np.sqrt(v_hat) + self.eps)
            model.set_parameter(name, (param - update).astype(param.dtype))
