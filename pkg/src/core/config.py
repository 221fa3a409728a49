# src/core/config.py
"""
Configuration management for mixnorm experiments
"""

import copy
import dataclasses
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union, get_args, get_origin, get_type_hints

import yaml

from src.utils.constants import DEFAULT_VALUES, PRESETS
from src.utils.exceptions import ConfigurationError
from src.utils.helpers import resolve_seed

SAMPLERS = ('us', 'rs')
REGULARIZERS = ('dcr', 'center', 'none')
MAX_GROUP_RULES = ('d_minus_1', 'd')


@dataclass
class DataConfig:
    """Synthetic benchmark geometry"""

    num_sources: int = 3
    num_classes: int = 20
    feature_dim: int = 16
    samples_per_class: int = 16
    target_samples_per_class: int = 10
    retrieval_ids: int = 10
    retrieval_samples_per_id: int = 10
    query_fraction: float = DEFAULT_VALUES['QUERY_FRACTION']
    prototype_scale: float = 1.0
    noise_sigma: float = 0.3
    scale_spread: float = 1.5
    shift_sigma: float = 1.5
    mixing_strength: float = 0.3
    seed: Optional[int] = None  # falls back to the experiment seed

    def validate(self, prefix: str = 'data'):
        if self.num_sources < 1:
            raise ConfigurationError(f'{prefix}.num_sources', 'at least one source domain is required')
        for name in ('num_classes', 'retrieval_ids'):
            if getattr(self, name) < 2:
                raise ConfigurationError(f'{prefix}.{name}', 'must be >= 2')
        for name in ('samples_per_class', 'target_samples_per_class', 'retrieval_samples_per_id'):
            if getattr(self, name) < 2:
                raise ConfigurationError(f'{prefix}.{name}', 'must be >= 2')
        if self.feature_dim < 1:
            raise ConfigurationError(f'{prefix}.feature_dim', 'must be positive')
        if not 0 < self.query_fraction < 1:
            raise ConfigurationError(f'{prefix}.query_fraction', 'must lie in (0, 1)')
        if self.noise_sigma < 0 or self.shift_sigma < 0 or self.mixing_strength < 0:
            raise ConfigurationError(f'{prefix}.noise_sigma', 'noise, shift and mixing strengths must be >= 0')
        if self.scale_spread < 1:
            raise ConfigurationError(f'{prefix}.scale_spread', 'must be >= 1')


@dataclass
class ModelConfig:
    """Layer widths and the normalization kind of each slot"""

    widths: List[int] = field(default_factory=lambda: [16, 64, 64, 32])
    norm: str = 'dmn'
    slot_norms: Optional[List[str]] = None  # per-slot override of `norm`
    num_classes: int = 20

    @property
    def num_slots(self) -> int:
        return len(self.widths) - 1

    @property
    def embedding_dim(self) -> int:
        return self.widths[-1]

    def norm_kinds(self) -> List[str]:
        if self.slot_norms is not None:
            return list(self.slot_norms)
        return [self.norm] * self.num_slots

    def validate(self, prefix: str = 'model'):
        if len(self.widths) < 2 or any(w < 1 for w in self.widths):
            raise ConfigurationError(f'{prefix}.widths', 'need at least two positive widths (one norm slot)')
        if self.embedding_dim < 2:
            raise ConfigurationError(f'{prefix}.widths', 'embedding dimension must be >= 2')
        if self.norm not in ('none', 'bn', 'dmn'):
            raise ConfigurationError(f'{prefix}.norm', f"unknown norm kind '{self.norm}'")
        if self.slot_norms is not None:
            if len(self.slot_norms) != self.num_slots:
                raise ConfigurationError(f'{prefix}.slot_norms',
                                         f'expected {self.num_slots} entries, got {len(self.slot_norms)}')
            bad = [k for k in self.slot_norms if k not in ('none', 'bn', 'dmn')]
            if bad:
                raise ConfigurationError(f'{prefix}.slot_norms', f'unknown norm kinds {bad}')
        if self.num_classes < 2:
            raise ConfigurationError(f'{prefix}.num_classes', 'must be >= 2')


@dataclass
class TrainSchedule:
    """Adam with step decay"""

    epochs: int = DEFAULT_VALUES['EPOCHS']
    iterations_per_epoch: int = 20
    base_lr: float = DEFAULT_VALUES['BASE_LR']
    decay_epochs: List[int] = field(default_factory=lambda: list(DEFAULT_VALUES['DECAY_EPOCHS']))
    decay_factor: float = DEFAULT_VALUES['DECAY_FACTOR']
    beta1: float = DEFAULT_VALUES['ADAM_BETAS'][0]
    beta2: float = DEFAULT_VALUES['ADAM_BETAS'][1]
    adam_eps: float = DEFAULT_VALUES['ADAM_EPS']
    eval_every: int = 1  # evaluate every N epochs; 0 evaluates only after the last

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a zero-based epoch index"""
        passed = sum(1 for e in self.decay_epochs if epoch >= e)
        return self.base_lr * self.decay_factor ** passed

    def validate(self, prefix: str = 'schedule'):
        if self.epochs < 1:
            raise ConfigurationError(f'{prefix}.epochs', 'must be >= 1')
        if self.iterations_per_epoch < 1:
            raise ConfigurationError(f'{prefix}.iterations_per_epoch', 'must be >= 1')
        if self.base_lr < 0:
            raise ConfigurationError(f'{prefix}.base_lr', 'must be >= 0')
        if any(b <= a for a, b in zip(self.decay_epochs, self.decay_epochs[1:])):
            raise ConfigurationError(f'{prefix}.decay_epochs', 'must be strictly increasing')
        if any(e < 0 or e >= self.epochs for e in self.decay_epochs):
            raise ConfigurationError(f'{prefix}.decay_epochs', f'must lie in [0, {self.epochs})')
        if not 0 < self.decay_factor <= 1:
            raise ConfigurationError(f'{prefix}.decay_factor', 'must lie in (0, 1]')
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigurationError(f'{prefix}.beta1', 'Adam betas must lie in [0, 1)')
        if self.adam_eps <= 0:
            raise ConfigurationError(f'{prefix}.adam_eps', 'must be positive')
        if self.eval_every < 0:
            raise ConfigurationError(f'{prefix}.eval_every', 'must be >= 0')


@dataclass
class LossConfig:
    regularizer: str = 'dcr'
    lam: float = DEFAULT_VALUES['DCR_LAMBDA']
    margin: float = DEFAULT_VALUES['TRIPLET_MARGIN']
    dcr_mode: str = 'sample'
    center_update_rate: float = DEFAULT_VALUES['CENTER_UPDATE_RATE']

    def validate(self, prefix: str = 'loss'):
        if self.regularizer not in REGULARIZERS:
            raise ConfigurationError(f'{prefix}.regularizer', f"unknown regularizer '{self.regularizer}'")
        if self.lam < 0:
            raise ConfigurationError(f'{prefix}.lam', 'must be >= 0')
        if self.margin < 0:
            raise ConfigurationError(f'{prefix}.margin', 'must be >= 0')
        if self.dcr_mode not in ('sample', 'domain_center'):
            raise ConfigurationError(f'{prefix}.dcr_mode', f"unknown dcr mode '{self.dcr_mode}'")
        if not 0 < self.center_update_rate <= 1:
            raise ConfigurationError(f'{prefix}.center_update_rate', 'must lie in (0, 1]')


@dataclass
class DmnConfig:
    max_group: str = 'd_minus_1'
    fixed_c: Optional[int] = None
    shared_partition: bool = False
    accumulation: str = 'global'
    momentum: float = DEFAULT_VALUES['MOMENTUM']
    eps: float = DEFAULT_VALUES['NORM_EPS']

    def validate(self, num_domains: int, prefix: str = 'dmn'):
        if self.max_group not in MAX_GROUP_RULES:
            raise ConfigurationError(f'{prefix}.max_group', f"unknown rule '{self.max_group}'")
        if self.fixed_c is not None:
            limit = max(1, num_domains - 1) if self.max_group == 'd_minus_1' else num_domains
            if not 1 <= self.fixed_c <= limit:
                raise ConfigurationError(f'{prefix}.fixed_c', f'must lie in [1, {limit}]')
        if self.accumulation not in ('global', 'per_group'):
            raise ConfigurationError(f'{prefix}.accumulation', f"unknown rule '{self.accumulation}'")
        if not 0 < self.momentum <= 1:
            raise ConfigurationError(f'{prefix}.momentum', 'must lie in (0, 1]')
        if self.eps <= 0:
            raise ConfigurationError(f'{prefix}.eps', 'must be positive')


@dataclass
class ExperimentConfig:
    """Full description of one training run"""

    name: str = 'mixnorm_full'
    seed: int = 0
    sampler: str = 'us'
    p_ids: int = 8
    k_per_id: int = 4
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    loss: LossConfig = field(default_factory=LossConfig)
    dmn: DmnConfig = field(default_factory=DmnConfig)
    output_dir: str = 'runs/mixnorm_full'

    @property
    def batch_size(self) -> int:
        return self.p_ids * self.k_per_id * self.data.num_sources

    @property
    def data_seed(self) -> int:
        return self.seed if self.data.seed is None else self.data.seed

    def validate(self):
        if self.seed < 0:
            raise ConfigurationError('seed', 'must be a non-negative integer')
        if self.sampler not in SAMPLERS:
            raise ConfigurationError('sampler', f"unknown sampler '{self.sampler}'")
        if self.p_ids < 1:
            raise ConfigurationError('p_ids', 'must be >= 1')
        if self.k_per_id < 2:
            raise ConfigurationError('k_per_id', 'must be >= 2 for triplet mining')
        self.data.validate()
        self.model.validate()
        self.schedule.validate()
        self.loss.validate()
        self.dmn.validate(self.data.num_sources)
        if self.model.widths[0] != self.data.feature_dim:
            raise ConfigurationError('model.widths', f'first width must equal data.feature_dim '
                                                     f'({self.data.feature_dim})')
        if self.model.num_classes != self.data.num_classes:
            raise ConfigurationError('model.num_classes', f'must equal data.num_classes ({self.data.num_classes})')
        if self.p_ids > self.data.num_classes:
            raise ConfigurationError('p_ids', f'cannot exceed data.num_classes ({self.data.num_classes})')
        if self.k_per_id > self.data.samples_per_class:
            raise ConfigurationError('k_per_id', f'cannot exceed data.samples_per_class '
                                                 f'({self.data.samples_per_class})')
        if self.sampler == 'rs' and 'dmn' in self.model.norm_kinds():
            raise ConfigurationError('sampler', "rs sampling cannot be combined with dmn layers, "
                                                "which need every domain in each batch")
        return self

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ExperimentConfig':
        """Build and validate a config; unknown keys are rejected with their path"""
        config = _build(cls, data or {}, '')
        return config.validate()

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_file(cls, config_path: Union[str, Path]) -> 'ExperimentConfig':
        """Load configuration from a JSON or YAML file"""
        try:
            with open(config_path, 'r') as f:
                if Path(config_path).suffix == '.json':
                    config_data = json.load(f)
                else:
                    config_data = yaml.safe_load(f)
        except OSError as e:
            raise ConfigurationError('config', f'cannot read {config_path}: {e}')
        except (yaml.YAMLError, json.JSONDecodeError) as e:
            raise ConfigurationError('config', f'cannot parse {config_path}: {e}')
        if config_data is not None and not isinstance(config_data, dict):
            raise ConfigurationError('config', 'top level must be a mapping')
        return cls.from_dict(config_data or {})

    def to_file(self, config_path: Union[str, Path]):
        """Save configuration; JSON for .json paths, YAML otherwise"""
        path = Path(config_path)
        with open(path, 'w') as f:
            if path.suffix == '.json':
                json.dump(self.to_dict(), f, indent=2)
            else:
                yaml.dump(self.to_dict(), f, default_flow_style=False, sort_keys=False)

    @classmethod
    def from_preset(cls, name: str, overrides: Optional[Dict[str, Any]] = None) -> 'ExperimentConfig':
        if name not in PRESETS:
            raise ConfigurationError('preset', f"unknown preset '{name}', expected one of {sorted(PRESETS)}")
        merged = deep_merge({'name': name, 'output_dir': f'runs/{name}'}, PRESETS[name])
        return cls.from_dict(deep_merge(merged, overrides or {}))

    def with_overrides(self, overrides: Dict[str, Any]) -> 'ExperimentConfig':
        return ExperimentConfig.from_dict(deep_merge(self.to_dict(), overrides))

    def with_seed(self, seed: int) -> 'ExperimentConfig':
        return self.with_overrides({'seed': seed})

    @classmethod
    def from_env(cls, base: Optional['ExperimentConfig'] = None,
                 cli_seed: Optional[int] = None) -> 'ExperimentConfig':
        """Apply the MIXNORM_SEED and --seed overrides to a config"""
        config = base or cls().validate()
        seed = resolve_seed(config.seed, cli_seed)
        return config if seed == config.seed else config.with_seed(seed)


def deep_merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    """Recursively overlay overrides onto a copy of base"""
    merged = copy.deepcopy(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _build(cls, data: Dict[str, Any], prefix: str):
    if not isinstance(data, dict):
        raise ConfigurationError(prefix or 'config', 'expected a mapping')
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigurationError(_join(prefix, unknown[0]), 'unknown key')
    kwargs = {}
    for name, value in data.items():
        kwargs[name] = _coerce(hints[name], value, _join(prefix, name))
    return cls(**kwargs)


def _coerce(hint, value, path: str):
    origin = get_origin(hint)
    if origin is Union:
        options = [a for a in get_args(hint) if a is not type(None)]
        if value is None:
            return None
        return _coerce(options[0], value, path)
    if dataclasses.is_dataclass(hint):
        return _build(hint, value, path)
    if origin in (list, List):
        if not isinstance(value, (list, tuple)):
            raise ConfigurationError(path, f'expected a list, got {type(value).__name__}')
        (item,) = get_args(hint)
        return [_coerce(item, v, f'{path}[{i}]') for i, v in enumerate(value)]
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigurationError(path, f'expected true/false, got {value!r}')
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigurationError(path, f'expected an integer, got {value!r}')
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(path, f'expected a number, got {value!r}')
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigurationError(path, f'expected a string, got {value!r}')
        return value
    return value


def _join(prefix: str, name: str) -> str:
    return f'{prefix}.{name}' if prefix else name
