# src/core/checkpoint.py
"""
Versioned JSON checkpoints. Parameters and running statistics are stored as
base64-encoded MXN1 tensor blobs next to the full experiment config.
"""

import base64
import binascii
import json
import logging
import struct
from pathlib import Path
from typing import Tuple, Union

from .config import ExperimentConfig
from .model import EmbeddingNet, build_model
from .numerics import seeded_rng, tensor_from_bytes, tensor_to_bytes
from src.utils.constants import CHECKPOINT_FORMAT_VERSION
from src.utils.exceptions import CheckpointError, MixNormError

logger = logging.getLogger(__name__)


def _encode(tensor) -> str:
    return base64.b64encode(tensor_to_bytes(tensor)).decode('ascii')


def _decode(name: str, text: str):
    try:
        return tensor_from_bytes(base64.b64decode(text.encode('ascii'), validate=True))
    except (binascii.Error, struct.error, UnicodeEncodeError, AttributeError, MixNormError) as e:
        raise CheckpointError(f"blob '{name}' is unreadable: {e}")


def checkpoint_envelope(model: EmbeddingNet, config: ExperimentConfig) -> dict:
    return {
        'format_version': CHECKPOINT_FORMAT_VERSION,
        'model_config': config.to_dict()['model'],
        'schedule': config.to_dict()['schedule'],
        'experiment': config.to_dict(),
        'parameters': {name: _encode(value) for name, value in model.parameters().items()},
        'buffers': {name: _encode(value) for name, value in model.buffers().items()},
    }


def save_checkpoint(model: EmbeddingNet, config: ExperimentConfig, path: Union[str, Path]):
    envelope = checkpoint_envelope(model, config)
    with open(path, 'w') as f:
        json.dump(envelope, f, indent=2)
    logger.info(f"Saved checkpoint to {path}")


def load_checkpoint(path: Union[str, Path]) -> Tuple[EmbeddingNet, ExperimentConfig]:
    """Rebuild the model described by a checkpoint and restore its tensors"""
    try:
        with open(path, 'r') as f:
            envelope = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}")

    version = envelope.get('format_version')
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {version!r}")
    missing = [k for k in ('experiment', 'parameters', 'buffers') if k not in envelope]
    if missing:
        raise CheckpointError(f"checkpoint is missing {missing}")

    config = ExperimentConfig.from_dict(envelope['experiment'])
    model = build_model(config.model, seeded_rng(config.seed).split('train').split('model'),
                        config.data.num_sources, config.dmn)

    expected = set(model.parameters())
    stored = set(envelope['parameters'])
    if expected != stored:
        raise CheckpointError(f"parameter names differ: missing {sorted(expected - stored)}, "
                              f"unexpected {sorted(stored - expected)}")
    for name, text in envelope['parameters'].items():
        model.set_parameter(name, _decode(name, text))
    for name, text in envelope['buffers'].items():
        model.set_buffer(name, _decode(name, text))
    model.eval()
    logger.info(f"Loaded checkpoint {path} ({model.parameter_count()} parameters)")
    return model, config
