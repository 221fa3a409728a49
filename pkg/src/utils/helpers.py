# src/utils/helpers.py
"""
Utility functions for run outputs and seed handling
"""

import json
import logging
import os
import shutil
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Union

import numpy as np
import pandas as pd

from .constants import CSV_FLOAT_FORMAT, SEED_ENV_VAR
from .exceptions import ConfigurationError

logger = logging.getLogger(__name__)


@contextmanager
def atomic_output_dir(target: Union[str, Path]) -> Iterator[Path]:
    """
    Yield a temporary sibling directory that replaces `target` on success.

    On failure the temporary directory is removed and `target` is left as it was.
    """
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f'.{target.name}.', suffix='.tmp', dir=target.parent))
    try:
        yield staging
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise

    backup = None
    if target.exists():
        backup = target.with_name(f'.{target.name}.old')
        if backup.exists():
            shutil.rmtree(backup)
        os.replace(target, backup)
    os.replace(staging, target)
    if backup is not None:
        shutil.rmtree(backup, ignore_errors=True)
    logger.debug(f"Committed output directory {target}")


def _json_default(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def write_json(data: Dict[str, Any], path: Union[str, Path]):
    with open(path, 'w') as f:
        json.dump(data, f, indent=2, sort_keys=True, default=_json_default)
        f.write('\n')


def read_json(path: Union[str, Path]) -> Dict[str, Any]:
    with open(path, 'r') as f:
        return json.load(f)


def write_rows_csv(rows: List[Dict[str, Any]], columns: List[str], path: Union[str, Path]):
    """Rows to CSV with a fixed column order and float format"""
    frame = pd.DataFrame(rows, columns=columns)
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)


def write_frame_csv(frame: pd.DataFrame, path: Union[str, Path]):
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)


def resolve_seed(config_seed: int, cli_seed: Optional[int] = None) -> int:
    """--seed beats MIXNORM_SEED, which beats the config"""
    if cli_seed is not None:
        seed = cli_seed
    else:
        raw = os.getenv(SEED_ENV_VAR, '').strip()
        if not raw:
            return config_seed
        try:
            seed = int(raw)
        except ValueError:
            raise ConfigurationError('seed', f'{SEED_ENV_VAR}={raw!r} is not an integer')
    if seed < 0:
        raise ConfigurationError('seed', f'must be a non-negative integer, got {seed}')
    return seed


def parse_seed_list(text: str) -> List[int]:
    """'0,1,2' -> [0, 1, 2]"""
    try:
        seeds = [int(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise ConfigurationError('seeds', f"expected a comma-separated list of integers, got {text!r}")
    if not seeds:
        raise ConfigurationError('seeds', 'at least one seed is required')
    if any(s < 0 for s in seeds):
        raise ConfigurationError('seeds', 'seeds must be non-negative')
    return seeds


def format_metric(value: float, digits: int = 4) -> str:
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return '-'
    return f"{value:.{digits}f}"
