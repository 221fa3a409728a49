# src/core/numerics.py
"""
Dense-array substrate: tensor construction, channel reductions, seeded random
streams, tensor serialization and the finite-difference gradient oracle.

Tensors are plain numpy arrays marked read-only. Rank-2 tensors are N x C,
rank-4 tensors are N x C x H x W; the channel axis is always axis 1.
"""

import logging
import struct
import zlib
from pathlib import Path
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.utils.exceptions import GradientCheckError, TensorError

logger = logging.getLogger(__name__)

WORK_DTYPE = np.float32
ORACLE_DTYPE = np.float64

TENSOR_MAGIC = b"MXN1"

Tensor = np.ndarray


def as_tensor(values, dtype=WORK_DTYPE, checked: bool = True) -> Tensor:
    """Build an immutable tensor from array-like values"""
    arr = np.array(values, dtype=dtype, copy=True)
    if arr.ndim == 0:
        raise TensorError("tensors must have rank >= 1")
    if any(extent <= 0 for extent in arr.shape):
        raise TensorError(f"tensor extents must be positive, got shape {arr.shape}")
    if checked and not np.all(np.isfinite(arr)):
        bad = tuple(int(i) for i in np.argwhere(~np.isfinite(arr))[0])
        raise TensorError(f"non-finite value at index {bad}")
    arr.flags.writeable = False
    return arr


def reduce_axes(x: Tensor) -> Tuple[int, ...]:
    """All axes except the channel axis"""
    if x.ndim < 2:
        raise TensorError(f"expected rank >= 2 tensor, got rank {x.ndim}")
    return (0,) + tuple(range(2, x.ndim))


def channel_shape(x: Tensor) -> Tuple[int, ...]:
    """Broadcast shape of a per-channel vector against x"""
    return (1, x.shape[1]) + (1,) * (x.ndim - 2)


def positions_per_sample(x: Tensor) -> int:
    """Number of spatial positions each sample contributes per channel"""
    return int(np.prod(x.shape[2:])) if x.ndim > 2 else 1


def channel_sum(x: Tensor) -> np.ndarray:
    return x.sum(axis=reduce_axes(x))


def channel_mean(x: Tensor) -> np.ndarray:
    return x.mean(axis=reduce_axes(x))


def channel_var(x: Tensor) -> np.ndarray:
    """Biased (population) variance per channel"""
    return x.var(axis=reduce_axes(x))


def combine_group_stats(counts: Sequence[int], means: Sequence[np.ndarray],
                        variances: Sequence[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Pool per-group statistics with the law of total variance.

    Args:
        counts: number of reduced elements per channel in each group
        means: per-group channel means
        variances: per-group biased channel variances

    Returns:
        (mean, variance) of the union of all groups
    """
    weights = np.asarray(counts, dtype=np.float64)
    total = weights.sum()
    if total <= 0:
        raise TensorError("cannot combine statistics of empty groups")
    means_arr = np.stack([np.asarray(m) for m in means])
    vars_arr = np.stack([np.asarray(v) for v in variances])
    w = (weights / total)[:, None]
    mean = (w * means_arr).sum(axis=0)
    variance = (w * (vars_arr + (means_arr - mean) ** 2)).sum(axis=0)
    dtype = np.result_type(means_arr.dtype, vars_arr.dtype)
    return mean.astype(dtype), variance.astype(dtype)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error used by every gradient comparison"""
    a = np.asarray(analytic, dtype=ORACLE_DTYPE)
    n = np.asarray(numeric, dtype=ORACLE_DTYPE)
    if a.shape != n.shape:
        raise GradientCheckError(f"shape mismatch {a.shape} vs {n.shape}")
    scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / scale)


class RngStream:
    """Deterministic random stream; single owner, never shared, only split"""

    def __init__(self, seed: int, _key: Tuple[int, ...] = ()):
        if seed < 0 or seed >= 2 ** 64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self._key = tuple(_key)
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=self._key)
        self._gen = np.random.Generator(np.random.PCG64(sequence))

    def split(self, label: str) -> 'RngStream':
        """Child stream keyed by label; independent of this stream's draws"""
        return RngStream(self.seed, self._key + (zlib.crc32(label.encode('utf-8')),))

    def integers(self, low: int, high: int, size=None):
        """Uniform integers in [low, high)"""
        return self._gen.integers(low, high, size=size)

    def random(self, size=None):
        return self._gen.random(size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def permutation(self, x):
        return self._gen.permutation(x)

    def choice(self, a, size=None, replace: bool = True):
        return self._gen.choice(a, size=size, replace=replace)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, key={self._key})"


def seeded_rng(seed: int) -> RngStream:
    return RngStream(seed)


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray,
                     h: float = 1e-5) -> np.ndarray:
    """
    Central-difference gradient of a scalar function, in 64-bit precision.

    Args:
        f: scalar-valued function of a tensor shaped like x
        x: evaluation point
        h: step size

    Returns:
        float64 array shaped like x
    """
    if h <= 0:
        raise GradientCheckError(f"step size must be positive, got {h}")
    point = np.array(x, dtype=ORACLE_DTYPE, copy=True)
    grad = np.zeros_like(point)
    for index in np.ndindex(point.shape):
        original = point[index]
        point[index] = original + h
        f_plus = float(f(point.copy()))
        point[index] = original - h
        f_minus = float(f(point.copy()))
        point[index] = original
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise GradientCheckError(f"non-finite function value at coordinate {index}",
                                     coordinate=index)
        grad[index] = (f_plus - f_minus) / (2.0 * h)
    return grad


def tensor_to_bytes(x: np.ndarray) -> bytes:
    """Encode as MXN1: magic, little-endian uint32 rank and extents, float32 payload"""
    arr = np.asarray(x)
    header = TENSOR_MAGIC + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    return header + np.ascontiguousarray(arr, dtype='<f4').tobytes()


def tensor_from_bytes(blob: bytes) -> Tensor:
    if blob[:4] != TENSOR_MAGIC:
        raise TensorError(f"bad magic {blob[:4]!r}, expected {TENSOR_MAGIC!r}")
    if len(blob) < 8:
        raise TensorError(f"truncated header: {len(blob)} bytes, need at least 8")
    (rank,) = struct.unpack_from("<I", blob, 4)
    offset = 8 + 4 * rank
    if len(blob) < offset:
        raise TensorError(f"truncated header: rank {rank} needs {offset} bytes, got {len(blob)}")
    shape = struct.unpack_from(f"<{rank}I", blob, 8)
    expected = int(np.prod(shape)) * 4
    payload = blob[offset:]
    if len(payload) != expected:
        raise TensorError(f"payload has {len(payload)} bytes, shape {shape} needs {expected}")
    data = np.frombuffer(payload, dtype='<f4').reshape(shape)
    return as_tensor(data, dtype=WORK_DTYPE, checked=False)


def save_tensor(x: np.ndarray, path: Union[str, Path]):
    Path(path).write_bytes(tensor_to_bytes(x))


def load_tensor(path: Union[str, Path]) -> Tensor:
    return tensor_from_bytes(Path(path).read_bytes())


def save_tensor_csv(x: np.ndarray, path: Union[str, Path], prefix: str = "v"):
    """Inspection dump; rank >= 3 tensors are flattened to one row per sample"""
    arr = np.asarray(x)
    rows = arr.reshape(arr.shape[0], -1) if arr.ndim > 1 else arr.reshape(-1, 1)
    columns = [f"{prefix}{i}" for i in range(rows.shape[1])]
    pd.DataFrame(rows, columns=columns).to_csv(path, index=False, float_format="%.9g")


def load_tensor_csv(path: Union[str, Path], shape: Optional[Tuple[int, ...]] = None) -> Tensor:
    rows = pd.read_csv(path).to_numpy(dtype=WORK_DTYPE)
    return as_tensor(rows.reshape(shape) if shape is not None else rows)

