# src/core/data.py
"""
Synthetic multi-domain data: shared class prototypes rendered through per-domain
styles, the uniform-per-domain (US) and pooled (RS) batch samplers, and the
benchmark layout of source domains plus one unseen target domain.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .numerics import WORK_DTYPE, RngStream, as_tensor
from src.utils.exceptions import DataError

logger = logging.getLogger(__name__)

ORTHOGONALITY_TOLERANCE = 1e-6


@dataclass
class DomainSpec:
    """Style of one domain: per-feature scale and shift, orthogonal mixing, noise level"""

    domain_id: int
    style_scale: np.ndarray
    style_shift: np.ndarray
    mixing: np.ndarray
    noise_sigma: float

    @property
    def dim(self) -> int:
        return int(self.style_scale.shape[0])

    def validate(self):
        c = self.dim
        if self.style_shift.shape != (c,) or self.mixing.shape != (c, c):
            raise DataError(f"domain {self.domain_id}: style vectors and mixing disagree on dimension")
        if np.any(self.style_scale <= 0):
            raise DataError(f"domain {self.domain_id}: style_scale must be positive")
        if self.noise_sigma < 0:
            raise DataError(f"domain {self.domain_id}: noise_sigma must be non-negative")
        drift = np.abs(self.mixing.T @ self.mixing - np.eye(c)).max()
        if drift > ORTHOGONALITY_TOLERANCE:
            raise DataError(f"domain {self.domain_id}: mixing is not orthogonal (max drift {drift:.2e})")

    def render(self, clean: np.ndarray) -> np.ndarray:
        """mixing . (scale * clean + shift), one row per sample"""
        return (self.style_scale * clean + self.style_shift) @ self.mixing.T

    @classmethod
    def identity(cls, domain_id: int, dim: int, noise_sigma: float = 0.0) -> 'DomainSpec':
        return cls(domain_id=domain_id, style_scale=np.ones(dim), style_shift=np.zeros(dim),
                   mixing=np.eye(dim), noise_sigma=noise_sigma)


@dataclass
class LabeledDataset:
    """Features with class ids and domain ids; sample_ids are unique across a benchmark"""

    features: np.ndarray
    class_ids: np.ndarray
    domain_ids: np.ndarray
    sample_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        n = self.features.shape[0]
        self.class_ids = np.asarray(self.class_ids, dtype=np.int64)
        self.domain_ids = np.asarray(self.domain_ids, dtype=np.int64)
        if self.class_ids.shape != (n,) or self.domain_ids.shape != (n,):
            raise DataError(f"{n} samples but {self.class_ids.shape[0]} class ids "
                            f"and {self.domain_ids.shape[0]} domain ids")
        if self.sample_ids is None:
            self.sample_ids = np.arange(n, dtype=np.int64)
        else:
            self.sample_ids = np.asarray(self.sample_ids, dtype=np.int64)

    def __len__(self) -> int:
        return int(self.features.shape[0])

    @property
    def domains(self) -> List[int]:
        return sorted(int(d) for d in np.unique(self.domain_ids))

    @property
    def classes(self) -> List[int]:
        return sorted(int(c) for c in np.unique(self.class_ids))

    def class_counts(self) -> dict:
        values, counts = np.unique(self.class_ids, return_counts=True)
        return {int(v): int(c) for v, c in zip(values, counts)}

    def subset(self, indices: Sequence[int]) -> 'LabeledDataset':
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            features=as_tensor(self.features[idx], checked=False),
            class_ids=self.class_ids[idx],
            domain_ids=self.domain_ids[idx],
            sample_ids=self.sample_ids[idx],
        )

    @classmethod
    def concat(cls, datasets: Sequence['LabeledDataset']) -> 'LabeledDataset':
        if not datasets:
            raise DataError("nothing to concatenate")
        return cls(
            features=as_tensor(np.concatenate([d.features for d in datasets]), checked=False),
            class_ids=np.concatenate([d.class_ids for d in datasets]),
            domain_ids=np.concatenate([d.domain_ids for d in datasets]),
            sample_ids=np.concatenate([d.sample_ids for d in datasets]),
        )

    def to_frame(self) -> pd.DataFrame:
        flat = np.asarray(self.features).reshape(len(self), -1)
        frame = pd.DataFrame(flat, columns=[f"f{i}" for i in range(flat.shape[1])])
        frame.insert(0, 'class_id', self.class_ids)
        frame.insert(0, 'domain_id', self.domain_ids)
        return frame

    def to_csv(self, path: Union[str, Path]):
        """Columns: domain_id, class_id, f0..f{C-1}"""
        self.to_frame().to_csv(path, index=False, float_format="%.9g")

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> 'LabeledDataset':
        frame = pd.read_csv(path)
        missing = [c for c in ('domain_id', 'class_id') if c not in frame.columns]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        feature_cols = [c for c in frame.columns if c.startswith('f')]
        if not feature_cols:
            raise DataError(f"{path}: no feature columns")
        return cls(
            features=as_tensor(frame[feature_cols].to_numpy(dtype=WORK_DTYPE)),
            class_ids=frame['class_id'].to_numpy(),
            domain_ids=frame['domain_id'].to_numpy(),
        )


@dataclass
class DomainBatch:
    features: np.ndarray
    class_ids: np.ndarray
    domain_ids: np.ndarray
    sample_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return int(self.features.shape[0])

    def domain_counts(self, num_domains: int) -> np.ndarray:
        return np.bincount(self.domain_ids, minlength=num_domains)


def make_prototypes(num_classes: int, dim: int, rng: RngStream, scale: float = 1.0) -> np.ndarray:
    """Class prototypes shared by every domain"""
    if num_classes < 1 or dim < 1:
        raise DataError(f"need at least one class and one feature, got {num_classes}x{dim}")
    return scale * rng.normal(size=(num_classes, dim))


def _near_identity_rotation(dim: int, strength: float, rng: RngStream) -> np.ndarray:
    q, r = np.linalg.qr(np.eye(dim) + strength * rng.normal(size=(dim, dim)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def make_domain_spec(domain_id: int, dim: int, rng: RngStream, scale_spread: float = 1.5,
                     shift_sigma: float = 1.5, mixing_strength: float = 0.3,
                     noise_sigma: float = 0.3) -> DomainSpec:
    """
    Draw a random domain style.

    Per-feature scales are log-uniform in [1/scale_spread, scale_spread], shifts are
    Gaussian, and the mixing matrix is a random rotation close to the identity.
    """
    if scale_spread < 1:
        raise DataError(f"scale_spread must be >= 1, got {scale_spread}")
    log_spread = np.log(scale_spread)
    spec = DomainSpec(
        domain_id=domain_id,
        style_scale=np.exp(rng.uniform(-log_spread, log_spread, size=dim)),
        style_shift=rng.normal(0.0, shift_sigma, size=dim),
        mixing=_near_identity_rotation(dim, mixing_strength, rng),
        noise_sigma=noise_sigma,
    )
    spec.validate()
    return spec


def generate_domain_dataset(prototypes: np.ndarray, spec: DomainSpec, ids: int, k_per_id: int,
                            rng: RngStream, class_offset: int = 0) -> LabeledDataset:
    """
    Render k_per_id noisy samples of the first `ids` prototypes through a domain style.

    Class ids are class_offset + prototype index, grouped by class.
    """
    if ids < 2:
        raise DataError(f"need at least 2 identities, got {ids}")
    if k_per_id < 2:
        raise DataError(f"need at least 2 samples per identity, got {k_per_id}")
    if ids > prototypes.shape[0]:
        raise DataError(f"asked for {ids} identities but only {prototypes.shape[0]} prototypes exist")
    if prototypes.shape[1] != spec.dim:
        raise DataError(f"prototypes have {prototypes.shape[1]} features, domain {spec.domain_id} has {spec.dim}")

    labels = np.repeat(np.arange(ids), k_per_id)
    clean = prototypes[labels] + rng.normal(0.0, 1.0, size=(len(labels), spec.dim)) * spec.noise_sigma
    features = spec.render(clean)
    logger.debug(f"Generated domain {spec.domain_id}: {ids} ids x {k_per_id} samples")
    return LabeledDataset(
        features=as_tensor(features),
        class_ids=labels + class_offset,
        domain_ids=np.full(len(labels), spec.domain_id),
    )


def _eligible_classes(dataset: LabeledDataset, k_per_id: int) -> np.ndarray:
    counts = dataset.class_counts()
    return np.array(sorted(c for c, n in counts.items() if n >= k_per_id), dtype=np.int64)


def _pk_indices(dataset: LabeledDataset, classes: np.ndarray, k_per_id: int, rng: RngStream) -> List[int]:
    indices = []
    for label in classes:
        members = np.flatnonzero(dataset.class_ids == label)
        indices.extend(int(i) for i in rng.choice(members, size=k_per_id, replace=False))
    return indices


def _batch_from(datasets: Sequence[LabeledDataset], picks: Sequence[List[int]]) -> DomainBatch:
    parts = [d.subset(idx) for d, idx in zip(datasets, picks) if idx]
    pooled = LabeledDataset.concat(parts)
    return DomainBatch(features=pooled.features, class_ids=pooled.class_ids,
                       domain_ids=pooled.domain_ids, sample_ids=pooled.sample_ids)


def us_batches(datasets: Sequence[LabeledDataset], p_ids: int, k_per_id: int,
               rng: RngStream) -> Iterator[DomainBatch]:
    """
    Uniform-per-domain sampling: every batch holds p_ids identities x k_per_id
    samples from each domain, identities drawn without replacement per domain.

    Preconditions are checked before the stream is returned.
    """
    if not datasets:
        raise DataError("no domains to sample from")
    if p_ids < 1 or k_per_id < 1:
        raise DataError(f"p_ids and k_per_id must be positive, got {p_ids} and {k_per_id}")
    eligible = []
    for dataset in datasets:
        domain = dataset.domains[0] if len(dataset) else '?'
        classes = _eligible_classes(dataset, k_per_id)
        if len(classes) < p_ids:
            raise DataError(
                f"domain {domain}: {len(classes)} identities have >= {k_per_id} samples, need {p_ids}"
            )
        eligible.append(classes)
    return _us_stream(list(datasets), eligible, p_ids, k_per_id, rng)


def _us_stream(datasets, eligible, p_ids, k_per_id, rng) -> Iterator[DomainBatch]:
    expected = set(int(d) for dataset in datasets for d in dataset.domains)
    while True:
        picks = []
        for dataset, classes in zip(datasets, eligible):
            chosen = rng.choice(classes, size=p_ids, replace=False)
            picks.append(_pk_indices(dataset, chosen, k_per_id, rng))
        batch = _batch_from(datasets, picks)
        present = set(int(d) for d in np.unique(batch.domain_ids))
        if present != expected:
            raise DataError(f"batch is missing domains {sorted(expected - present)}")
        yield batch


def rs_batches(datasets: Sequence[LabeledDataset], batch_size: int, rng: RngStream,
               k_per_id: Optional[int] = None) -> Iterator[DomainBatch]:
    """
    Pooled random sampling over the union of all domains.

    Without k_per_id each batch is a uniform draw without replacement from the
    pool. With k_per_id, identities are drawn from the pool and k_per_id samples
    per identity are taken regardless of domain, so per-domain counts still vary.
    """
    if batch_size < 2:
        raise DataError(f"batch_size must be >= 2, got {batch_size}")
    pooled = LabeledDataset.concat(list(datasets))
    if k_per_id is None:
        if batch_size > len(pooled):
            raise DataError(f"batch_size {batch_size} exceeds the pooled size {len(pooled)}")
        return _rs_uniform_stream(pooled, batch_size, rng)

    if k_per_id < 1 or batch_size % k_per_id:
        raise DataError(f"batch_size {batch_size} is not a multiple of k_per_id {k_per_id}")
    p_ids = batch_size // k_per_id
    classes = _eligible_classes(pooled, k_per_id)
    if len(classes) < p_ids:
        raise DataError(f"pooled data has {len(classes)} identities with >= {k_per_id} samples, need {p_ids}")
    return _rs_pk_stream(pooled, classes, p_ids, k_per_id, rng)


def _rs_uniform_stream(pooled, batch_size, rng) -> Iterator[DomainBatch]:
    while True:
        picks = [int(i) for i in rng.choice(len(pooled), size=batch_size, replace=False)]
        yield _batch_from([pooled], [picks])


def _rs_pk_stream(pooled, classes, p_ids, k_per_id, rng) -> Iterator[DomainBatch]:
    while True:
        chosen = rng.choice(classes, size=p_ids, replace=False)
        yield _batch_from([pooled], [_pk_indices(pooled, chosen, k_per_id, rng)])


@dataclass
class Benchmark:
    """Source training domains, the unseen target classification set, and target retrieval splits"""

    sources: List[LabeledDataset]
    target: LabeledDataset
    query: LabeledDataset
    gallery: LabeledDataset
    specs: List[DomainSpec]
    target_spec: DomainSpec

    @property
    def num_sources(self) -> int:
        return len(self.sources)

    def source_pool(self) -> LabeledDataset:
        return LabeledDataset.concat(self.sources)


def _split_query_gallery(dataset: LabeledDataset, query_fraction: float):
    query_idx, gallery_idx = [], []
    for label in dataset.classes:
        members = np.flatnonzero(dataset.class_ids == label)
        n_query = min(max(1, int(round(query_fraction * len(members)))), len(members) - 1)
        query_idx.extend(members[:n_query].tolist())
        gallery_idx.extend(members[n_query:].tolist())
    return dataset.subset(query_idx), dataset.subset(gallery_idx)


def _with_sample_ids(dataset: LabeledDataset, start: int) -> LabeledDataset:
    dataset.sample_ids = np.arange(start, start + len(dataset), dtype=np.int64)
    return dataset


def build_benchmark(config, rng: RngStream) -> Benchmark:
    """
    Lay out the desk-scale benchmark described by a DataConfig.

    Sources are domains 0..D-1 sharing one set of identities; the target is
    domain D with its own style. The target holds a classification set over the
    shared identities and a retrieval set over disjoint identities, split into
    query and gallery per identity.
    """
    config.validate()
    dim = config.feature_dim
    prototypes = make_prototypes(config.num_classes, dim, rng.split('prototypes'), config.prototype_scale)
    retrieval_prototypes = make_prototypes(config.retrieval_ids, dim, rng.split('retrieval-prototypes'),
                                           config.prototype_scale)

    def spec_for(domain_id: int) -> DomainSpec:
        return make_domain_spec(domain_id, dim, rng.split(f'style-{domain_id}'),
                                scale_spread=config.scale_spread, shift_sigma=config.shift_sigma,
                                mixing_strength=config.mixing_strength, noise_sigma=config.noise_sigma)

    next_id = 0
    specs, sources = [], []
    for domain_id in range(config.num_sources):
        spec = spec_for(domain_id)
        dataset = generate_domain_dataset(prototypes, spec, config.num_classes, config.samples_per_class,
                                          rng.split(f'samples-{domain_id}'))
        specs.append(spec)
        sources.append(_with_sample_ids(dataset, next_id))
        next_id += len(dataset)

    target_spec = spec_for(config.num_sources)
    target = generate_domain_dataset(prototypes, target_spec, config.num_classes,
                                     config.target_samples_per_class, rng.split('target-samples'))
    _with_sample_ids(target, next_id)
    next_id += len(target)

    retrieval = generate_domain_dataset(retrieval_prototypes, target_spec, config.retrieval_ids,
                                        config.retrieval_samples_per_id, rng.split('retrieval-samples'),
                                        class_offset=config.num_classes)
    _with_sample_ids(retrieval, next_id)
    query, gallery = _split_query_gallery(retrieval, config.query_fraction)

    logger.info(f"Built benchmark: {config.num_sources} sources x {config.num_classes} ids, "
                f"target {len(target)} samples, retrieval {len(query)} queries / {len(gallery)} gallery")
    return Benchmark(sources=sources, target=target, query=query, gallery=gallery,
                     specs=specs, target_spec=target_spec)
