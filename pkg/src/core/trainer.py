# src/core/trainer.py
"""
Training loop: batch sampling, the overall objective, backpropagation through
every layer and loss, Adam updates with step decay, and per-epoch metrics.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional

import numpy as np

from .data import Benchmark, DomainBatch, rs_batches, us_batches
from .losses import ClassCenters, LossValue, batch_hard_triplet, center_loss, cross_entropy, dcr_loss, overall_loss
from .model import Adam, EmbeddingNet, build_model
from .numerics import RngStream
from .partition import sample_partition
from src.utils.constants import METRICS_COLUMNS
from src.utils.exceptions import ConfigurationError, NumericalError

logger = logging.getLogger(__name__)


@dataclass
class StepLosses:
    loss_cls: float
    loss_tri: float
    loss_dcr: float
    loss_total: float

    def as_dict(self) -> Dict[str, float]:
        return {'loss_cls': self.loss_cls, 'loss_tri': self.loss_tri,
                'loss_dcr': self.loss_dcr, 'loss_total': self.loss_total}


def make_batch_stream(config, benchmark: Benchmark, rng: RngStream) -> Iterator[DomainBatch]:
    """The configured sampler over the source domains"""
    if config.sampler == 'us':
        return us_batches(benchmark.sources, config.p_ids, config.k_per_id, rng)
    # p_ids identities x (k_per_id * D) images keeps the batch size of US
    return rs_batches(benchmark.sources, config.batch_size, rng,
                      k_per_id=config.k_per_id * benchmark.num_sources)


class Trainer:
    """Owns one model, its optimizer, sampler and random streams for a training run"""

    def __init__(self, config, benchmark: Benchmark, rng: RngStream,
                 model: Optional[EmbeddingNet] = None):
        self.config = config
        self.benchmark = benchmark
        self.model = model or build_model(config.model, rng.split('model'), benchmark.num_sources, config.dmn)
        if config.sampler == 'rs' and self.model.has_dmn:
            raise ConfigurationError('sampler', 'rs sampling cannot feed dmn layers')
        schedule = config.schedule
        self.optimizer = Adam(betas=(schedule.beta1, schedule.beta2), eps=schedule.adam_eps)
        self.centers = None
        if config.loss.regularizer == 'center':
            self.centers = ClassCenters.zeros(config.model.num_classes, self.model.embedding_dim,
                                              update_rate=config.loss.center_update_rate, dtype=self.model.dtype)
        self.partition_rng = rng.split('shared-partition')
        self.batches = make_batch_stream(config, benchmark, rng.split('sampler'))
        self.iteration = 0

    def _regularizer(self, embedding: np.ndarray, batch: DomainBatch) -> LossValue:
        loss_cfg = self.config.loss
        if loss_cfg.regularizer == 'dcr':
            return dcr_loss(embedding, batch.domain_ids, mode=loss_cfg.dcr_mode)
        if loss_cfg.regularizer == 'center':
            return center_loss(embedding, batch.class_ids, self.centers, update=True)
        return LossValue(value=0.0, grads={'features': np.zeros_like(embedding)})

    def _partitions(self):
        if self.config.dmn.shared_partition and self.model.has_dmn:
            partition = sample_partition(self.model.policy, self.partition_rng)
            logger.debug(f"Iteration {self.iteration}: shared partition {partition}")
            return partition
        return None

    def train_step(self, batch: DomainBatch, lr: float) -> StepLosses:
        """One forward, backward and optimizer update on a batch"""
        self.model.train()
        x = np.asarray(batch.features, dtype=self.model.dtype)
        embedding, logits = self.model.forward(x, batch.domain_ids, self._partitions())

        cls = cross_entropy(logits, batch.class_ids)
        tri = batch_hard_triplet(embedding, batch.class_ids, margin=self.config.loss.margin)
        reg = self._regularizer(embedding, batch)
        lam = self.config.loss.lam
        if not all(np.isfinite(v) for v in (cls.value, tri.value, reg.value)):
            raise NumericalError(self.iteration)
        total = overall_loss(cls.value, tri.value, reg.value, lam)

        grad_embedding = tri.grads['embeddings'] + lam * reg.grads['features']
        self.model.backward(grad_embedding.astype(self.model.dtype), cls.grads['logits'].astype(self.model.dtype))
        self.optimizer.step(self.model, lr)
        self.iteration += 1
        return StepLosses(loss_cls=cls.value, loss_tri=tri.value, loss_dcr=reg.value, loss_total=total)

    def _should_evaluate(self, epoch: int) -> bool:
        every = self.config.schedule.eval_every
        last = epoch == self.config.schedule.epochs - 1
        return last or (every > 0 and (epoch + 1) % every == 0)

    def fit(self, evaluate: Optional[Callable] = None,
            on_epoch: Optional[Callable[[Dict[str, float]], None]] = None) -> List[Dict[str, float]]:
        """
        Run the schedule.

        Args:
            evaluate: model -> EvalReport, called on evaluation epochs
            on_epoch: receives each finished metrics row

        Returns:
            One metrics row per epoch, keyed by METRICS_COLUMNS
        """
        schedule = self.config.schedule
        rows = []
        for epoch in range(schedule.epochs):
            lr = schedule.lr_at(epoch)
            totals = {'loss_cls': 0.0, 'loss_tri': 0.0, 'loss_dcr': 0.0, 'loss_total': 0.0}
            for _ in range(schedule.iterations_per_epoch):
                losses = self.train_step(next(self.batches), lr)
                for key, value in losses.as_dict().items():
                    totals[key] += value

            row = {'epoch': epoch + 1}
            row.update({k: v / schedule.iterations_per_epoch for k, v in totals.items()})
            scores = {'target_acc': np.nan, 'map': np.nan, 'cmc1': np.nan, 'cmc5': np.nan, 'cmc10': np.nan}
            if evaluate is not None and self._should_evaluate(epoch):
                report = evaluate(self.model)
                scores.update({k: v for k, v in report.metrics_row().items() if k in scores})
            row.update(scores)
            rows.append({column: row[column] for column in METRICS_COLUMNS})

            logger.info(f"Epoch {epoch + 1}/{schedule.epochs} lr={lr:.2e} "
                        f"loss={row['loss_total']:.4f} target_acc={row['target_acc']:.4f}")
            if on_epoch is not None:
                on_epoch(rows[-1])
        self.model.eval()
        return rows


def train(model: EmbeddingNet, benchmark: Benchmark, config, rng: RngStream,
          evaluate: Optional[Callable] = None):
    """Train a model on the benchmark's source domains; returns (model, metrics rows)"""
    trainer = Trainer(config, benchmark, rng, model=model)
    rows = trainer.fit(evaluate=evaluate)
    return trainer.model, rows
