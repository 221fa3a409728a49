# src/core/experiment.py
"""
Experiment orchestration: one training run end to end, checkpoint evaluation,
embedding export and multi-seed ablation suites.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .data import Benchmark, build_benchmark
from .model import EmbeddingNet
from .numerics import seeded_rng
from .trainer import Trainer
from src.utils.constants import (
    ABLATION_SUITES,
    COMPARISON_METRICS,
    LAMBDA_SWEEP,
    METRICS_COLUMNS,
    PRESETS,
    RUN_FILES,
)
from src.utils.exceptions import ConfigurationError
from src.utils.helpers import atomic_output_dir, write_frame_csv, write_json, write_rows_csv
from src.validation.evaluation import EvalReport, embed, evaluate_model, pca_project_2d

logger = logging.getLogger(__name__)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    model: EmbeddingNet
    benchmark: Benchmark
    metrics: List[Dict[str, float]]
    report: EvalReport


def benchmark_for(config: ExperimentConfig) -> Benchmark:
    return build_benchmark(config.data, seeded_rng(config.data_seed).split('data'))


def run_experiment(config: ExperimentConfig,
                   on_epoch: Optional[Callable[[Dict[str, float]], None]] = None) -> ExperimentResult:
    """Build the benchmark, train, and evaluate on the unseen target domain"""
    logger.info(f"Starting experiment '{config.name}' (seed {config.seed}, sampler {config.sampler}, "
                f"norms {config.model.norm_kinds()}, regularizer {config.loss.regularizer} lam={config.loss.lam})")
    benchmark = benchmark_for(config)
    trainer = Trainer(config, benchmark, seeded_rng(config.seed).split('train'))
    metrics = trainer.fit(evaluate=lambda model: evaluate_model(model, benchmark), on_epoch=on_epoch)
    report = evaluate_model(trainer.model, benchmark)
    logger.info(f"Finished '{config.name}': target_acc={report.target_acc:.4f} mAP={report.map:.4f}")
    return ExperimentResult(config=config, model=trainer.model, benchmark=benchmark,
                            metrics=metrics, report=report)


def write_run(result: ExperimentResult, out_dir: Union[str, Path]):
    """Write checkpoint, metrics.csv, eval_report.json and config.json in one atomic commit"""
    with atomic_output_dir(out_dir) as staging:
        save_checkpoint(result.model, result.config, staging / RUN_FILES['CHECKPOINT'])
        write_rows_csv(result.metrics, METRICS_COLUMNS, staging / RUN_FILES['METRICS'])
        write_json(report_payload(result.config, result.report), staging / RUN_FILES['REPORT'])
        result.config.to_file(staging / RUN_FILES['CONFIG'])
    logger.info(f"Wrote run outputs to {out_dir}")


def report_payload(config: ExperimentConfig, report: EvalReport) -> dict:
    payload = {'experiment': config.name, 'seed': config.seed}
    payload.update(report.to_dict())
    return payload


def evaluate_checkpoint(path: Union[str, Path]) -> Tuple[ExperimentConfig, EvalReport]:
    model, config = load_checkpoint(path)
    report = evaluate_model(model, benchmark_for(config))
    return config, report


def export_embeddings(model: EmbeddingNet, benchmark: Benchmark) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    Embeddings and a 2-D projection of every source and target sample.

    Returns:
        (embeddings frame: split, domain_id, class_id, e0..e{B-1};
         projection frame: split, domain_id, class_id, pc1, pc2)
    """
    model.eval()
    splits = [('source', benchmark.source_pool()), ('target', benchmark.target)]
    frames, all_embeddings = [], []
    for split, dataset in splits:
        embeddings, _ = embed(model, dataset)
        frame = pd.DataFrame({'split': split, 'domain_id': dataset.domain_ids, 'class_id': dataset.class_ids})
        frames.append(frame)
        all_embeddings.append(np.asarray(embeddings))
    labels = pd.concat(frames, ignore_index=True)
    stacked = np.concatenate(all_embeddings)

    embedding_frame = pd.concat(
        [labels, pd.DataFrame(stacked, columns=[f"e{i}" for i in range(stacked.shape[1])])], axis=1)
    coords, degenerate = pca_project_2d(stacked)
    if degenerate:
        logger.warning("Embeddings have zero variance; projection.csv holds zeros")
    projection_frame = labels.assign(pc1=coords[:, 0], pc2=coords[:, 1])
    return embedding_frame, projection_frame


def write_embeddings(model: EmbeddingNet, benchmark: Benchmark, out_dir: Union[str, Path]):
    embedding_frame, projection_frame = export_embeddings(model, benchmark)
    with atomic_output_dir(out_dir) as staging:
        embedding_frame.to_csv(staging / RUN_FILES['EMBEDDINGS'], index=False, float_format='%.9g')
        projection_frame.to_csv(staging / RUN_FILES['PROJECTION'], index=False, float_format='%.9g')


def suite_cells(suite: str, base: ExperimentConfig) -> Tuple[str, List[Tuple[str, ExperimentConfig]]]:
    """
    Expand a suite into (reference label, [(label, config)]).

    'layers' adds one cell per slot with dmn in that slot only; 'lambda' sweeps
    the dcr weight on the full model.
    """
    if suite not in ABLATION_SUITES:
        raise ConfigurationError('suite', f"unknown suite '{suite}', expected one of {sorted(ABLATION_SUITES)}")
    spec = ABLATION_SUITES[suite]
    reset = {'model': {'slot_norms': None}}

    def cell(label: str, preset: str, extra: Optional[dict] = None) -> Tuple[str, ExperimentConfig]:
        config = base.with_overrides(reset).with_overrides(PRESETS[preset])
        overrides = {'name': label}
        if extra:
            overrides.update(extra)
        return label, config.with_overrides(overrides)

    cells = [cell(label, preset) for label, preset in spec['cells']]
    if suite == 'layers':
        slots = base.model.num_slots
        for i in range(slots):
            kinds = ['bn'] * slots
            kinds[i] = 'dmn'
            cells.insert(-1, cell(f'dmn_slot{i}', 'mixnorm_full', {'model': {'slot_norms': kinds}}))
    elif suite == 'lambda':
        for lam in LAMBDA_SWEEP:
            cells.append(cell(f'lambda_{lam:g}', 'mixnorm_full', {'loss': {'lam': lam}}))
    return spec['reference'], cells


@dataclass
class AblationResult:
    suite: str
    reference: str
    comparison: pd.DataFrame
    summary: pd.DataFrame
    results: Dict[Tuple[str, int], EvalReport] = field(default_factory=dict)


def summarize(comparison: pd.DataFrame, reference: str, order: List[str]) -> pd.DataFrame:
    """Per-config metric means and per-seed target-accuracy wins over the reference"""
    means = comparison.groupby('config', sort=False)[COMPARISON_METRICS].mean()
    ref = comparison[comparison['config'] == reference].set_index('seed')['target_acc']
    rows = []
    for label in order:
        runs = comparison[comparison['config'] == label].set_index('seed')
        wins = int((runs['target_acc'] > ref.reindex(runs.index)).sum()) if label != reference else 0
        row = {'config': label, 'seeds': len(runs)}
        row.update(means.loc[label].to_dict())
        row['wins_vs_reference'] = wins
        rows.append(row)
    return pd.DataFrame(rows, columns=['config', 'seeds'] + COMPARISON_METRICS + ['wins_vs_reference'])


def run_ablation(suite: str, seeds: List[int], base: ExperimentConfig, out_dir: Union[str, Path],
                 on_cell: Optional[Callable[[str, int], None]] = None) -> AblationResult:
    """Run every (config, seed) cell of a suite and write comparison.csv and summary.csv"""
    reference, cells = suite_cells(suite, base)
    rows, results = [], {}
    with atomic_output_dir(out_dir) as staging:
        for seed in seeds:
            for label, config in cells:
                seeded = config.with_seed(seed)
                if on_cell is not None:
                    on_cell(label, seed)
                result = run_experiment(seeded)
                write_run(result, staging / 'cells' / f'{label}_seed{seed}')
                results[(label, seed)] = result.report
                row = {'config': label, 'seed': seed}
                row.update(result.report.metrics_row())
                rows.append(row)

        comparison = pd.DataFrame(rows, columns=['config', 'seed'] + COMPARISON_METRICS)
        summary = summarize(comparison, reference, [label for label, _ in cells])
        write_frame_csv(comparison, staging / RUN_FILES['COMPARISON'])
        write_frame_csv(summary, staging / RUN_FILES['SUMMARY'])
    logger.info(f"Ablation '{suite}' finished: {len(rows)} runs")
    return AblationResult(suite=suite, reference=reference, comparison=comparison,
                          summary=summary, results=results)
