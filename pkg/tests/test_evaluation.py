# tests/test_evaluation.py
"""
Tests for evaluation metrics
"""

import numpy as np
import pytest

from src.core.config import ModelConfig
from src.core.data import LabeledDataset
from src.core.model import build_model
from src.core.numerics import RngStream
from src.validation.evaluation import (
    EvalReport,
    cosine_distance,
    domain_center_stats,
    embed,
    evaluate_classification,
    evaluate_model,
    linear_probe_accuracy,
    pca_project_2d,
    retrieval_metrics,
)
from src.utils.exceptions import EvaluationError


def brute_force_retrieval(qf, qids, gf, gids, ranks):
    """Ranks every query with plain Python loops"""
    aps, cmc_hits = [], {k: 0 for k in ranks}
    for q in range(len(qids)):
        dists = []
        for g in range(len(gids)):
            a, b = qf[q], gf[g]
            cos = float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
            dists.append((1.0 - cos, g))
        ranked = [g for _, g in sorted(dists)]
        relevant = [gids[g] == qids[q] for g in ranked]
        first = relevant.index(True)
        for k in ranks:
            cmc_hits[k] += first < k
        hits, precisions = 0, []
        for position, is_hit in enumerate(relevant, start=1):
            if is_hit:
                hits += 1
                precisions.append(hits / position)
        aps.append(sum(precisions) / len(precisions))
    return float(np.mean(aps)), {k: cmc_hits[k] / len(qids) for k in ranks}


class TestRetrievalMetrics:
    """Test mAP and CMC"""

    def test_wrong_then_correct(self):
        """A relevant item at rank 2 gives AP 0.5 and CMC@1 of 0"""
        result = retrieval_metrics(
            np.array([[1.0, 0.0]]), [7],
            np.array([[1.0, 0.1], [0.0, 1.0]]), [3, 7], ranks=(1, 2),
        )
        assert result.mean_ap == pytest.approx(0.5)
        assert result.cmc == {1: 0.0, 2: 1.0}

    def test_perfect_ranking(self):
        result = retrieval_metrics(
            np.array([[1.0, 0.0], [0.0, 1.0]]), [0, 1],
            np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0]]), [0, 0, 1],
        )
        assert result.mean_ap == pytest.approx(1.0)
        assert result.cmc[1] == 1.0

    def test_matches_brute_force(self, np_rng):
        qf = np_rng.normal(size=(30, 6))
        gf = np_rng.normal(size=(100, 6))
        qids = np_rng.integers(0, 10, size=30)
        gids = np.concatenate([np.arange(10), np_rng.integers(0, 10, size=90)])
        result = retrieval_metrics(qf, qids, gf, gids, ranks=(1, 5, 10))
        expected_map, expected_cmc = brute_force_retrieval(qf, qids, gf, gids, (1, 5, 10))
        assert abs(result.mean_ap - expected_map) <= 1e-9
        for k in (1, 5, 10):
            assert result.cmc[k] == pytest.approx(expected_cmc[k])

    def test_ties_keep_gallery_order(self):
        """Identical gallery rows rank in gallery order"""
        result = retrieval_metrics(np.array([[1.0, 0.0]]), [1],
                                   np.array([[1.0, 0.0], [1.0, 0.0]]), [0, 1], ranks=(1,))
        assert result.cmc[1] == 0.0
        assert result.mean_ap == pytest.approx(0.5)

    def test_cmc_is_monotone(self, np_rng):
        result = retrieval_metrics(np_rng.normal(size=(6, 3)), [0, 1, 2, 0, 1, 2],
                                   np_rng.normal(size=(12, 3)), [0, 1, 2] * 4, ranks=(1, 5, 10))
        assert result.cmc[1] <= result.cmc[5] <= result.cmc[10]

    def test_query_identity_missing_from_gallery(self):
        with pytest.raises(EvaluationError, match=r"\[9\]"):
            retrieval_metrics(np.ones((1, 2)), [9], np.ones((2, 2)), [0, 1])

    def test_no_queries(self):
        with pytest.raises(EvaluationError):
            retrieval_metrics(np.ones((0, 2)), [], np.ones((2, 2)), [0, 1])

    def test_cosine_distance(self):
        d = cosine_distance(np.array([[1.0, 0.0]]), np.array([[2.0, 0.0], [0.0, 3.0], [-1.0, 0.0]]))
        np.testing.assert_allclose(d, [[0.0, 1.0, 2.0]], atol=1e-12)


class TestDomainCenters:
    """Test domain center distances"""

    def test_symmetric_domains(self):
        stats = domain_center_stats(np.array([[0.0], [0.0], [4.0], [4.0]]), [0, 0, 1, 1])
        assert stats == {0: pytest.approx(2.0), 1: pytest.approx(2.0)}

    def test_needs_two_domains(self):
        with pytest.raises(EvaluationError):
            domain_center_stats(np.zeros((3, 2)), [0, 0, 0])


class TestPcaProjection:
    """Test the 2-D projection"""

    def test_recovers_dominant_axis(self):
        x = np.array([[-3.0, 0.0, 0.0], [3.0, 0.0, 0.0], [0.0, 0.2, 0.0], [0.0, -0.2, 0.0]])
        coords, degenerate = pca_project_2d(x)
        assert not degenerate
        np.testing.assert_allclose(np.abs(coords[:, 0]), np.abs(x[:, 0]), atol=1e-6)
        assert coords[:, 0].var() >= coords[:, 1].var()

    def test_components_are_uncorrelated(self, np_rng):
        x = np_rng.normal(size=(40, 5)) * np.array([5.0, 3.0, 1.0, 0.5, 0.1])
        coords, _ = pca_project_2d(x)
        assert abs(np.dot(coords[:, 0], coords[:, 1])) < 1e-6 * np.linalg.norm(coords) ** 2

    def test_constant_input_is_degenerate(self, caplog):
        coords, degenerate = pca_project_2d(np.ones((5, 3)))
        assert degenerate
        np.testing.assert_array_equal(coords, 0.0)
        assert "Zero-variance" in caplog.text

    def test_too_few_samples(self):
        with pytest.raises(EvaluationError):
            pca_project_2d(np.zeros((2, 3)))

    def test_isotropic_variances_match(self, np_rng):
        coords, _ = pca_project_2d(np_rng.normal(size=(4000, 3)))
        first, second = coords.var(axis=0)
        assert 0.8 < first / second < 1.25
        assert first == pytest.approx(1.0, rel=0.2)

    def test_two_dimensional_input_is_rotated(self, np_rng):
        x = np_rng.normal(size=(50, 2)) * np.array([3.0, 1.0]) + np.array([4.0, -1.0])
        coords, _ = pca_project_2d(x)
        before = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=-1)
        after = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=-1)
        np.testing.assert_allclose(after, before, atol=1e-6)


class TestLinearProbe:
    """Test the held-out probe"""

    def test_separable_classes(self):
        x = np.array([[-2.0, 0.0], [-2.0, 0.0], [2.0, 0.0], [2.0, 0.0]] * 5) + np.linspace(0, 0.1, 20)[:, None]
        labels = [0, 0, 1, 1] * 5
        assert linear_probe_accuracy(x, labels) == 1.0

    def test_needs_two_classes(self):
        with pytest.raises(EvaluationError):
            linear_probe_accuracy(np.zeros((6, 2)), [0] * 6)


class TestEvaluateModel:
    """Test the full report"""

    def test_untrained_model_is_at_chance(self, np_rng):
        """Labels drawn independently of the features put accuracy at 1 / num_classes"""
        model = build_model(ModelConfig(widths=[8, 16, 8], num_classes=20), RngStream(0), 3).eval()
        dataset = LabeledDataset(np_rng.normal(size=(4000, 8)), np_rng.integers(0, 20, size=4000),
                                 np_rng.integers(0, 3, size=4000))
        assert evaluate_classification(model, dataset) == pytest.approx(0.05, abs=0.02)

    def test_report_ranges(self, tiny_config, tiny_benchmark):
        model = build_model(tiny_config.model, RngStream(0), 3, tiny_config.dmn)
        report = evaluate_model(model, tiny_benchmark)
        assert 0.0 <= report.target_acc <= 1.0
        assert sorted(report.center_distances) == [0, 1, 2]
        assert sorted(report.source_acc) == [0, 1, 2]
        assert set(report.metrics_row()) == {'target_acc', 'map', 'cmc1', 'cmc5', 'cmc10', 'center_distance'}
        # training mode restored
        assert model.training

    def test_embed_requires_eval_mode(self, tiny_config, tiny_benchmark):
        model = build_model(tiny_config.model, RngStream(0), 3, tiny_config.dmn)
        with pytest.raises(EvaluationError, match="eval mode"):
            embed(model, tiny_benchmark.target)

    def test_embed_empty_dataset(self, tiny_config, tiny_benchmark):
        model = build_model(tiny_config.model, RngStream(0), 3, tiny_config.dmn).eval()
        empty = LabeledDataset(features=np.zeros((0, 6)), class_ids=[], domain_ids=[])
        with pytest.raises(EvaluationError, match="empty"):
            embed(model, empty)

    def test_report_validation(self):
        report = EvalReport(target_acc=1.5, map=0.5, cmc={1: 0.5}, center_distances={})
        with pytest.raises(EvaluationError):
            report.validate()
        report = EvalReport(target_acc=0.5, map=0.5, cmc={1: 0.8, 5: 0.6}, center_distances={})
        with pytest.raises(EvaluationError, match="monotone"):
            report.validate()
