# tests/test_data.py
"""
Tests for synthetic domains, batch samplers and the benchmark layout
"""

import numpy as np
import pytest

from src.core.config import DataConfig
from src.core.data import (
    DomainSpec,
    LabeledDataset,
    build_benchmark,
    generate_domain_dataset,
    make_domain_spec,
    make_prototypes,
    rs_batches,
    us_batches,
)
from src.core.numerics import RngStream
from src.utils.exceptions import ConfigurationError, DataError
from src.validation.evaluation import linear_probe_accuracy


def make_sources(rng, domains=3, ids=5, k=4, dim=3):
    prototypes = make_prototypes(ids, dim, rng.split('prototypes'))
    return [
        generate_domain_dataset(prototypes, make_domain_spec(d, dim, rng.split(f'style-{d}')), ids, k,
                                rng.split(f'samples-{d}'))
        for d in range(domains)
    ]


class TestDomainSpec:
    """Test domain styles"""

    def test_identity_render_is_noop(self):
        clean = np.array([[1.0, -2.0]])
        np.testing.assert_allclose(DomainSpec.identity(0, 2).render(clean), clean)

    def test_render_applies_scale_shift_then_mixing(self):
        spec = DomainSpec(domain_id=1, style_scale=np.array([2.0, 1.0]), style_shift=np.array([0.0, 1.0]),
                          mixing=np.array([[0.0, 1.0], [1.0, 0.0]]), noise_sigma=0.0)
        np.testing.assert_allclose(spec.render(np.array([[1.0, 1.0]])), [[2.0, 2.0]])

    def test_random_spec_is_valid(self, rng):
        spec = make_domain_spec(0, 5, rng)
        np.testing.assert_allclose(spec.mixing.T @ spec.mixing, np.eye(5), atol=1e-10)
        assert np.all(spec.style_scale >= 1 / 1.5) and np.all(spec.style_scale <= 1.5)

    def test_rejects_non_orthogonal_mixing(self):
        spec = DomainSpec.identity(0, 2)
        spec.mixing = np.array([[2.0, 0.0], [0.0, 1.0]])
        with pytest.raises(DataError, match="orthogonal"):
            spec.validate()

    def test_rejects_non_positive_scale(self):
        spec = DomainSpec.identity(3, 2)
        spec.style_scale = np.array([1.0, 0.0])
        with pytest.raises(DataError, match="domain 3"):
            spec.validate()


class TestGenerateDomainDataset:
    """Test per-domain dataset generation"""

    def test_layout(self, rng):
        prototypes = make_prototypes(4, 3, rng)
        dataset = generate_domain_dataset(prototypes, DomainSpec.identity(2, 3), 3, 5, rng, class_offset=10)
        assert len(dataset) == 15
        assert dataset.classes == [10, 11, 12]
        assert dataset.domains == [2]
        assert dataset.class_counts() == {10: 5, 11: 5, 12: 5}

    def test_zero_noise_reproduces_prototypes(self, rng):
        prototypes = make_prototypes(2, 3, rng)
        dataset = generate_domain_dataset(prototypes, DomainSpec.identity(0, 3), 2, 2, rng)
        np.testing.assert_allclose(dataset.features[0], prototypes[0], rtol=1e-6, atol=1e-6)

    @pytest.mark.parametrize('ids,k', [(1, 4), (3, 1), (9, 4)])
    def test_rejects_bad_sizes(self, rng, ids, k):
        with pytest.raises(DataError):
            generate_domain_dataset(make_prototypes(4, 3, rng), DomainSpec.identity(0, 3), ids, k, rng)


class TestLabeledDataset:
    """Test the dataset container"""

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            LabeledDataset(features=np.zeros((3, 2)), class_ids=[0, 1], domain_ids=[0, 0, 0])

    def test_subset_and_concat(self):
        a = LabeledDataset(features=np.arange(6.0).reshape(3, 2), class_ids=[0, 1, 2], domain_ids=[0, 0, 0])
        b = LabeledDataset(features=np.ones((1, 2)), class_ids=[5], domain_ids=[1], sample_ids=[9])
        joined = LabeledDataset.concat([a.subset([2]), b])
        assert joined.class_ids.tolist() == [2, 5]
        assert joined.sample_ids.tolist() == [2, 9]
        assert joined.domains == [0, 1]

    def test_csv_round_trip(self, tmp_path):
        dataset = LabeledDataset(features=np.array([[1.5, 2.0], [3.0, -1.0]], dtype=np.float32),
                                 class_ids=[4, 7], domain_ids=[0, 1])
        dataset.to_csv(tmp_path / "d.csv")
        header = (tmp_path / "d.csv").read_text().splitlines()[0]
        assert header == "domain_id,class_id,f0,f1"
        loaded = LabeledDataset.from_csv(tmp_path / "d.csv")
        np.testing.assert_array_equal(loaded.features, dataset.features)
        assert loaded.class_ids.tolist() == [4, 7]

    def test_csv_missing_columns(self, tmp_path):
        (tmp_path / "bad.csv").write_text("f0,f1\n1,2\n")
        with pytest.raises(DataError, match="missing columns"):
            LabeledDataset.from_csv(tmp_path / "bad.csv")


class TestUniformSampler:
    """Test uniform-per-domain (US) batches"""

    def test_every_domain_equally_represented(self, rng):
        sources = make_sources(rng)
        stream = us_batches(sources, p_ids=2, k_per_id=3, rng=rng.split('batches'))
        for _ in range(5):
            batch = next(stream)
            assert len(batch) == 3 * 2 * 3
            assert batch.domain_counts(3).tolist() == [6, 6, 6]
            for domain in range(3):
                labels = batch.class_ids[batch.domain_ids == domain]
                _, counts = np.unique(labels, return_counts=True)
                assert counts.tolist() == [3, 3]

    def test_no_duplicate_samples_in_batch(self, rng):
        sources = make_sources(rng)
        for offset, dataset in enumerate(sources):
            dataset.sample_ids = dataset.sample_ids + 100 * offset
        batch = next(us_batches(sources, p_ids=3, k_per_id=4, rng=rng))
        assert len(set(batch.sample_ids.tolist())) == len(batch)

    def test_deterministic(self):
        a = next(us_batches(make_sources(RngStream(1)), 2, 2, RngStream(5)))
        b = next(us_batches(make_sources(RngStream(1)), 2, 2, RngStream(5)))
        np.testing.assert_array_equal(a.features, b.features)

    def test_too_few_identities_names_domain(self, rng):
        sources = make_sources(rng)
        with pytest.raises(DataError, match="domain 0"):
            us_batches(sources, p_ids=6, k_per_id=2, rng=rng)

    def test_too_few_samples(self, rng):
        with pytest.raises(DataError):
            us_batches(make_sources(rng), p_ids=2, k_per_id=5, rng=rng)


class TestRandomSampler:
    """Test pooled (RS) batches"""

    def test_uniform_batch_size(self, rng):
        batch = next(rs_batches(make_sources(rng), batch_size=10, rng=rng))
        assert len(batch) == 10
        assert len(set(batch.sample_ids.tolist())) <= 10

    def test_pk_batches_have_k_per_identity(self, rng):
        batch = next(rs_batches(make_sources(rng), batch_size=12, rng=rng, k_per_id=4))
        _, counts = np.unique(batch.class_ids, return_counts=True)
        assert counts.tolist() == [4, 4, 4]

    def test_domain_counts_vary(self, rng):
        """Pooled sampling does not balance domains"""
        stream = rs_batches(make_sources(rng), batch_size=6, rng=rng)
        counts = {tuple(next(stream).domain_counts(3).tolist()) for _ in range(30)}
        assert len(counts) > 1

    def test_domain_counts_track_pool_share(self, rng):
        """Mean per-domain counts over 1000 batches sit in a 3-sigma binomial band around B * n_d / N"""
        prototypes = make_prototypes(5, 3, rng.split('prototypes'))
        sources = [
            generate_domain_dataset(prototypes, make_domain_spec(d, 3, rng.split(f'style-{d}')), 5, k,
                                    rng.split(f'samples-{d}'))
            for d, k in enumerate([2, 4, 6])
        ]
        stream = rs_batches(sources, batch_size=12, rng=rng.split('batches'))
        counts = np.array([next(stream).domain_counts(3) for _ in range(1000)])
        share = np.array([10, 20, 30]) / 60
        band = 3 * np.sqrt(12 * share * (1 - share) / 1000)
        assert np.all(np.abs(counts.mean(axis=0) - 12 * share) < band)

    def test_rejects_oversized_batch(self, rng):
        with pytest.raises(DataError, match="exceeds"):
            rs_batches(make_sources(rng), batch_size=1000, rng=rng)

    def test_rejects_indivisible_pk(self, rng):
        with pytest.raises(DataError, match="multiple"):
            rs_batches(make_sources(rng), batch_size=10, rng=rng, k_per_id=4)


class TestBenchmark:
    """Test the benchmark layout"""

    def test_layout(self, tiny_benchmark, tiny_config):
        data = tiny_config.data
        assert tiny_benchmark.num_sources == 3
        assert [s.domains for s in tiny_benchmark.sources] == [[0], [1], [2]]
        assert tiny_benchmark.target.domains == [3]
        assert tiny_benchmark.target.classes == list(range(data.num_classes))
        assert len(tiny_benchmark.target) == data.num_classes * data.target_samples_per_class

    def test_retrieval_identities_are_disjoint(self, tiny_benchmark, tiny_config):
        retrieval = set(tiny_benchmark.query.classes) | set(tiny_benchmark.gallery.classes)
        assert retrieval == set(range(6, 6 + tiny_config.data.retrieval_ids))
        # every query identity has gallery samples
        assert set(tiny_benchmark.query.classes) <= set(tiny_benchmark.gallery.classes)

    def test_sample_ids_are_unique(self, tiny_benchmark):
        parts = tiny_benchmark.sources + [tiny_benchmark.target, tiny_benchmark.query, tiny_benchmark.gallery]
        ids = np.concatenate([p.sample_ids for p in parts])
        assert len(np.unique(ids)) == len(ids)

    def test_deterministic(self, tiny_config):
        a = build_benchmark(tiny_config.data, RngStream(4))
        b = build_benchmark(tiny_config.data, RngStream(4))
        np.testing.assert_array_equal(a.target.features, b.target.features)
        np.testing.assert_array_equal(a.query.features, b.query.features)

    def test_domains_are_linearly_separable(self, default_data_config):
        """Softmax regression on source features recovers the domain id"""
        pool = build_benchmark(default_data_config, RngStream(0).split('data')).source_pool()
        assert linear_probe_accuracy(pool.features, pool.domain_ids) > 0.9

    def test_invalid_config(self):
        with pytest.raises(ConfigurationError, match="data.num_sources"):
            build_benchmark(DataConfig(num_sources=0), RngStream(0))
