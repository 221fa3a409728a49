# tests/test_numerics.py
"""
Tests for the dense-array substrate
"""

import numpy as np
import pytest

from src.core.numerics import (
    RngStream,
    as_tensor,
    channel_mean,
    channel_var,
    combine_group_stats,
    finite_diff_grad,
    load_tensor,
    load_tensor_csv,
    relative_error,
    save_tensor,
    save_tensor_csv,
    tensor_from_bytes,
    tensor_to_bytes,
)
from src.utils.exceptions import GradientCheckError, TensorError


class TestTensorConstruction:
    """Test tensor construction and validation"""

    def test_tensor_is_read_only(self):
        """Tensors are immutable once built"""
        t = as_tensor([[1.0, 2.0], [3.0, 4.0]])
        with pytest.raises(ValueError):
            t[0, 0] = 9.0

    def test_rejects_scalars_and_empty_extents(self):
        with pytest.raises(TensorError):
            as_tensor(1.0)
        with pytest.raises(TensorError):
            as_tensor(np.zeros((0, 3)))

    def test_rejects_non_finite_with_index(self):
        """The first bad coordinate is reported"""
        with pytest.raises(TensorError, match=r"\(1, 0\)"):
            as_tensor([[1.0, 2.0], [np.nan, 4.0]])

    def test_unchecked_allows_non_finite(self):
        t = as_tensor([np.inf], checked=False)
        assert np.isinf(t[0])


class TestChannelReductions:
    """Test per-channel statistics"""

    def test_rank2_channel_stats(self):
        x = np.array([[1.0, 10.0], [3.0, 14.0]])
        np.testing.assert_allclose(channel_mean(x), [2.0, 12.0])
        np.testing.assert_allclose(channel_var(x), [1.0, 4.0])

    def test_rank4_reduces_spatial_axes(self):
        """Mean over N, H and W for every channel"""
        x = np.zeros((2, 3, 2, 2))
        x[:, 1] = 5.0
        np.testing.assert_allclose(channel_mean(x), [0.0, 5.0, 0.0])

    def test_combine_group_stats_matches_pooled(self, np_rng):
        """Law of total variance reproduces the pooled statistics"""
        a = np_rng.normal(size=(5, 3))
        b = np_rng.normal(loc=2.0, size=(7, 3))
        mean, var = combine_group_stats(
            [5, 7], [a.mean(axis=0), b.mean(axis=0)], [a.var(axis=0), b.var(axis=0)]
        )
        pooled = np.vstack([a, b])
        np.testing.assert_allclose(mean, pooled.mean(axis=0), rtol=1e-12)
        np.testing.assert_allclose(var, pooled.var(axis=0), rtol=1e-12)

    def test_combine_group_stats_rejects_empty(self):
        with pytest.raises(TensorError):
            combine_group_stats([0], [np.zeros(2)], [np.zeros(2)])


class TestRngStream:
    """Test deterministic random streams"""

    def test_same_seed_same_draws(self):
        np.testing.assert_array_equal(RngStream(5).normal(size=4), RngStream(5).normal(size=4))

    def test_split_is_independent_of_parent_draws(self):
        """A child stream does not depend on how much the parent consumed"""
        fresh = RngStream(5)
        used = RngStream(5)
        used.normal(size=100)
        np.testing.assert_array_equal(
            fresh.split('model').normal(size=3), used.split('model').normal(size=3)
        )

    def test_split_labels_differ(self):
        root = RngStream(5)
        assert not np.array_equal(root.split('a').normal(size=3), root.split('b').normal(size=3))

    def test_rejects_negative_seed(self):
        with pytest.raises(ValueError):
            RngStream(-1)

    def test_split_streams_uniform_and_independent(self):
        """Chi-square at p = 0.01 on each child and on their joint draws"""
        root = RngStream(2024)
        a = root.split('a').integers(0, 5, size=5000)
        b = root.split('b').integers(0, 5, size=5000)
        for draws in (a, b):
            counts = np.bincount(draws, minlength=5)
            assert ((counts - 1000.0) ** 2 / 1000.0).sum() < 13.277  # df 4
        joint = np.zeros((5, 5))
        np.add.at(joint, (a, b), 1)
        expected = np.outer(joint.sum(axis=1), joint.sum(axis=0)) / joint.sum()
        assert ((joint - expected) ** 2 / expected).sum() < 32.000  # df 16


class TestFiniteDifference:
    """Test the central-difference oracle"""

    def test_sum_of_squares(self):
        grad = finite_diff_grad(lambda v: float((v ** 2).sum()), np.array([1.0, 2.0]))
        np.testing.assert_allclose(grad, [2.0, 4.0], atol=1e-6)

    def test_product(self):
        grad = finite_diff_grad(lambda v: float(v[0] * v[1]), np.array([3.0, 5.0]))
        np.testing.assert_allclose(grad, [5.0, 3.0], atol=1e-6)

    def test_does_not_mutate_input(self):
        x = np.array([1.0, 2.0])
        finite_diff_grad(lambda v: float(v.sum()), x)
        np.testing.assert_array_equal(x, [1.0, 2.0])

    def test_non_finite_value_names_coordinate(self):
        def f(v):
            return float(np.log(v[1]))

        with pytest.raises(GradientCheckError) as exc_info:
            finite_diff_grad(f, np.array([1.0, 0.0]))
        assert exc_info.value.coordinate == (1,)

    def test_rejects_non_positive_step(self):
        with pytest.raises(GradientCheckError):
            finite_diff_grad(lambda v: 0.0, np.zeros(2), h=0.0)

    def test_relative_error(self):
        assert relative_error(np.array([1.0, 0.0]), np.array([1.0, 0.0])) == 0.0
        assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
        assert relative_error(np.array([2.0]), np.array([1.0])) == pytest.approx(0.5)

    def test_relative_error_shape_mismatch(self):
        with pytest.raises(GradientCheckError):
            relative_error(np.zeros(2), np.zeros(3))


class TestTensorSerialization:
    """Test binary and CSV tensor files"""

    def test_header_layout(self):
        blob = tensor_to_bytes(np.zeros((2, 3), dtype=np.float32))
        assert blob[:4] == b"MXN1"
        assert int.from_bytes(blob[4:8], 'little') == 2
        assert len(blob) == 4 + 4 + 8 + 6 * 4

    def test_bad_magic(self):
        with pytest.raises(TensorError, match="bad magic"):
            tensor_from_bytes(b"XXXX" + b"\x00" * 8)

    def test_truncated_payload(self):
        blob = tensor_to_bytes(np.ones((2, 2), dtype=np.float32))
        with pytest.raises(TensorError, match="payload"):
            tensor_from_bytes(blob[:-1])

    @pytest.mark.parametrize('blob', [b"MXN1", b"MXN1\x02", b"MXN1\x02\x00\x00\x00\x03\x00"])
    def test_truncated_header(self, blob):
        with pytest.raises(TensorError, match="truncated header"):
            tensor_from_bytes(blob)

    def test_file_round_trip(self, tmp_path):
        x = np.arange(24, dtype=np.float32).reshape(2, 3, 2, 2)
        save_tensor(x, tmp_path / "x.mxn")
        np.testing.assert_array_equal(load_tensor(tmp_path / "x.mxn"), x)

    def test_csv_dump(self, tmp_path):
        x = np.array([[1.5, -2.0], [0.25, 4.0]], dtype=np.float32)
        save_tensor_csv(x, tmp_path / "x.csv")
        assert (tmp_path / "x.csv").read_text().splitlines()[0] == "v0,v1"
        np.testing.assert_array_equal(load_tensor_csv(tmp_path / "x.csv"), x)
