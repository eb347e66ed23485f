import numpy as np
import pytest

from normkit.errors import InvalidArgument, InvalidShape, ShapeMismatch
from normkit.tensor import RngStream, map_binary, new_tensor, reduce, sample_gaussian


def seq_reduce_oracle(x, axes):
    """Sequential accumulation in ascending flat index order, pure Python."""
    axset = set(axes)
    out_shape = tuple(1 if a in axset else d for a, d in zip("TCWH", x.shape))
    out = np.zeros(out_shape)
    T, C, W, H = x.shape
    for t in range(T):
        for c in range(C):
            for w in range(W):
                for h in range(H):
                    key = (
                        0 if "T" in axset else t,
                        0 if "C" in axset else c,
                        0 if "W" in axset else w,
                        0 if "H" in axset else h,
                    )
                    out[key] += x[t, c, w, h]
    return out


class TestNewTensor:
    def test_fill_zeros(self):
        t = new_tensor((1, 1, 2, 2), 0.0)
        assert t.shape == (1, 1, 2, 2)
        assert np.all(t == 0.0)

    def test_fill_ones_sum(self):
        t = new_tensor((2, 3, 4, 4), 1.0)
        assert t.size == 96
        assert t.sum() == 96.0

    def test_zero_dim_rejected(self):
        with pytest.raises(InvalidShape):
            new_tensor((1, 0, 2, 2), 0.0)

    def test_negative_dim_rejected(self):
        with pytest.raises(InvalidShape):
            new_tensor((1, -3, 2, 2))

    def test_wrong_rank_rejected(self):
        with pytest.raises(InvalidShape):
            new_tensor((1, 2, 3), 0.0)


class TestMapBinary:
    def test_add_ones(self):
        a = new_tensor((1, 1, 2, 2), 1.0)
        assert np.all(map_binary(a, a, "add") == 2.0)

    def test_sub_self_is_zero(self):
        x = sample_gaussian(RngStream(3), (2, 2, 3, 3))
        assert np.all(map_binary(x, x, "sub") == 0.0)

    def test_shape_mismatch(self):
        a = new_tensor((1, 1, 2, 2), 1.0)
        b = new_tensor((1, 1, 2, 3), 1.0)
        with pytest.raises(ShapeMismatch):
            map_binary(a, b, "mul")

    def test_unknown_op(self):
        a = new_tensor((1, 1, 2, 2), 1.0)
        with pytest.raises(InvalidArgument):
            map_binary(a, a, "div")

    def test_add_commutes_bitwise(self):
        a = sample_gaussian(RngStream(10), (2, 3, 4, 5))
        b = sample_gaussian(RngStream(11), (2, 3, 4, 5))
        assert np.array_equal(map_binary(a, b, "add"), map_binary(b, a, "add"))


class TestReduce:
    def test_mean_wh_hand_value(self):
        x = np.arange(1.0, 5.0).reshape(1, 1, 2, 2)
        assert reduce(x, "WH", "mean").ravel()[0] == 2.5

    def test_sum_all_counts_elements(self):
        t = new_tensor((2, 3, 2, 2), 1.0)
        assert reduce(t, "TCWH", "sum").ravel()[0] == 24.0

    def test_mean_of_constants(self):
        t = new_tensor((3, 2, 2, 2), 7.0)
        out = reduce(t, "T", "mean")
        assert out.shape == (1, 2, 2, 2)
        assert np.all(out == 7.0)

    def test_empty_axes_rejected(self):
        with pytest.raises(InvalidArgument):
            reduce(new_tensor((1, 1, 2, 2), 1.0), "", "sum")

    @pytest.mark.parametrize("axes", ["T", "C", "W", "H", "WH", "TWH", "CW", "TCWH"])
    def test_matches_sequential_oracle_bitwise(self, axes):
        x = sample_gaussian(RngStream(99), (2, 3, 4, 5))
        assert np.array_equal(reduce(x, axes, "sum"), seq_reduce_oracle(x, axes))

    @pytest.mark.parametrize("axes", ["WH", "TWH", "TCWH", "C"])
    def test_mean_is_sum_over_count_exactly(self, axes):
        x = sample_gaussian(RngStream(5), (2, 3, 4, 4))
        count = np.prod([d for a, d in zip("TCWH", x.shape) if a in set(axes)])
        assert np.array_equal(reduce(x, axes, "mean"), reduce(x, axes, "sum") / count)

    def test_axes_accept_any_iterable_of_names(self):
        x = sample_gaussian(RngStream(6), (2, 2, 3, 3))
        assert np.array_equal(reduce(x, ["W", "H"], "sum"), reduce(x, "WH", "sum"))
        assert np.array_equal(reduce(x, ("H", "W"), "sum"), reduce(x, "WH", "sum"))


class TestSampleGaussian:
    def test_determinism_bitwise(self):
        a = sample_gaussian(RngStream(123), (2, 2, 5, 5))
        b = sample_gaussian(RngStream(123), (2, 2, 5, 5))
        assert np.array_equal(a, b)

    def test_seed42_statistics(self):
        t = sample_gaussian(RngStream(42), (1, 1, 64, 64))
        assert -0.1 < t.mean() < 0.1
        assert 0.85 < t.var() < 1.15

    def test_zero_dim_rejected(self):
        with pytest.raises(InvalidShape):
            sample_gaussian(RngStream(1), (1, 0, 2, 2))

    def test_streams_differ(self):
        root = RngStream(7)
        a = sample_gaussian(root.split(1), (1, 1, 4, 4))
        b = sample_gaussian(root.split(2), (1, 1, 4, 4))
        assert not np.array_equal(a, b)

    def test_split_is_deterministic(self):
        a = sample_gaussian(RngStream(7).split(3), (1, 1, 4, 4))
        b = sample_gaussian(RngStream(7, 3), (1, 1, 4, 4))
        assert np.array_equal(a, b)
