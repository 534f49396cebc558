import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bidrn import tensor
from bidrn.autograd import Parameter
from bidrn.errors import DimensionError


def quadruple_loop_conv(x, w, stride, padding):
    """Independent direct convolution: explicit loops, zero padding."""
    n, c, h, wd = x.shape
    c_out, c_in, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, c_out, oh, ow), dtype=np.float64)
    for b in range(n):
        for oc in range(c_out):
            for oy in range(oh):
                for ox in range(ow):
                    acc = 0.0
                    for ic in range(c_in):
                        for i in range(kh):
                            for j in range(kw):
                                acc += xp[b, ic, oy * stride + i, ox * stride + j] \
                                    * w[oc, ic, i, j]
                    out[b, oc, oy, ox] = acc
    return out


class TestConv2dReference:
    def test_constant_case(self):
        x = np.ones((1, 1, 2, 2), dtype=np.float32)
        w = np.ones((1, 1, 2, 2), dtype=np.float32)
        y = tensor.conv2d_reference(x, w)
        assert y.shape == (1, 1, 1, 1)
        assert y[0, 0, 0, 0] == 4.0

    def test_identity_kernel(self):
        x = np.random.default_rng(1).standard_normal((2, 3, 5, 5)).astype(np.float32)
        w = np.zeros((3, 3, 1, 1), dtype=np.float32)
        for i in range(3):
            w[i, i, 0, 0] = 1.0
        np.testing.assert_array_equal(tensor.conv2d_reference(x, w), x)

    def test_matches_quadruple_loop(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((1, 3, 8, 8)).astype(np.float32)
        w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
        y = tensor.conv2d_reference(x, w, stride=2, padding=1)
        oracle = quadruple_loop_conv(x.astype(np.float64), w.astype(np.float64), 2, 1)
        np.testing.assert_allclose(y, oracle, rtol=1e-5)

    @pytest.mark.parametrize("seed", range(20))
    def test_random_shapes_vs_oracle(self, seed):
        # 20 seeds x 10 cases = 200 randomized shape/seed combinations
        rng = np.random.default_rng(seed)
        for _ in range(10):
            c_in = int(rng.integers(1, 4))
            c_out = int(rng.integers(1, 4))
            k = int(rng.choice([1, 2, 3]))
            stride = int(rng.choice([1, 2]))
            padding = int(rng.choice([0, 1]))
            h = int(rng.integers(k, 7))
            w = int(rng.integers(k, 7))
            x = rng.standard_normal((1, c_in, h, w)).astype(np.float32)
            wt = rng.standard_normal((c_out, c_in, k, k)).astype(np.float32)
            got = tensor.conv2d_reference(x, wt, stride, padding)
            want = quadruple_loop_conv(x.astype(np.float64),
                                       wt.astype(np.float64), stride, padding)
            np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-6)

    def test_shape_mismatch_names_shapes(self):
        x = np.ones((1, 2, 4, 4), dtype=np.float32)
        w = np.ones((1, 3, 3, 3), dtype=np.float32)
        with pytest.raises(DimensionError, match=r"\(1, 3, 3, 3\).*\(1, 2, 4, 4\)"):
            tensor.conv2d_reference(x, w)


class TestAvgPool:
    def test_mean_of_four(self):
        x = np.array([[1, 2], [3, 4]], dtype=np.float32).reshape(1, 1, 2, 2)
        assert tensor.avg_pool2d(x, 2)[0, 0, 0, 0] == 2.5

    def test_constant_preserved(self):
        x = np.full((2, 3, 6, 6), 1.75, dtype=np.float32)
        y = tensor.avg_pool2d(x, 2)
        assert y.shape == (2, 3, 3, 3)
        np.testing.assert_array_equal(y, np.full((2, 3, 3, 3), 1.75, dtype=np.float32))

    def test_matches_enumeration(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((1, 2, 4, 4)).astype(np.float32)
        y = tensor.avg_pool2d(x, 2, 2)
        for c in range(2):
            for i in range(2):
                for j in range(2):
                    want = np.mean([x[0, c, 2 * i + a, 2 * j + b]
                                    for a in range(2) for b in range(2)])
                    assert abs(y[0, c, i, j] - want) < 1e-6

    def test_window_too_large(self):
        with pytest.raises(DimensionError):
            tensor.avg_pool2d(np.ones((1, 1, 2, 2), dtype=np.float32), 3)


class TestConcatSplit:
    def test_leading_block_is_a(self):
        rng = np.random.default_rng(4)
        a = rng.standard_normal((1, 4, 3, 3)).astype(np.float32)
        b = rng.standard_normal((1, 4, 3, 3)).astype(np.float32)
        y = tensor.concat_channels(a, b)
        assert y.shape[1] == 8
        np.testing.assert_array_equal(y[:, :4], a)

    def test_spatial_mismatch(self):
        a = np.ones((1, 2, 3, 3), dtype=np.float32)
        b = np.ones((1, 2, 4, 4), dtype=np.float32)
        with pytest.raises(DimensionError):
            tensor.concat_channels(a, b)

    def test_split_halving(self):
        x = np.arange(16, dtype=np.float32).reshape(1, 4, 2, 2)
        a, b = tensor.split_channels(x, 2)
        assert a.shape == (1, 2, 2, 2) and b.shape == (1, 2, 2, 2)
        a1, b1 = tensor.split_channels(np.ones((1, 2, 2, 2), dtype=np.float32), 1)
        assert a1.shape[1] == 1 and b1.shape[1] == 1

    def test_split_out_of_range(self):
        x = np.ones((1, 2, 2, 2), dtype=np.float32)
        with pytest.raises(DimensionError):
            tensor.split_channels(x, 2)
        with pytest.raises(DimensionError):
            tensor.split_channels(x, 0)

    @given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=40, deadline=None)
    def test_round_trip(self, ca, cb, seed):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((1, ca, 2, 2)).astype(np.float32)
        b = rng.standard_normal((1, cb, 2, 2)).astype(np.float32)
        x = tensor.concat_channels(a, b)
        ra, rb = tensor.split_channels(x, ca)
        np.testing.assert_array_equal(ra, a)
        np.testing.assert_array_equal(rb, b)
        np.testing.assert_array_equal(tensor.concat_channels(ra, rb), x)


class TestBatchNorm:
    def test_training_normalizes(self):
        rng = np.random.default_rng(5)
        x = (rng.standard_normal((4, 3, 8, 8)) * 3 + 1).astype(np.float32)
        p = tensor.BatchNormParams.create(3)
        y = tensor.batch_norm_forward(x, p, training=True)
        mean = y.mean(axis=(0, 2, 3))
        var = y.var(axis=(0, 2, 3))
        assert np.all(np.abs(mean) < 1e-5)
        assert np.all(np.abs(var - 1) < 1e-3)

    def test_inference_identity_statistics(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)
        p = tensor.BatchNormParams.create(3)
        y = tensor.batch_norm_forward(x, p, training=False)
        np.testing.assert_allclose(y, x, atol=1e-4)

    def test_matches_two_pass_reference(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((3, 2, 5, 5)).astype(np.float32)
        p = tensor.BatchNormParams.create(2)
        p.scale.data[:] = [1.5, 0.5]
        p.shift.data[:] = [-0.2, 0.3]
        y = tensor.batch_norm_forward(x, p, training=True)
        for c in range(2):
            vals = x[:, c].astype(np.float64)
            mu = vals.sum() / vals.size
            var = ((vals - mu) ** 2).sum() / vals.size
            want = p.scale.data[c] * (vals - mu) / np.sqrt(var + p.eps) + p.shift.data[c]
            np.testing.assert_allclose(y[:, c], want, atol=1e-5)

    def test_running_stats_update(self):
        rng = np.random.default_rng(8)
        x = (rng.standard_normal((4, 2, 4, 4)) + 2).astype(np.float32)
        p = tensor.BatchNormParams.create(2)
        tensor.batch_norm_forward(x, p, training=True)
        want_mean = 0.9 * 0 + 0.1 * x.mean(axis=(0, 2, 3))
        np.testing.assert_allclose(p.running_mean, want_mean, rtol=1e-5)

    def test_channel_mismatch(self):
        p = tensor.BatchNormParams.create(3)
        with pytest.raises(DimensionError):
            tensor.batch_norm_forward(np.ones((1, 2, 2, 2), dtype=np.float32), p)


class TestHardtanh:
    def test_branches(self):
        x = np.array([1.5, -0.3, -2.0], dtype=np.float32)
        np.testing.assert_array_equal(tensor.hardtanh_forward(x),
                                      np.array([1.0, -0.3, -1.0], dtype=np.float32))

    @given(st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_idempotent(self, seed):
        x = np.random.default_rng(seed).standard_normal(50).astype(np.float32) * 3
        once = tensor.hardtanh_forward(x)
        np.testing.assert_array_equal(tensor.hardtanh_forward(once), once)


class TestL1Loss:
    def test_zero_for_equal(self):
        x = np.arange(6, dtype=np.float32)
        assert tensor.l1_loss(x, x) == 0.0

    def test_hand_sum(self):
        assert tensor.l1_loss(np.array([1.0, 2.0]), np.array([0.0, 0.0])) == 1.5

    def test_matches_enumeration(self):
        rng = np.random.default_rng(9)
        a = rng.standard_normal(40).astype(np.float32)
        b = rng.standard_normal(40).astype(np.float32)
        want = sum(abs(float(x) - float(y)) for x, y in zip(a, b)) / 40
        assert abs(tensor.l1_loss(a, b) - want) < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            tensor.l1_loss(np.zeros(3), np.zeros(4))
