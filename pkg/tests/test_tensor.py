"""Kernel-level checks: pinned hand values plus randomized agreement with
the loop oracles in oracles.py."""
from __future__ import annotations

import numpy as np
import pytest

import oracles
from dyglnet import tensor as T
from dyglnet.errors import (
    ContractError,
    DegenerateStatisticsError,
    DimensionError,
    NumericError,
)
from dyglnet.tensor import ConvSpec, Tensor


def t64(a):
    return Tensor(np.asarray(a, dtype=np.float64), dtype="f64")


# ---------------------------------------------------------------------------
# Tensor container invariants


def test_tensor_accepts_rank_1_through_4():
    for shape in [(3,), (2, 3), (2, 3, 4), (1, 2, 3, 4)]:
        t = Tensor(np.zeros(shape), dtype="f32")
        assert t.shape == shape and t.rank == len(shape)


def test_tensor_scalar_promotes_rank_5_rejects():
    # A bare scalar is stored as shape (1,); rank 5 has no representation.
    assert Tensor(3.0, dtype="f64").shape == (1,)
    with pytest.raises(DimensionError):
        Tensor(np.zeros((1, 1, 1, 1, 1)), dtype="f32")
    with pytest.raises(DimensionError):
        Tensor(np.zeros((0, 2)), dtype="f32")


def test_tensor_rejects_non_finite():
    with pytest.raises(NumericError):
        Tensor(np.array([1.0, np.nan]), dtype="f64")
    with pytest.raises(NumericError):
        Tensor(np.array([np.inf, 0.0]), dtype="f32")


def test_tensor_dtype_and_item():
    t = Tensor(np.array([2.5]), dtype="f32")
    assert t.dtype == "f32" and t.data.dtype == np.float32
    assert t.item() == np.float32(2.5)
    with pytest.raises(ContractError):
        Tensor(np.array([1.0, 2.0]), dtype="f64").item()


# ---------------------------------------------------------------------------
# conv2d


def test_conv2d_ones_kernel_pinned():
    x = t64(np.ones((1, 1, 3, 3)))
    w = t64(np.ones((1, 1, 3, 3)))
    y = T.conv2d(x, w, None, ConvSpec(stride=1, padding=1)).data[0, 0]
    assert y[1, 1] == pytest.approx(9.0, abs=1e-12)
    for corner in (y[0, 0], y[0, 2], y[2, 0], y[2, 2]):
        assert corner == pytest.approx(4.0, abs=1e-12)


def test_conv2d_identity_kernel_grouped():
    rng = np.random.default_rng(0)
    x = t64(rng.normal(size=(1, 2, 4, 4)))
    w = t64(np.ones((2, 1, 1, 1)))
    y = T.conv2d(x, w, None, ConvSpec(groups=2))
    np.testing.assert_array_equal(y.data, x.data)


def test_conv2d_dilated_depthwise_vs_oracle():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 4, 8, 8))
    w = rng.normal(size=(4, 1, 3, 3))
    got = T.conv2d(t64(x), t64(w), None, ConvSpec(padding=2, dilation=2, groups=4))
    want = oracles.conv2d_naive(x, w, None, padding=2, dilation=2, groups=4)
    np.testing.assert_allclose(got.data, want, atol=1e-6)


def test_conv2d_200_random_cases_vs_oracle():
    rng = np.random.default_rng(7)
    for case in range(200):
        n = int(rng.integers(1, 3))
        cin = int(rng.integers(1, 5))
        k = int(rng.choice([1, 3]))
        dilation = int(rng.choice([1, 2, 3])) if k == 3 else 1
        groups = int(rng.choice([1, cin]))
        cout = int(rng.integers(1, 3)) * groups
        stride = int(rng.choice([1, 2]))
        pad = int(rng.integers(0, 3))
        eff = dilation * (k - 1) + 1
        low = max(1, eff - 2 * pad)
        h = int(rng.integers(low, low + 5))
        w = int(rng.integers(low, low + 5))
        x = rng.normal(size=(n, cin, h, w))
        wt = rng.normal(size=(cout, cin // groups, k, k))
        b = rng.normal(size=(cout,)) if rng.random() < 0.5 else None
        spec = ConvSpec(stride=stride, padding=pad, dilation=dilation, groups=groups)
        got = T.conv2d(t64(x), t64(wt), None if b is None else t64(b), spec)
        want = oracles.conv2d_naive(x, wt, b, stride, pad, dilation, groups)
        np.testing.assert_allclose(got.data, want, atol=1e-6, err_msg=f"case {case}")


def test_conv2d_group_divisibility_error():
    x = t64(np.zeros((1, 3, 4, 4)))
    w = t64(np.zeros((2, 1, 1, 1)))
    with pytest.raises(DimensionError):
        T.conv2d(x, w, None, ConvSpec(groups=2))


# ---------------------------------------------------------------------------
# matmul


def test_matmul_identity():
    a = t64([[1.0, 0.0], [0.0, 1.0]])
    b = t64([[5.0, 6.0], [7.0, 8.0]])
    np.testing.assert_array_equal(T.matmul(a, b).data, b.data)


def test_matmul_dot_product_pinned():
    a = t64([[1.0, 2.0]])
    b = t64([[3.0], [4.0]])
    np.testing.assert_array_equal(T.matmul(a, b).data, [[11.0]])


def test_matmul_random_vs_triple_loop():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(3, 5))
    b = rng.normal(size=(5, 2))
    got = T.matmul(t64(a), t64(b)).data
    np.testing.assert_allclose(got, oracles.matmul_naive(a, b), atol=1e-6)


def test_matmul_200_random_cases_vs_oracle():
    rng = np.random.default_rng(11)
    for case in range(200):
        m, k, n = (int(rng.integers(1, 7)) for _ in range(3))
        a = rng.normal(size=(m, k))
        b = rng.normal(size=(k, n))
        got = T.matmul(t64(a), t64(b)).data
        np.testing.assert_allclose(
            got, oracles.matmul_naive(a, b), atol=1e-6, err_msg=f"case {case}"
        )


def test_matmul_batched_and_errors():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(2, 3, 4))
    b = rng.normal(size=(2, 4, 5))
    got = T.matmul(t64(a), t64(b)).data
    for i in range(2):
        np.testing.assert_allclose(got[i], oracles.matmul_naive(a[i], b[i]), atol=1e-12)
    with pytest.raises(DimensionError):
        T.matmul(t64(np.zeros((2, 3))), t64(np.zeros((4, 2))))
    with pytest.raises(DimensionError):
        T.matmul(t64(np.zeros((3,))), t64(np.zeros((3, 2))))


# ---------------------------------------------------------------------------
# softmax


def test_softmax_symmetry():
    y = T.softmax(t64([[0.0, 0.0]]), axis=1).data
    np.testing.assert_allclose(y, [[0.5, 0.5]], atol=1e-12)


def test_softmax_large_logit_stable():
    y = T.softmax(t64([[1000.0, 0.0]]), axis=1).data
    assert np.all(np.isfinite(y))
    np.testing.assert_allclose(y, [[1.0, 0.0]], atol=1e-12)


def test_softmax_pinned_values():
    y = T.softmax(t64([[1.0, 2.0, 3.0]]), axis=1).data[0]
    np.testing.assert_allclose(y, [0.09003, 0.24473, 0.66524], atol=1e-5)


def test_softmax_rows_sum_to_one_up_to_1e3():
    rng = np.random.default_rng(9)
    x = rng.uniform(-1e3, 1e3, size=(4, 7))
    y = T.softmax(t64(x), axis=1).data
    assert np.all(y >= 0)
    np.testing.assert_allclose(y.sum(axis=1), np.ones(4), atol=1e-6)


def test_softmax_bad_axis():
    with pytest.raises(DimensionError):
        T.softmax(t64([[1.0, 2.0]]), axis=2)


# ---------------------------------------------------------------------------
# batchnorm2d


def _bn_params(c, dtype="f64"):
    one = Tensor(np.ones(c), dtype=dtype)
    zero = Tensor(np.zeros(c), dtype=dtype)
    return one, zero


def test_batchnorm_eval_affine_pinned():
    x = t64(np.ones((1, 1, 2, 2)))
    gamma = t64([2.0])
    beta = t64([3.0])
    rm = t64([0.0])
    rv = t64([1.0])
    y, _, _ = T.batchnorm2d(x, gamma, beta, rm, rv, training=False)
    np.testing.assert_allclose(y.data, 5.0, atol=1e-5)


def test_batchnorm_training_plus_minus_one():
    x = np.zeros((1, 1, 2, 2))
    x[0, 0] = [[-1.0, 1.0], [-1.0, 1.0]]
    gamma, beta = t64([1.0]), t64([0.0])
    rm, rv = t64([0.0]), t64([1.0])
    y, _, _ = T.batchnorm2d(t64(x), gamma, beta, rm, rv, training=True)
    np.testing.assert_allclose(y.data, x, atol=1e-3)


def test_batchnorm_training_statistics_recomputed():
    rng = np.random.default_rng(21)
    x = rng.normal(size=(2, 3, 4, 4))
    gamma, beta = _bn_params(3)
    rm = t64(np.zeros(3))
    rv = t64(np.ones(3))
    y, new_m, new_v = T.batchnorm2d(t64(x), gamma, beta, rm, rv, training=True)
    out_mean = y.data.mean(axis=(0, 2, 3))
    out_var = y.data.var(axis=(0, 2, 3))
    np.testing.assert_allclose(out_mean, 0.0, atol=1e-4)
    np.testing.assert_allclose(out_var, 1.0, atol=1e-4)
    m = 2 * 4 * 4
    want_m = 0.9 * 0.0 + 0.1 * x.mean(axis=(0, 2, 3))
    want_v = 0.9 * 1.0 + 0.1 * x.var(axis=(0, 2, 3)) * m / (m - 1)
    np.testing.assert_allclose(new_m.data, want_m, atol=1e-12)
    np.testing.assert_allclose(new_v.data, want_v, atol=1e-12)


def test_batchnorm_single_element_degenerate():
    x = t64(np.ones((1, 2, 1, 1)))
    gamma, beta = _bn_params(2)
    with pytest.raises(DegenerateStatisticsError):
        T.batchnorm2d(x, gamma, beta, t64(np.zeros(2)), t64(np.ones(2)), training=True)


# ---------------------------------------------------------------------------
# bilinear_sample


def test_bilinear_sample_center_pinned():
    x = t64(np.array([[[[0.0, 1.0], [2.0, 3.0]]]]))
    grid = t64(np.zeros((1, 1, 1, 2)))
    y = T.bilinear_sample(x, grid)
    assert y.shape == (1, 1, 1, 1)
    assert y.data.ravel()[0] == pytest.approx(1.5, abs=1e-12)


def test_bilinear_sample_corner_clamp():
    x = t64(np.array([[[[0.0, 1.0], [2.0, 3.0]]]]))
    grid = t64(np.full((1, 1, 1, 2), -1.0))
    assert T.bilinear_sample(x, grid).data.ravel()[0] == pytest.approx(0.0, abs=1e-12)


def test_bilinear_sample_50_points_vs_oracle():
    rng = np.random.default_rng(17)
    x = rng.normal(size=(1, 2, 5, 5))
    grid = rng.uniform(-1.2, 1.2, size=(1, 5, 10, 2))
    got = T.bilinear_sample(t64(x), t64(grid)).data
    want = oracles.bilinear_sample_naive(x, grid.reshape(1, 50, 2)).reshape(1, 2, 5, 10)
    np.testing.assert_allclose(got, want, atol=1e-6)


def test_bilinear_sample_200_random_cases_vs_oracle():
    rng = np.random.default_rng(19)
    for case in range(200):
        n = int(rng.integers(1, 3))
        c = int(rng.integers(1, 4))
        h, w = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        oh, ow = int(rng.integers(1, 4)), int(rng.integers(1, 5))
        x = rng.normal(size=(n, c, h, w))
        grid = rng.uniform(-1.3, 1.3, size=(n, oh, ow, 2))
        got = T.bilinear_sample(t64(x), t64(grid)).data
        want = oracles.bilinear_sample_naive(x, grid.reshape(n, oh * ow, 2))
        np.testing.assert_allclose(
            got.reshape(n, c, oh * ow), want, atol=1e-6, err_msg=f"case {case}"
        )


def test_bilinear_sample_identity_grid():
    rng = np.random.default_rng(23)
    x = rng.normal(size=(1, 3, 4, 6))
    ys, xs = np.meshgrid(np.arange(4), np.arange(6), indexing="ij")
    gx = (2.0 * xs + 1.0) / 6.0 - 1.0
    gy = (2.0 * ys + 1.0) / 4.0 - 1.0
    grid = np.stack([gx, gy], axis=-1)[None]
    y = T.bilinear_sample(t64(x), t64(grid))
    np.testing.assert_allclose(y.data, x, atol=1e-6)


def test_bilinear_sample_grid_shape_error():
    x = t64(np.zeros((1, 1, 2, 2)))
    with pytest.raises(DimensionError):
        T.bilinear_sample(x, t64(np.zeros((1, 1, 1, 3))))
    with pytest.raises(DimensionError):
        T.bilinear_sample(x, t64(np.zeros((1, 4, 2))))


# ---------------------------------------------------------------------------
# resize_bilinear


def test_resize_constant_stays_constant():
    x = Tensor(np.full((1, 1, 2, 2), 7.0), dtype="f32")
    y = T.resize_bilinear(x, 224, 224)
    assert y.shape == (1, 1, 224, 224)
    np.testing.assert_array_equal(y.data, np.full((1, 1, 224, 224), 7.0, np.float32))


def test_resize_2x_corners_pinned():
    x = t64(np.array([[[[0.0, 1.0], [2.0, 3.0]]]]))
    y = T.resize_bilinear(x, 4, 4).data[0, 0]
    assert y[0, 0] == pytest.approx(0.0, abs=1e-12)
    assert y[0, 3] == pytest.approx(1.0, abs=1e-12)
    assert y[3, 0] == pytest.approx(2.0, abs=1e-12)
    assert y[3, 3] == pytest.approx(3.0, abs=1e-12)
    want = oracles.resize_bilinear_naive(x.data, 4, 4)
    np.testing.assert_allclose(y, want[0, 0], atol=1e-12)


def test_resize_identity_bit_exact():
    rng = np.random.default_rng(29)
    x = Tensor(rng.normal(size=(2, 3, 5, 7)).astype(np.float32), dtype="f32")
    y = T.resize_bilinear(x, 5, 7)
    np.testing.assert_array_equal(y.data, x.data)


def test_resize_random_vs_oracle():
    rng = np.random.default_rng(31)
    for _ in range(20):
        h, w = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        oh, ow = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        x = rng.normal(size=(1, 2, h, w))
        got = T.resize_bilinear(t64(x), oh, ow).data
        np.testing.assert_allclose(
            got, oracles.resize_bilinear_naive(x, oh, ow), atol=1e-6
        )


# ---------------------------------------------------------------------------
# elementwise / concat / split / depth_to_space


def test_elementwise_pinned():
    assert T.sigmoid(t64([0.0])).data[0] == pytest.approx(0.5, abs=1e-12)
    assert T.tanh(t64([0.0])).data[0] == 0.0
    assert T.tanh(t64([50.0])).data[0] == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_array_equal(
        T.add(t64([1.0, 2.0]), t64([3.0, 4.0])).data, [4.0, 6.0]
    )
    np.testing.assert_array_equal(T.relu(t64([-2.0, 3.0])).data, [0.0, 3.0])
    np.testing.assert_array_equal(T.scale(t64([2.0, -1.0]), 3.0).data, [6.0, -3.0])


def test_elementwise_saturation_no_nan():
    x = t64([-1e3, 1e3])
    assert np.all(np.isfinite(T.tanh(x).data))
    assert np.all(np.isfinite(T.sigmoid(x).data))


def test_elementwise_per_channel_broadcast():
    rng = np.random.default_rng(37)
    x = rng.normal(size=(2, 3, 4, 4))
    v = rng.normal(size=(3,))
    got = T.mul(t64(x), t64(v)).data
    np.testing.assert_array_equal(got, x * v.reshape(1, 3, 1, 1))


def test_elementwise_shape_mismatch():
    with pytest.raises(DimensionError):
        T.add(t64([1.0, 2.0]), t64([1.0, 2.0, 3.0]))


def test_concat_shapes():
    a = t64(np.zeros((1, 2, 2, 2)))
    b = t64(np.ones((1, 3, 2, 2)))
    y = T.concat([a, b], axis=1)
    assert y.shape == (1, 5, 2, 2)


def test_split_concat_round_trip_bit_identical():
    rng = np.random.default_rng(41)
    x = Tensor(rng.normal(size=(1, 64, 3, 3)).astype(np.float32), dtype="f32")
    parts = T.split(x, 1, [32, 32])
    assert [p.shape[1] for p in parts] == [32, 32]
    back = T.concat(parts, axis=1)
    np.testing.assert_array_equal(back.data, x.data)


def test_split_48_channels_even_ratio():
    x = t64(np.zeros((1, 48, 2, 2)))
    parts = T.split(x, 1, [24, 24])
    assert [p.shape[1] for p in parts] == [24, 24]


def test_split_size_mismatch():
    x = t64(np.zeros((1, 4, 2, 2)))
    with pytest.raises(DimensionError):
        T.split(x, 1, [3, 2])


def test_depth_to_space_reference_layout():
    # Output pixel (s*i + a, s*j + b) of channel c reads input channel
    # c*s*s + a*s + b at (i, j).
    x = np.arange(1 * 4 * 2 * 2, dtype=np.float64).reshape(1, 4, 2, 2)
    y = T.depth_to_space(t64(x), 2).data
    assert y.shape == (1, 1, 4, 4)
    for i in range(2):
        for j in range(2):
            for a in range(2):
                for b in range(2):
                    assert y[0, 0, 2 * i + a, 2 * j + b] == x[0, a * 2 + b, i, j]


def test_depth_to_space_bad_channels():
    with pytest.raises(DimensionError):
        T.depth_to_space(t64(np.zeros((1, 3, 2, 2))), 2)


# ---------------------------------------------------------------------------
# determinism


def test_kernels_deterministic():
    rng = np.random.default_rng(43)
    x = rng.normal(size=(1, 4, 6, 6))
    w = rng.normal(size=(4, 1, 3, 3))
    spec = ConvSpec(padding=1, groups=4)
    a = T.conv2d(t64(x), t64(w), None, spec).data
    b = T.conv2d(t64(x), t64(w), None, spec).data
    np.testing.assert_array_equal(a, b)
    g = rng.uniform(-1, 1, size=(1, 3, 3, 2))
    s1 = T.bilinear_sample(t64(x), t64(g)).data
    s2 = T.bilinear_sample(t64(x), t64(g)).data
    np.testing.assert_array_equal(s1, s2)
