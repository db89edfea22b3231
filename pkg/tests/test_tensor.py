import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from damformer import tensor as T
from damformer.gradcheck import check, numerical_grad, rel_error
from damformer.tensor import ConfigError, ShapeError, Tensor

from conftest import param
from oracles import naive_conv


def naive_matmul(a, b):
    m, k = a.shape
    _, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for r in range(k):
                out[i, j] += a[i, r] * b[r, j]
    return out


def bilinear_direct(img, out_h, out_w):
    """Textbook align-corners-false bilinear interpolation, pixel by pixel."""
    h, w = img.shape
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        for j in range(out_w):
            sy = max((i + 0.5) * h / out_h - 0.5, 0.0)
            sx = max((j + 0.5) * w / out_w - 0.5, 0.0)
            y0, x0 = min(int(sy), h - 1), min(int(sx), w - 1)
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            ly, lx = sy - y0, sx - x0
            out[i, j] = (
                (1 - ly) * (1 - lx) * img[y0, x0]
                + (1 - ly) * lx * img[y0, x1]
                + ly * (1 - lx) * img[y1, x0]
                + ly * lx * img[y1, x1]
            )
    return out


# ---------------------------------------------------------------- matmul


def test_matmul_identity():
    b = np.array([[5.0, 6.0], [7.0, 8.0]])
    np.testing.assert_array_equal(T.matmul(Tensor(np.eye(2)), Tensor(b)).data, b)


def test_matmul_against_triple_loop(f64):
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.array([[5.0, 6.0], [7.0, 8.0]])
    expected = naive_matmul(a, b)
    np.testing.assert_array_equal(expected, [[19, 22], [43, 50]])
    np.testing.assert_array_equal(T.matmul(Tensor(a), Tensor(b)).data, expected)


def test_matmul_grad_rowsums(f64, rng):
    a = param(rng, 3, 4)
    b = Tensor(np.ones((4, 5)))
    T.backward(T.sum_(T.matmul(a, b)))
    np.testing.assert_array_equal(a.grad, np.full((3, 4), 5.0))


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_fd(f64, rng):
    a, b = param(rng, 3, 4), param(rng, 4, 2)
    r = Tensor(rng.standard_normal((3, 2)))
    assert check(lambda: T.sum_(T.mul(T.matmul(a, b), r)), [a, b]) < 1e-6


# ---------------------------------------------------------------- conv2d


def test_conv_1x1_identity(rng):
    x = Tensor(rng.standard_normal((1, 1, 5, 5)))
    y = T.conv2d(x, Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)))
    np.testing.assert_array_equal(y.data, x.data)


def test_conv_all_ones_on_constant():
    c = 0.7
    x = Tensor(np.full((1, 1, 6, 6), c))
    y = T.conv2d(x, Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros(1)), pad=1)
    np.testing.assert_allclose(y.data[0, 0, 1:-1, 1:-1], 9 * c, rtol=1e-6)


@pytest.mark.parametrize(
    "c,o,k,stride,pad,groups,size",
    [(3, 4, 3, 1, 1, 1, 6), (4, 4, 3, 1, 1, 4, 5), (2, 6, 3, 2, 1, 2, 7), (3, 2, 7, 4, 3, 1, 9), (4, 3, 1, 1, 0, 1, 4)],
)
def test_conv_matches_naive(f64, rng, c, o, k, stride, pad, groups, size):
    x = rng.standard_normal((2, c, size, size))
    w = rng.standard_normal((o, c // groups, k, k))
    b = rng.standard_normal(o)
    got = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, pad, groups, exact=False).data
    np.testing.assert_allclose(got, naive_conv(x, w, b, stride, pad, groups), atol=1e-12)


@pytest.mark.parametrize("groups,c,o", [(1, 3, 4), (4, 4, 4), (2, 4, 6)])
def test_conv_fd(f64, rng, groups, c, o):
    x = param(rng, 2, c, 5, 5)
    w = param(rng, o, c // groups, 3, 3)
    b = param(rng, o)
    r = Tensor(rng.standard_normal((2, o, 5, 5)))
    assert check(lambda: T.sum_(T.mul(T.conv2d(x, w, b, 1, 1, groups), r)), [x, w, b]) < 1e-6


def test_conv_strided_fd(f64, rng):
    x = param(rng, 1, 2, 9, 9)
    w = param(rng, 3, 2, 7, 7)
    r = Tensor(rng.standard_normal((1, 3, 3, 3)))
    assert check(lambda: T.sum_(T.mul(T.conv2d(x, w, None, 4, 3, exact=False), r)), [x, w]) < 1e-6


def test_conv_non_integral_output_rejected():
    with pytest.raises(ConfigError):
        T.conv2d(Tensor(np.ones((1, 1, 6, 6))), Tensor(np.ones((1, 1, 3, 3))), None, stride=2, pad=0)


# ---------------------------------------------------------------- softmax / layer norm


def test_softmax_uniform():
    out = T.softmax(Tensor(np.zeros((2, 7))), axis=1).data
    np.testing.assert_allclose(out, 1 / 7, rtol=1e-6)


def test_softmax_ln2():
    out = T.softmax(Tensor(np.array([0.0, math.log(2.0)])), axis=0).data
    np.testing.assert_allclose(out, [1 / 3, 2 / 3], rtol=1e-6)


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=1, max_dims=3, max_side=6),
                  elements=st.floats(-50, 50, width=32)))
def test_softmax_slices_sum_to_one(x):
    out = T.softmax(Tensor(x), axis=-1).data
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-6)


def test_softmax_fd(f64, rng):
    x = param(rng, 3, 5)
    r = Tensor(rng.standard_normal((3, 5)))
    assert check(lambda: T.sum_(T.mul(T.softmax(x, axis=1), r)), [x]) < 1e-5


def test_layer_norm_constant_is_zero():
    out = T.layer_norm(Tensor(np.full((2, 8), 3.0)), Tensor(np.ones(8)), Tensor(np.zeros(8)), 1e-6).data
    np.testing.assert_array_equal(out, 0.0)


def test_layer_norm_moments(rng):
    x = Tensor(rng.standard_normal((4, 5, 16)) * 3 + 1)
    out = T.layer_norm(x, Tensor(np.ones(16)), Tensor(np.zeros(16)), 1e-6).data.astype(np.float64)
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-6)
    np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-4)


def test_layer_norm_fd(f64, rng):
    x, g, b = param(rng, 3, 6), param(rng, 6), param(rng, 6)
    r = Tensor(rng.standard_normal((3, 6)))
    assert check(lambda: T.sum_(T.mul(T.layer_norm(x, g, b, 1e-5), r)), [x, g, b]) < 1e-6


# ---------------------------------------------------------------- upsample


def test_upsample_constant():
    out = T.bilinear_upsample(Tensor(np.full((1, 2, 3, 3), 0.25)), 7, 9).data
    np.testing.assert_allclose(out, 0.25, rtol=1e-6)


def test_upsample_identity(rng):
    x = Tensor(rng.standard_normal((1, 2, 4, 5)))
    np.testing.assert_array_equal(T.bilinear_upsample(x, 4, 5).data, x.data)


def test_upsample_2x2_direct_formula(f64):
    img = np.array([[0.0, 1.0], [2.0, 3.0]])
    expected = bilinear_direct(img, 4, 4)
    # frozen from the direct evaluation above
    np.testing.assert_allclose(
        expected,
        [[0, 0.25, 0.75, 1], [0.5, 0.75, 1.25, 1.5], [1.5, 1.75, 2.25, 2.5], [2, 2.25, 2.75, 3]],
    )
    got = T.bilinear_upsample(Tensor(img[None, None]), 4, 4).data[0, 0]
    np.testing.assert_allclose(got, expected, atol=1e-12)


def test_upsample_non_integer_factor_direct(f64, rng):
    img = rng.standard_normal((3, 5))
    got = T.bilinear_upsample(Tensor(img[None, None]), 7, 11).data[0, 0]
    np.testing.assert_allclose(got, bilinear_direct(img, 7, 11), atol=1e-12)


def test_upsample_matches_torch(f64, rng):
    torch = pytest.importorskip("torch")
    x = rng.standard_normal((2, 3, 4, 4))
    ref = torch.nn.functional.interpolate(torch.from_numpy(x), size=(16, 16), mode="bilinear", align_corners=False)
    np.testing.assert_allclose(T.bilinear_upsample(Tensor(x), 16, 16).data, ref.numpy(), atol=1e-12)


def test_upsample_rejects_zero_target():
    with pytest.raises(ConfigError):
        T.bilinear_upsample(Tensor(np.ones((1, 1, 2, 2))), 0, 4)


def test_upsample_fd(f64, rng):
    x = param(rng, 1, 2, 3, 3)
    r = Tensor(rng.standard_normal((1, 2, 12, 12)))
    assert check(lambda: T.sum_(T.mul(T.bilinear_upsample(x, 12, 12), r)), [x]) < 1e-6


# ---------------------------------------------------------------- backward


def test_backward_square(f64, rng):
    x = param(rng, 4, 3)
    T.backward(T.sum_(T.mul(x, x)))
    np.testing.assert_allclose(x.grad, 2 * x.data)


def test_backward_unused_leaf_gets_no_gradient(f64, rng):
    x, unused = param(rng, 3), param(rng, 3)
    T.backward(T.sum_(x))
    assert unused.grad is None or not unused.grad.any()


def test_backward_accumulates(f64, rng):
    x = param(rng, 3)
    loss = T.sum_(T.mul(x, 3.0))
    T.backward(loss)
    T.backward(loss)
    np.testing.assert_allclose(x.grad, 6.0)


def test_backward_requires_scalar(rng):
    with pytest.raises(ValueError):
        T.backward(param(rng, 3))


def test_shared_subexpression_gradient(f64, rng):
    x = param(rng, 5)
    y = T.exp(x)
    T.backward(T.sum_(T.mul(y, y)))
    np.testing.assert_allclose(x.grad, 2 * np.exp(2 * x.data))


ELEMENTWISE = {
    "exp": T.exp,
    "sigmoid": T.sigmoid,
    "softplus": T.softplus,
    "gelu": T.gelu,
    "relu": T.relu,
    "abs": T.abs_,
    "neg": T.neg,
}


@pytest.mark.parametrize("name", sorted(ELEMENTWISE))
def test_elementwise_fd(f64, rng, name):
    x = param(rng, 4, 5)
    x.data[np.abs(x.data) < 1e-2] += 0.1  # keep away from kinks
    r = Tensor(rng.standard_normal((4, 5)))
    assert check(lambda: T.sum_(T.mul(ELEMENTWISE[name](x), r)), [x]) < 1e-5


@pytest.mark.parametrize("name", sorted(ELEMENTWISE))
def test_elementwise_commutes_with_reshape(rng, name):
    x = rng.standard_normal((4, 6)).astype(np.float32)
    fn = ELEMENTWISE[name]
    a = fn(T.reshape(Tensor(x), (3, 8))).data
    b = T.reshape(fn(Tensor(x)), (3, 8)).data
    assert a.tobytes() == b.tobytes()


def test_structural_ops_fd(f64, rng):
    x, y = param(rng, 2, 3, 4), param(rng, 2, 2, 4)
    r = Tensor(rng.standard_normal((4, 2, 5)))

    def f():
        z = T.concat([x, y], axis=1)
        return T.sum_(T.mul(T.transpose(z, (2, 0, 1)), r))

    assert check(f, [x, y]) < 1e-6


def test_pool_and_gate_fd(f64, rng):
    x = param(rng, 2, 3, 4, 4)
    g = param(rng, 2, 3)
    assert check(lambda: T.sum_(T.add(T.global_max_pool(x), T.global_avg_pool(x))), [x]) < 1e-6
    r = Tensor(rng.standard_normal((2, 3, 4, 4)))
    assert check(lambda: T.sum_(T.mul(T.scale_channels(x, g), r)), [x, g]) < 1e-6


def test_log_softmax_and_take_fd(f64, rng):
    x = param(rng, 3, 4)
    idx = np.array([[0, 5], [11, 2]])
    assert check(lambda: T.sum_(T.take(T.log_softmax(x, axis=1), idx)), [x]) < 1e-6


def test_linear_and_bias_fd(f64, rng):
    x, w, b = param(rng, 2, 3, 4), param(rng, 4, 5), param(rng, 5)
    c = param(rng, 3)
    r = Tensor(rng.standard_normal((2, 3, 5)))
    assert check(lambda: T.sum_(T.mul(T.linear(x, w, b), r)), [x, w, b]) < 1e-6
    assert check(lambda: T.sum_(T.mul(T.add_bias(x, c, axis=1), T.exp(x))), [x, c]) < 1e-6


def test_no_implicit_broadcasting():
    with pytest.raises(ShapeError):
        T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((1, 3))))
    with pytest.raises(ShapeError):
        T.mul(Tensor(np.ones((2, 3))), Tensor(np.ones(3)))


def test_debug_flag_names_op():
    T.set_debug(True)
    try:
        with pytest.raises(T.NumericalError, match="log"), np.errstate(invalid="ignore"):
            T.log(Tensor(np.array([-1.0])))
    finally:
        T.set_debug(False)


def test_dtype_switch():
    with T.precision("f64"):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32


def test_numerical_grad_subset_matches_full(f64, rng):
    x = param(rng, 6)
    f = lambda: T.sum_(T.mul(T.exp(x), x))
    full = numerical_grad(f, x)
    sub = numerical_grad(f, x, index=[1, 4])
    np.testing.assert_allclose(sub, full[[1, 4]])
    assert rel_error(full, (1 + x.data) * np.exp(x.data)) < 1e-8
