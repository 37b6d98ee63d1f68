import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from duffin import autograd as ag
from duffin.autograd import Tensor


def T(x, grad=False):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


def img(rows, channels=1):
    """(1, H, W, C) tensor from a nested H x W list (channel 0) or H x W x C."""
    a = np.asarray(rows, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    return T(a[None])


def brute_conv2d(x, k, b, stride, pad):
    """Loop oracle for cross-correlation with zero padding."""
    B, H, W, C = x.shape
    kh, kw, _, co = k.shape
    xp = np.pad(x, ((0, 0), (pad[0], pad[0]), (pad[1], pad[1]), (0, 0)))
    Ho = (H + 2 * pad[0] - kh) // stride[0] + 1
    Wo = (W + 2 * pad[1] - kw) // stride[1] + 1
    out = np.zeros((B, Ho, Wo, co))
    for n in range(B):
        for i in range(Ho):
            for j in range(Wo):
                for o in range(co):
                    patch = xp[n, i * stride[0] : i * stride[0] + kh, j * stride[1] : j * stride[1] + kw, :]
                    out[n, i, j, o] = np.sum(patch * k[:, :, :, o]) + b[o]
    return out


# ---------------------------------------------------------------------------
# conv2d
# ---------------------------------------------------------------------------


class TestConv2d:
    def test_identity_kernel(self):
        x = img([[1, 2], [3, 4]])
        y = ag.conv2d(x, T(np.ones((1, 1, 1, 1))), T([0.0]))
        np.testing.assert_array_equal(y.data[0, :, :, 0], [[1, 2], [3, 4]])

    def test_weight_two_bias_one(self):
        x = img([[1, 2], [3, 4]])
        y = ag.conv2d(x, T(np.full((1, 1, 1, 1), 2.0)), T([1.0]))
        np.testing.assert_array_equal(y.data[0, :, :, 0], [[3, 5], [7, 9]])

    def test_padded_ones_count_overlap(self):
        # every output position of a padded 3x3 window over a 2x2 field of
        # ones covers all four ones
        x = img(np.ones((2, 2)))
        y = ag.conv2d(x, T(np.ones((3, 3, 1, 1))), T([0.0]), padding=(1, 1))
        ones = np.pad(np.ones((2, 2)), 1)
        oracle = [[ones[i : i + 3, j : j + 3].sum() for j in range(2)] for i in range(2)]
        np.testing.assert_array_equal(y.data[0, :, :, 0], oracle)
        np.testing.assert_array_equal(oracle, [[4, 4], [4, 4]])

    @pytest.mark.parametrize("stride,pad", [((1, 1), (0, 0)), ((2, 2), (1, 1)), ((1, 2), (2, 0)), ((3, 1), (1, 2))])
    def test_matches_loop_oracle(self, rng, stride, pad):
        H, W = 7, 6
        kh, kw = 3, 2
        while (H + 2 * pad[0] - kh) % stride[0]:
            H += 1
        while (W + 2 * pad[1] - kw) % stride[1]:
            W += 1
        x = rng.standard_normal((2, H, W, 3))
        k = rng.standard_normal((kh, kw, 3, 4))
        b = rng.standard_normal(4)
        y = ag.conv2d(T(x), T(k), T(b), stride=stride, padding=pad)
        np.testing.assert_allclose(y.data, brute_conv2d(x, k, b, stride, pad), rtol=1e-12, atol=1e-12)

    def test_stride_must_divide(self):
        with pytest.raises(ValueError, match="divide"):
            ag.conv2d(T(np.ones((1, 4, 4, 1))), T(np.ones((3, 3, 1, 1))), stride=(2, 2))

    def test_channel_mismatch(self):
        with pytest.raises(ValueError, match="input channels"):
            ag.conv2d(T(np.ones((1, 4, 4, 2))), T(np.ones((3, 3, 1, 1))))

    def test_kernel_larger_than_padded_input(self):
        with pytest.raises(ValueError, match="larger"):
            ag.conv2d(T(np.ones((1, 2, 2, 1))), T(np.ones((5, 5, 1, 1))))


# ---------------------------------------------------------------------------
# conv1d, dense
# ---------------------------------------------------------------------------


def vec(values):
    return T(np.asarray(values, dtype=np.float64).reshape(1, 1, 1, -1))


class TestConv1d:
    def test_identity(self):
        y = ag.conv1d(vec([1, 2, 3, 4]), T([1.0]))
        np.testing.assert_array_equal(y.data.ravel(), [1, 2, 3, 4])

    def test_zero_padding(self):
        y = ag.conv1d(vec([1, 0, 0]), T([1.0, 1.0, 1.0]))
        np.testing.assert_array_equal(y.data.ravel(), [1, 1, 0])

    def test_center_tap(self):
        y = ag.conv1d(vec([2.5, -7.0]), T([0.0, 1.0, 0.0]))
        np.testing.assert_array_equal(y.data.ravel(), [2.5, -7.0])

    def test_matches_numpy_correlate(self, rng):
        v = rng.standard_normal(9)
        k = rng.standard_normal(5)
        y = ag.conv1d(vec(v), T(k))
        np.testing.assert_allclose(y.data.ravel(), np.correlate(np.pad(v, 2), k, mode="valid"), rtol=1e-12)

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError, match="odd"):
            ag.conv1d(vec([1, 2, 3]), T([1.0, 1.0]))

    def test_padding_contract(self):
        with pytest.raises(ValueError, match="same-length"):
            ag.conv1d(vec([1, 2, 3]), T([1.0, 1.0, 1.0]), padding=2)


class TestDense:
    def test_identity(self, rng):
        x = rng.standard_normal((1, 3))
        np.testing.assert_array_equal(ag.dense(T(x), T(np.eye(3)), T(np.zeros(3))).data, x)

    def test_hand_arithmetic(self):
        y = ag.dense(T([[1.0, 1.0]]), T([[1, 2], [3, 4]]), T([0.0, 1.0]))
        np.testing.assert_array_equal(y.data, [[3, 8]])

    def test_bias_passthrough(self):
        y = ag.dense(T([[5.0, -2.0]]), T(np.zeros((3, 2))), T([1.0, 2.0, 3.0]))
        np.testing.assert_array_equal(y.data, [[1, 2, 3]])

    def test_mismatch(self):
        with pytest.raises(ValueError):
            ag.dense(T([[1.0, 1.0, 1.0]]), T(np.ones((2, 2))), T([0.0, 0.0]))


# ---------------------------------------------------------------------------
# batch norm
# ---------------------------------------------------------------------------


def bn_state(c):
    return ag.BatchNormState(T(np.zeros(c)), T(np.ones(c)), T(np.zeros(1)))


class TestBatchNorm:
    def test_constant_channel_is_zero(self):
        y = ag.batch_norm(T(np.full((2, 3, 3, 1), 4.2)), bn_state(1), zeta=1e-5)
        np.testing.assert_array_equal(y.data, 0.0)

    def test_two_values(self):
        x = np.array([0.0, 2.0]).reshape(2, 1, 1, 1)
        y = ag.batch_norm(T(x), bn_state(1), zeta=1e-5)
        np.testing.assert_allclose(y.data.ravel(), [-1 / np.sqrt(1 + 1e-5), 1 / np.sqrt(1 + 1e-5)], rtol=1e-12)
        np.testing.assert_allclose(y.data.ravel(), [-0.999995, 0.999995], atol=1e-9)

    def test_standardised_channel_scaled(self):
        x = np.array([-1.0, 1.0, -1.0, 1.0]).reshape(4, 1, 1, 1)  # mean 0, biased var 1
        y = ag.batch_norm(T(x), bn_state(1), zeta=1e-5)
        np.testing.assert_allclose(y.data, x / np.sqrt(1 + 1e-5), rtol=1e-12)

    def test_running_stats_momentum(self, rng):
        x = rng.standard_normal((5, 2, 2, 3)) * 2 + 1
        st_ = bn_state(3)
        ag.batch_norm(T(x), st_)
        mu = x.mean(axis=(0, 1, 2))
        var = x.var(axis=(0, 1, 2))
        np.testing.assert_allclose(st_.mean.data, 0.1 * mu, rtol=1e-12)
        np.testing.assert_allclose(st_.var.data, 0.9 + 0.1 * var, rtol=1e-12)
        assert st_.updates.data.item() == 1

    def test_infer_uses_running_stats(self, rng):
        st_ = ag.BatchNormState(T([1.0, -2.0]), T([4.0, 0.25]), T([3.0]))
        x = rng.standard_normal((3, 2, 2, 2))
        y = ag.batch_norm(T(x), st_, zeta=1e-5, training=False)
        np.testing.assert_allclose(y.data, (x - [1.0, -2.0]) / np.sqrt(np.array([4.0, 0.25]) + 1e-5), rtol=1e-12)

    def test_infer_before_training_is_error(self):
        with pytest.raises(RuntimeError, match="running statistics"):
            ag.batch_norm(T(np.ones((1, 2, 2, 1))), bn_state(1), training=False)

    def test_infer_is_batch_independent(self, rng):
        st_ = bn_state(2)
        ag.batch_norm(T(rng.standard_normal((4, 3, 3, 2))), st_)
        x = rng.standard_normal((4, 3, 3, 2))
        alone = ag.batch_norm(T(x[:1]), st_, training=False).data
        together = ag.batch_norm(T(x), st_, training=False).data[:1]
        np.testing.assert_array_equal(alone, together)


# ---------------------------------------------------------------------------
# activations, pooling, channel ops, loss
# ---------------------------------------------------------------------------


def test_activation_values():
    assert ag.activation("leaky_relu", T([-2.0]), alpha=0.3).data.item() == pytest.approx(-0.6)
    assert ag.activation("sigmoid", T([0.0])).data.item() == 0.5
    np.testing.assert_array_equal(ag.activation("relu", T([-3.0, 3.0])).data, [0.0, 3.0])


def test_leaky_relu_slope_range():
    with pytest.raises(ValueError):
        ag.leaky_relu(T([1.0]), alpha=1.5)


def test_global_pool_values():
    x = img([[1, 2], [3, 4]])
    assert ag.global_pool("avg", x).data.item() == 2.5
    assert ag.global_pool("max", x).data.item() == 4.0
    c = img(np.full((3, 3), -1.5))
    assert ag.global_pool("avg", c).data.item() == ag.global_pool("max", c).data.item() == -1.5
    assert ag.global_pool("avg", img(np.ones((4, 5, 3)))).shape == (1, 1, 1, 3)


class TestChannelOps:
    def test_scale_identity(self, rng):
        x = rng.standard_normal((1, 3, 3, 2))
        np.testing.assert_array_equal(ag.channel_scale(T(x), vec([1.0, 1.0])).data, x)

    def test_scale_annihilates(self, rng):
        y = ag.channel_scale(T(rng.standard_normal((1, 3, 3, 2))), vec([1.0, 0.0]))
        assert np.all(y.data[..., 1] == 0)

    def test_scale_values(self):
        y = ag.channel_scale(T(np.ones((1, 2, 2, 2))), vec([2.0, 3.0]))
        assert np.all(y.data[..., 0] == 2) and np.all(y.data[..., 1] == 3)

    def test_scale_mismatch(self):
        with pytest.raises(ValueError):
            ag.channel_scale(T(np.ones((1, 2, 2, 2))), vec([1.0, 1.0, 1.0]))

    def test_concat_shapes_and_layout(self, rng):
        a = rng.standard_normal((1, 32, 32, 2))
        b = rng.standard_normal((1, 32, 32, 2))
        y = ag.concat_channels(T(a), T(b))
        assert y.shape == (1, 32, 32, 4)
        np.testing.assert_array_equal(y.data[..., 2:], b)
        np.testing.assert_array_equal(y.data[..., :2], a)

    def test_concat_empty(self, rng):
        a = rng.standard_normal((1, 3, 3, 2))
        np.testing.assert_array_equal(ag.concat_channels(T(a), T(np.zeros((1, 3, 3, 0)))).data, a)

    def test_concat_spatial_mismatch(self):
        with pytest.raises(ValueError):
            ag.concat_channels(T(np.ones((1, 3, 3, 1))), T(np.ones((1, 3, 4, 1))))


class TestMse:
    def test_zero(self, rng):
        x = rng.standard_normal((2, 2, 2, 2))
        assert ag.mse_loss(T(x), x).data.item() == 0

    def test_ones_of_size_eight(self):
        assert ag.mse_loss(T(np.ones((1, 2, 2, 2))), np.zeros((1, 2, 2, 2))).data.item() == 8

    def test_mean_over_samples(self):
        pred = np.zeros((2, 1, 1, 2))
        target = np.array([1.0, 1.0, np.sqrt(2), np.sqrt(2)]).reshape(2, 1, 1, 2)
        assert ag.mse_loss(T(pred), target).data.item() == pytest.approx(3.0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ag.mse_loss(T(np.ones((1, 2))), np.ones((1, 3)))


# ---------------------------------------------------------------------------
# backward, Adam
# ---------------------------------------------------------------------------


class TestBackward:
    def test_sigmoid_at_zero(self):
        x = T([0.0], grad=True)
        ag.backward(ag.sum_all(ag.sigmoid(x)))
        assert x.grad.item() == pytest.approx(0.25)

    def test_mse_of_scaled_input(self):
        w = T([[2.0]], grad=True)
        ag.backward(ag.mse_loss(ag.dense(T([[1.0]]), w), np.zeros((1, 1))))
        assert w.grad.item() == pytest.approx(4.0)

    def test_non_scalar_root(self):
        with pytest.raises(ag.GraphError, match="scalar"):
            ag.backward(T([1.0, 2.0], grad=True) * 2.0)

    def test_cycle_detected(self):
        a = T([1.0], grad=True)
        b = a * 2.0
        c = b * 3.0
        b.parents = (c,)  # forge a cycle
        with pytest.raises(ag.GraphError, match="cycle"):
            ag.backward(ag.sum_all(c))

    def test_grads_accumulate_over_shared_use(self):
        x = T([3.0], grad=True)
        ag.backward(ag.sum_all(x * x + x))
        assert x.grad.item() == pytest.approx(7.0)

    def test_grad_shape_matches_value(self, rng):
        x = T(rng.standard_normal((2, 4, 4, 3)), grad=True)
        k = T(rng.standard_normal((3, 3, 3, 2)), grad=True)
        ag.backward(ag.sum_all(ag.conv2d(x, k, padding=(1, 1))))
        assert x.grad.shape == x.shape and k.grad.shape == k.shape


class TestAdam:
    def _store(self, *values):
        store = ag.ParameterStore()
        for i, v in enumerate(values):
            store.add(f"p{i}", np.array([v], dtype=np.float64))
        return store

    def test_first_step_closed_form(self):
        store = self._store(1.0)
        p = store["p0"]
        p.grad = np.array([1.0])
        p.has_grad = True
        ag.Adam(store).step(0.1)
        # bias-corrected moments are exactly g and g^2 on step 1
        assert p.data.item() == pytest.approx(1.0 - 0.1 * 1.0 / (1.0 + 1e-8), abs=1e-15)

    def test_zero_grad_no_move(self):
        store = self._store(0.7)
        store["p0"].grad = np.array([0.0])
        store["p0"].has_grad = True
        ag.Adam(store).step(0.1)
        assert store["p0"].data.item() == 0.7

    def test_symmetric_updates(self):
        store = self._store(0.3, 0.3)
        opt = ag.Adam(store)
        for _ in range(3):
            for p in store:
                p.grad = np.array([0.5])
                p.has_grad = True
            opt.step(0.01)
        assert store["p0"].data.item() == store["p1"].data.item()
        assert opt.t == 3

    def test_unpopulated_grads(self):
        with pytest.raises(RuntimeError, match="unpopulated"):
            ag.Adam(self._store(1.0)).step(0.1)

    def test_matches_reference_sequence(self):
        # independent scalar re-implementation
        store = self._store(0.0)
        opt = ag.Adam(store)
        grads = [0.3, -1.2, 0.05, 2.0]
        theta, m, v = 0.0, 0.0, 0.0
        for t, g in enumerate(grads, start=1):
            store["p0"].grad = np.array([g])
            store["p0"].has_grad = True
            opt.step(0.01)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            theta -= 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
            assert store["p0"].data.item() == pytest.approx(theta, rel=1e-12)


def test_parameter_store_unique_and_ordered():
    store = ag.ParameterStore()
    for name in ("b", "a", "c"):
        store.add(name, np.zeros(1))
    assert store.names() == ["b", "a", "c"]
    with pytest.raises(KeyError):
        store.add("a", np.zeros(1))


# ---------------------------------------------------------------------------
# finite-difference checks of each primitive (float64, tolerance 1e-4)
# ---------------------------------------------------------------------------


def _leaf(rng, shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _smooth_away_from_kinks(rng, shape, margin=0.05):
    v = rng.standard_normal(shape)
    return np.where(np.abs(v) < margin, v + np.sign(v + 1e-12) * 2 * margin, v)


PRIMITIVES = {}


def primitive(fn):
    PRIMITIVES[fn.__name__] = fn
    return fn


@primitive
def dense_4_to_3(rng):
    x, w, b = _leaf(rng, (2, 4)), _leaf(rng, (3, 4)), _leaf(rng, 3)
    t = rng.standard_normal((2, 3))
    return (lambda: ag.mse_loss(ag.dense(x, w, b), t)), [x, w, b]


@primitive
def conv2d_3x3_on_5x5(rng):
    x, k, b = _leaf(rng, (2, 5, 5, 2)), _leaf(rng, (3, 3, 2, 3)), _leaf(rng, 3)
    t = rng.standard_normal((2, 5, 5, 3))
    return (lambda: ag.mse_loss(ag.conv2d(x, k, b, padding=(1, 1)), t)), [x, k, b]


@primitive
def conv2d_strided(rng):
    x, k = _leaf(rng, (1, 6, 5, 2)), _leaf(rng, (2, 3, 2, 2))
    t = rng.standard_normal((1, 3, 2, 2))
    return (lambda: ag.mse_loss(ag.conv2d(x, k, None, stride=(2, 2), padding=(0, 0)), t)), [x, k]


@primitive
def conv1d_k3(rng):
    x, k, b = _leaf(rng, (2, 1, 1, 6)), _leaf(rng, 3), _leaf(rng, 1)
    t = rng.standard_normal((2, 1, 1, 6))
    return (lambda: ag.mse_loss(ag.conv1d(x, k, b), t)), [x, k, b]


@primitive
def batch_norm_train(rng):
    x = _leaf(rng, (3, 2, 2, 2))
    scale, shift = _leaf(rng, 2), _leaf(rng, 2)
    t = rng.standard_normal((3, 2, 2, 2))

    def f():
        return ag.mse_loss(ag.batch_norm(x, bn_state(2), 1e-5, True, scale, shift), t)

    return f, [x, scale, shift]


@primitive
def leaky_relu(rng):
    x = Tensor(_smooth_away_from_kinks(rng, (2, 7)), requires_grad=True)
    t = rng.standard_normal((2, 7))
    return (lambda: ag.mse_loss(ag.leaky_relu(x, 0.3), t)), [x]


@primitive
def relu(rng):
    x = Tensor(_smooth_away_from_kinks(rng, (2, 7)), requires_grad=True)
    t = rng.standard_normal((2, 7))
    return (lambda: ag.mse_loss(ag.relu(x), t)), [x]


@primitive
def sigmoid(rng):
    x = _leaf(rng, (2, 7))
    t = rng.standard_normal((2, 7))
    return (lambda: ag.mse_loss(ag.sigmoid(x), t)), [x]


@primitive
def global_avg_pool(rng):
    x = _leaf(rng, (2, 3, 4, 2))
    t = rng.standard_normal((2, 1, 1, 2))
    return (lambda: ag.mse_loss(ag.global_pool("avg", x), t)), [x]


@primitive
def global_max_pool(rng):
    x = _leaf(rng, (2, 3, 4, 2))  # continuous draws: no ties
    t = rng.standard_normal((2, 1, 1, 2))
    return (lambda: ag.mse_loss(ag.global_pool("max", x), t)), [x]


@primitive
def channel_scale(rng):
    x, w = _leaf(rng, (2, 3, 3, 2)), _leaf(rng, (2, 1, 1, 2))
    t = rng.standard_normal((2, 3, 3, 2))
    return (lambda: ag.mse_loss(ag.channel_scale(x, w), t)), [x, w]


@primitive
def concat_channels(rng):
    a, b = _leaf(rng, (1, 3, 3, 2)), _leaf(rng, (1, 3, 3, 1))
    t = rng.standard_normal((1, 3, 3, 3))
    return (lambda: ag.mse_loss(ag.concat_channels(a, b), t)), [a, b]


@primitive
def reshape_flatten(rng):
    x = _leaf(rng, (2, 2, 3, 2))
    w = _leaf(rng, (4, 12))
    t = rng.standard_normal((2, 4))
    return (lambda: ag.mse_loss(ag.dense(ag.flatten(x), w), t)), [x, w]


@primitive
def add_mul(rng):
    a, b = _leaf(rng, (3, 4)), _leaf(rng, (1, 4))
    t = rng.standard_normal((3, 4))
    return (lambda: ag.mse_loss(a * b + a - b, t)), [a, b]


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name):
    f, params = PRIMITIVES[name](np.random.default_rng(7))
    report = ag.grad_check(f, params, tolerance=1e-4)
    assert report.passed, report.per_param


def test_straight_through_passes_gradient_unchanged(rng):
    x = _leaf(rng, (2, 5))
    w = _leaf(rng, (3, 5))
    t = rng.standard_normal((2, 3))
    ag.backward(ag.mse_loss(ag.dense(ag.straight_through(x, np.round), w), t))
    g_ste = x.grad.copy()
    x.zero_grad()
    w.zero_grad()
    # identity gate with the same forward values downstream
    rounded = Tensor(np.round(x.data), requires_grad=True)
    ag.backward(ag.mse_loss(ag.dense(rounded, w), t))
    np.testing.assert_array_equal(g_ste, rounded.grad)


def test_grad_check_restores_dtype_and_values(rng):
    x = Tensor(rng.standard_normal(4).astype(np.float32), requires_grad=True)
    before = x.data.copy()
    ag.grad_check(lambda: ag.sum_all(x * x), [x])
    assert x.data.dtype == np.float32
    np.testing.assert_array_equal(x.data, before)


def test_grad_check_detects_wrong_gradient(rng):
    x = _leaf(rng, 3)

    def wrong(a):
        def backward(g):
            return (g * 3 * a.data,)  # true derivative of a^2 is 2a

        return ag._node(a.data**2, (a,), backward)

    report = ag.grad_check(lambda: ag.sum_all(wrong(x)), [x])
    assert not report.passed


# ---------------------------------------------------------------------------
# properties
# ---------------------------------------------------------------------------


conv_shapes = st.tuples(
    st.integers(1, 2),  # batch
    st.integers(1, 6),  # H
    st.integers(1, 6),  # W
    st.integers(1, 3),  # Cin
    st.integers(1, 3),  # Cout
    st.integers(1, 3),  # kh
    st.integers(1, 3),  # kw
    st.integers(0, 2),  # pad
)


@settings(max_examples=40, deadline=None)
@given(conv_shapes)
def test_conv2d_shape_algebra(shape):
    B, H, W, ci, co, kh, kw, pad = shape
    if kh > H + 2 * pad or kw > W + 2 * pad:
        return
    y = ag.conv2d(T(np.ones((B, H, W, ci))), T(np.ones((kh, kw, ci, co))), padding=(pad, pad))
    assert y.shape == (B, H + 2 * pad - kh + 1, W + 2 * pad - kw + 1, co)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-3, 3))
def test_linearity_of_linear_ops(seed, a, b):
    r = np.random.default_rng(seed)
    x, y = r.standard_normal((2, 4, 4, 2)), r.standard_normal((2, 4, 4, 2))
    k = T(r.standard_normal((3, 3, 2, 2)))
    k1 = T(r.standard_normal(3))
    w = T(r.standard_normal((5, 32)))
    cw = T(r.standard_normal((1, 1, 1, 2)))
    ops = [
        lambda v: ag.conv2d(T(v), k, padding=(1, 1)).data,
        lambda v: ag.conv1d(T(v.reshape(2, 1, 1, 32)), k1).data,
        lambda v: ag.dense(T(v.reshape(2, 32)), w).data,
        lambda v: ag.channel_scale(T(v), cw).data,
        lambda v: ag.concat_channels(T(v), T(2 * v)).data,
    ]
    for f in ops:
        np.testing.assert_allclose(f(a * x + b * y), a * f(x) + b * f(y), atol=1e-9)


def test_forward_backward_adam_bit_identical():
    def run():
        r = np.random.default_rng(3)
        store = ag.ParameterStore()
        k = store.add("k", r.standard_normal((3, 3, 2, 2)).astype(np.float32))
        x = Tensor(r.standard_normal((2, 5, 5, 2)).astype(np.float32))
        opt = ag.Adam(store)
        for _ in range(3):
            store.zero_grad()
            ag.backward(ag.mse_loss(ag.leaky_relu(ag.conv2d(x, k, padding=(1, 1))), np.zeros((2, 5, 5, 2))))
            opt.step(0.01)
        return k.data.tobytes()

    assert run() == run()


def test_values_stay_finite(rng):
    x = Tensor(rng.standard_normal((2, 4, 4, 2)).astype(np.float32) * 1e3, requires_grad=True)
    y = ag.sigmoid(ag.batch_norm(x, bn_state(2)))
    ag.backward(ag.sum_all(y))
    assert np.all(np.isfinite(y.data)) and np.all(np.isfinite(x.grad))
