import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from sirgcn.gradcheck import check_gradients
from sirgcn.tensor import (ContractError, DimensionError, NonFiniteError, Tape, Tensor, add,
                           add_bias, backward, concat, cross_entropy, elementwise, gather_rows,
                           leaky_relu, linear, matmul, mean_all, mse_loss, mul, mul_scalar,
                           parameter, relu, reshape, scale_rows, slice_cols, sub, sum_all)

finite = st.floats(-2, 2, allow_nan=False, allow_infinity=False)


def fd_grad(fn, x, step=1e-5):
    """Central differences of a scalar function of an array, coordinate by coordinate."""
    out = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        orig = x[idx]
        x[idx] = orig + step
        up = fn(x)
        x[idx] = orig - step
        down = fn(x)
        x[idx] = orig
        out[idx] = (up - down) / (2 * step)
    return out


class TestTensorBasics:
    def test_rejects_nan_and_inf(self):
        with pytest.raises(NonFiniteError):
            Tensor([1.0, np.nan])
        with pytest.raises(NonFiniteError):
            Tensor([np.inf])

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_overflow_after_op_is_flagged(self):
        x = Tensor([1e200])
        with pytest.raises(NonFiniteError):
            mul(x, x)

    def test_data_is_float64_copy(self):
        src = np.array([[1, 2]], dtype=np.int32)
        t = Tensor(src)
        assert t.data.dtype == np.float64
        t.data[0, 0] = 9
        assert src[0, 0] == 1

    def test_item_needs_single_element(self):
        assert Tensor(3.5).item() == 3.5
        with pytest.raises(ContractError):
            Tensor([1.0, 2.0]).item()


class TestForward:
    def test_matmul_identity(self):
        out = matmul(Tensor(np.eye(2)), Tensor([[3.0], [4.0]]))
        np.testing.assert_array_equal(out.data, [[3.0], [4.0]])

    def test_matmul_hand_expansion(self):
        assert matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.item() == 11.0

    def test_matmul_shape_mismatch(self):
        with pytest.raises(DimensionError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_leaky_relu_definition(self):
        assert leaky_relu(Tensor(-1.0), 0.2).item() == pytest.approx(-0.2)
        assert elementwise("leaky_relu", Tensor(-1.0), slope=0.2).item() == pytest.approx(-0.2)

    def test_relu_boundary(self):
        assert relu(Tensor(0.0)).item() == 0.0

    def test_add(self):
        np.testing.assert_array_equal(add(Tensor([1.0, 2.0]), Tensor([3.0, 4.0])).data, [4, 6])

    def test_elementwise_dispatch(self):
        x, y = Tensor([1.0, -2.0]), Tensor([0.5, 0.5])
        np.testing.assert_array_equal(elementwise("relu", x).data, [1.0, 0.0])
        np.testing.assert_array_equal(elementwise("identity", x).data, x.data)
        np.testing.assert_array_equal(elementwise("sub", x, y).data, [0.5, -2.5])
        np.testing.assert_array_equal(elementwise("mul_scalar", x, scalar=3.0).data, [3.0, -6.0])
        with pytest.raises(ValueError):
            elementwise("tanh", x)

    def test_scalar_broadcast_only(self):
        np.testing.assert_array_equal(add(Tensor([1.0, 2.0]), Tensor(1.0)).data, [2.0, 3.0])
        np.testing.assert_array_equal(add(Tensor([1.0, 2.0]), 1.0).data, [2.0, 3.0])
        with pytest.raises(DimensionError):
            add(Tensor(np.ones((2, 2))), Tensor(np.ones(2)))

    def test_add_bias_checks_width(self):
        with pytest.raises(DimensionError):
            add_bias(Tensor(np.ones((2, 3))), Tensor(np.ones(2)))

    def test_slice_and_concat_round_trip(self, rng):
        x = Tensor(rng.normal(size=(3, 5)))
        parts = [slice_cols(x, 0, 2), slice_cols(x, 2, 5)]
        np.testing.assert_array_equal(concat(parts).data, x.data)

    def test_cross_entropy_matches_log_softmax(self, rng):
        logits = rng.normal(size=(4, 3))
        targets = np.array([0, 2, 1, 2])
        shifted = logits - logits.max(1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(1, keepdims=True))
        expected = -logp[np.arange(4), targets].mean()
        assert cross_entropy(Tensor(logits), targets).item() == pytest.approx(expected, rel=1e-12)

    def test_cross_entropy_uniform_logits(self):
        assert cross_entropy(Tensor(np.zeros((5, 10))), np.zeros(5, int)).item() == \
            pytest.approx(np.log(10))

    def test_mse(self):
        assert mse_loss(Tensor([[1.0], [3.0]]), [0.0, 1.0]).item() == pytest.approx(2.5)


class TestBackward:
    def test_square_sum(self):
        x = parameter([1.0, 2.0])
        backward(sum_all(mul(x, x)))
        np.testing.assert_array_equal(x.grad, [2.0, 4.0])

    def test_accumulates_across_uses(self):
        x = parameter([1.0, 2.0, 3.0])
        backward(sum_all(add(x, x)))
        np.testing.assert_array_equal(x.grad, [2.0, 2.0, 2.0])

    def test_accumulates_across_calls(self):
        x = parameter([1.0])
        backward(sum_all(x))
        backward(sum_all(x))
        np.testing.assert_array_equal(x.grad, [2.0])

    def test_non_scalar_loss(self):
        x = parameter([1.0, 2.0])
        with pytest.raises(ContractError):
            backward(mul_scalar(x, 2.0))

    def test_loss_without_parameters(self):
        with pytest.raises(ContractError):
            backward(sum_all(Tensor([1.0])))

    def test_matmul_grad_is_ones_times_bt(self, rng):
        a, b = parameter(rng.uniform(-2, 2, (3, 4))), Tensor(rng.uniform(-2, 2, (4, 2)))
        backward(sum_all(matmul(a, b)))
        np.testing.assert_allclose(a.grad, np.ones((3, 2)) @ b.data.T, rtol=1e-12)
        numeric = fd_grad(lambda v: (v @ b.data).sum(), a.data.copy())
        np.testing.assert_allclose(a.grad, numeric, rtol=1e-6)

    def test_tape_is_topological_and_unique(self, rng):
        x = parameter(rng.normal(size=(2, 2)))
        y = relu(matmul(x, x))
        loss = sum_all(add(y, y))
        tape = Tape.from_root(loss)
        ids = [id(t) for t in tape]
        assert len(ids) == len(set(ids))
        pos = {i: k for k, i in enumerate(ids)}
        for node in tape:
            for p in node._parents:
                if p.requires_grad:
                    assert pos[id(p)] < pos[id(node)]

    def test_backward_is_deterministic(self, rng):
        data = rng.normal(size=(5, 3))
        grads = []
        for _ in range(2):
            x = parameter(data)
            backward(mean_all(leaky_relu(matmul(x, Tensor(data.T)), 0.2)))
            grads.append(x.grad)
        np.testing.assert_array_equal(grads[0], grads[1])


UNARY = {
    "relu": relu,
    "leaky_relu": lambda t: leaky_relu(t, 0.2),
    "mul_scalar": lambda t: mul_scalar(t, -1.7),
    "reshape": lambda t: reshape(t, (t.shape[1], t.shape[0])),
    "slice_cols": lambda t: slice_cols(t, 1, 3),
    "gather_rows": lambda t: gather_rows(t, np.array([2, 0, 2, 1])),
    "scale_rows": lambda t: scale_rows(t, Tensor(np.array([0.5, -1.0, 2.0]))),
    "mean": mean_all,
}


class TestGradients:
    @pytest.mark.parametrize("name", sorted(UNARY))
    def test_unary_ops(self, name, rng):
        x = parameter(rng.uniform(-2, 2, size=(3, 4)))
        w = Tensor(rng.normal(size=UNARY[name](Tensor(x.data)).shape))
        res = check_gradients(lambda: sum_all(mul(UNARY[name](x), w)), [x], rng=rng)
        assert res.passed, res

    @pytest.mark.parametrize("op", [add, sub, mul])
    def test_binary_ops(self, op, rng):
        a, b = parameter(rng.uniform(-2, 2, (3, 3))), parameter(rng.uniform(-2, 2, (3, 3)))
        res = check_gradients(lambda: sum_all(mul(op(a, b), op(a, b))), [a, b], rng=rng)
        assert res.passed, res

    def test_linear_concat_scale_weights(self, rng):
        x = parameter(rng.uniform(-2, 2, (4, 3)))
        w = parameter(rng.uniform(-2, 2, (6, 2)))
        b = parameter(rng.uniform(-2, 2, 2))
        s = parameter(rng.uniform(-2, 2, 4))

        def loss():
            h = concat([x, relu(x)])
            return mean_all(mul(scale_rows(linear(h, w, b), s), scale_rows(linear(h, w, b), s)))

        res = check_gradients(loss, [x, w, b, s], rng=rng)
        assert res.passed, res

    def test_losses(self, rng):
        logits = parameter(rng.uniform(-2, 2, (5, 4)))
        targets = rng.integers(0, 4, 5)
        assert check_gradients(lambda: cross_entropy(logits, targets), [logits]).passed
        pred = parameter(rng.uniform(-2, 2, (5, 1)))
        assert check_gradients(lambda: mse_loss(pred, rng.normal(size=5) * 0 + 1.0), [pred]).passed


class TestProperties:
    @given(arrays(np.float64, (3, 2), elements=finite), arrays(np.float64, (3, 2), elements=finite))
    def test_add_commutes(self, a, b):
        np.testing.assert_array_equal(add(Tensor(a), Tensor(b)).data, add(Tensor(b), Tensor(a)).data)

    @given(arrays(np.float64, (4,), elements=finite))
    def test_relu_grad_is_indicator(self, a):
        x = parameter(a)
        backward(sum_all(relu(x)))
        np.testing.assert_array_equal(x.grad, (a > 0).astype(float))

    @given(arrays(np.float64, (2, 3), elements=finite), st.floats(0.01, 0.5))
    def test_leaky_relu_bounds(self, a, slope):
        out = leaky_relu(Tensor(a), slope).data
        assert np.all(out >= np.minimum(a, slope * a) - 1e-15)
        np.testing.assert_array_equal(out[a > 0], a[a > 0])

    @given(arrays(np.float64, (3, 3), elements=finite))
    def test_grad_shape_matches_data(self, a):
        x = parameter(a)
        backward(mean_all(matmul(x, x)))
        assert x.grad.shape == x.data.shape
