import numpy as np
import pytest

import vern
from vern import Tape, Tensor, backward
from vern.errors import DataError, ParameterError, ShapeError

from helpers import fd_gradient, max_rel_err


def test_matmul_identity():
    out = vern.matmul(Tensor(np.eye(2)), Tensor([[1, 2], [3, 4]]))
    np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])


def test_matmul_row_times_column():
    out = vern.matmul(Tensor([[1, 2]]), Tensor([[3], [4]]))
    assert out.item() == 11.0


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
        vern.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))


def test_matmul_gradient_matches_frozen_value():
    # d sum(A@B) / dA for A = I2, B = [[2],[5]]; value frozen from the
    # finite-difference oracle below
    a = Tensor(np.eye(2))
    b = Tensor([[2.0], [5.0]])
    tape = Tape()
    tape.watch(a)
    loss = vern.sum_all(vern.matmul(a, b))
    grad = backward(tape, loss)[a].data
    np.testing.assert_allclose(grad, [[2, 5], [2, 5]], atol=1e-12)

    def f(arr):
        return float((arr @ b.data).sum())

    fd = fd_gradient(f, a.data.copy(), eps=1e-6)
    np.testing.assert_allclose(grad, fd, atol=1e-6)


def test_matmul_associative():
    rng = np.random.default_rng(5)
    for _ in range(20):
        dims = rng.integers(1, 9, size=4)
        a = rng.uniform(-1, 1, (dims[0], dims[1]))
        b = rng.uniform(-1, 1, (dims[1], dims[2]))
        c = rng.uniform(-1, 1, (dims[2], dims[3]))
        left = vern.matmul(vern.matmul(Tensor(a), Tensor(b)), Tensor(c)).data
        right = vern.matmul(Tensor(a), vern.matmul(Tensor(b), Tensor(c))).data
        np.testing.assert_allclose(left, right, atol=1e-9)


def test_relu_values():
    np.testing.assert_array_equal(vern.relu(Tensor([[-1, 2]])).data, [[0, 2]])
    np.testing.assert_array_equal(vern.relu(Tensor([[0, 0]])).data, [[0, 0]])


def test_relu_gradient_and_subgradient_at_zero():
    x = Tensor([[-3.0, 3.0]])
    tape = Tape()
    tape.watch(x)
    loss = vern.sum_all(vern.relu(x))
    np.testing.assert_array_equal(backward(tape, loss)[x].data, [[0, 1]])

    x = Tensor([[-1.0, 0.0, 1.0]])
    tape = Tape()
    tape.watch(x)
    loss = vern.sum_all(vern.relu(x))
    np.testing.assert_array_equal(backward(tape, loss)[x].data, [[0, 0, 1]])


def test_row_l2_normalize_values():
    np.testing.assert_allclose(vern.row_l2_normalize(Tensor([[3, 4]])).data,
                               [[0.6, 0.8]], atol=1e-15)
    np.testing.assert_array_equal(vern.row_l2_normalize(Tensor([[0, 0]])).data,
                                  [[0, 0]])
    out = vern.row_l2_normalize(Tensor([[1, 1], [0, 2]])).data
    np.testing.assert_allclose(out, [[0.70710678, 0.70710678], [0, 1]],
                               atol=1e-8)


def test_row_l2_normalize_idempotent():
    rng = np.random.default_rng(0)
    x = Tensor(rng.uniform(-2, 2, (6, 5)))
    once = vern.row_l2_normalize(x)
    twice = vern.row_l2_normalize(once)
    np.testing.assert_allclose(twice.data, once.data, atol=1e-12)


def test_row_l2_normalize_eps_validation():
    with pytest.raises(ParameterError):
        vern.row_l2_normalize(Tensor([[1.0]]), eps=0.0)


def test_dropout_eval_is_identity():
    x = Tensor([[1.0, -2.0, 3.0]])
    assert vern.dropout(x, 0.5, "eval") is x


def test_dropout_p_zero_is_identity():
    x = Tensor([[1.0, 1.0]])
    assert vern.dropout(x, 0.0, "train", np.random.default_rng(0)) is x


def test_dropout_seeded_mask_is_reproducible():
    x = Tensor([[1.0, 1.0, 1.0, 1.0]])
    a = vern.dropout(x, 0.5, "train", np.random.default_rng(42)).data
    b = vern.dropout(x, 0.5, "train", np.random.default_rng(42)).data
    np.testing.assert_array_equal(a, b)
    # survivors are rescaled by 1/(1-p)
    assert set(np.unique(a)) <= {0.0, 2.0}


def test_dropout_parameter_validation():
    x = Tensor([[1.0]])
    with pytest.raises(ParameterError):
        vern.dropout(x, 1.0, "train", np.random.default_rng(0))
    with pytest.raises(ParameterError):
        vern.dropout(x, -0.1, "train", np.random.default_rng(0))
    with pytest.raises(ParameterError):
        vern.dropout(x, 0.5, "test", np.random.default_rng(0))


def test_backward_sum_gives_ones():
    x = Tensor(np.arange(4.0).reshape(2, 2))
    tape = Tape()
    tape.watch(x)
    loss = vern.sum_all(x)
    np.testing.assert_array_equal(backward(tape, loss)[x].data, np.ones((2, 2)))


def test_backward_untouched_leaf_gets_zeros():
    x = Tensor([[1.0, 2.0]])
    unused = Tensor([[5.0]])
    tape = Tape()
    tape.watch(x)
    tape.watch(unused)
    loss = vern.sum_all(x)
    grads = backward(tape, loss)
    np.testing.assert_array_equal(grads[unused].data, [[0.0]])


def test_backward_loss_is_its_own_gradient_seed():
    x = Tensor([[7.0]])
    tape = Tape()
    tape.watch(x)
    grads = backward(tape, x)
    np.testing.assert_array_equal(grads[x].data, [[1.0]])


def test_backward_rejects_foreign_loss():
    x = Tensor([[1.0]])
    tape = Tape()
    tape.watch(x)
    other = Tensor([[2.0]])
    with pytest.raises(ValueError):
        backward(tape, other)


def test_backward_rejects_non_scalar_loss():
    x = Tensor([[1.0, 2.0]])
    tape = Tape()
    tape.watch(x)
    with pytest.raises(ShapeError):
        backward(tape, x)


def test_shared_leaf_gradient_accumulates():
    # y = x@x uses the same leaf twice: dy/dx = (x + x^T) scaled by upstream
    x = Tensor([[1.0, 2.0], [3.0, 4.0]])
    tape = Tape()
    tape.watch(x)
    loss = vern.sum_all(vern.matmul(x, x))
    grad = backward(tape, loss)[x].data

    def f(arr):
        return float((arr @ arr).sum())

    np.testing.assert_allclose(grad, fd_gradient(f, x.data.copy(), eps=1e-6),
                               atol=1e-8)


def test_non_finite_result_raises():
    with pytest.raises(DataError):
        Tensor([[np.nan]])
    with pytest.raises(DataError):
        Tensor([[np.inf, 1.0]])


def test_mixed_tape_operands_rejected():
    a = Tensor([[1.0]])
    b = Tensor([[2.0]])
    Tape().watch(a)
    Tape().watch(b)
    with pytest.raises(ValueError):
        vern.add(a, b)


@pytest.mark.parametrize("op_name", ["relu", "row_l2_normalize", "sigmoid",
                                     "mean_rows", "sum_all"])
def test_unary_op_gradients_match_finite_differences(op_name):
    rng = np.random.default_rng(hash(op_name) % 2**32)
    op = getattr(vern, op_name)
    for trial in range(5):
        x0 = rng.uniform(-2, 2, (4, 3))
        if op_name == "relu":
            while np.any(np.abs(x0) < 1e-3):  # keep clear of the kink
                x0 = rng.uniform(-2, 2, (4, 3))
        if op_name == "row_l2_normalize":
            while np.any(np.linalg.norm(x0, axis=1) < 1e-2):
                x0 = rng.uniform(-2, 2, (4, 3))
        x = Tensor(x0)
        tape = Tape()
        tape.watch(x)
        loss = vern.sum_all(op(x)) if op_name != "sum_all" else op(x)
        analytic = backward(tape, loss)[x].data

        def f(arr):
            t = op(Tensor(arr))
            return float(t.data.sum())

        assert max_rel_err(analytic, fd_gradient(f, x0.copy())) <= 1e-4


def test_binary_op_gradients_match_finite_differences():
    rng = np.random.default_rng(99)
    a0 = rng.uniform(-2, 2, (3, 4))
    b0 = rng.uniform(-2, 2, (4, 2))
    bias0 = rng.uniform(-2, 2, (1, 2))
    a, b, bias = Tensor(a0), Tensor(b0), Tensor(bias0)
    tape = Tape()
    tape.watch_all([a, b, bias])
    loss = vern.sum_all(vern.add(vern.matmul(a, b), bias))
    grads = backward(tape, loss)

    def f_a(arr):
        return float(((arr @ b0) + bias0).sum())

    def f_b(arr):
        return float(((a0 @ arr) + bias0).sum())

    def f_bias(arr):
        return float(((a0 @ b0) + arr).sum())

    assert max_rel_err(grads[a].data, fd_gradient(f_a, a0.copy())) <= 1e-4
    assert max_rel_err(grads[b].data, fd_gradient(f_b, b0.copy())) <= 1e-4
    assert max_rel_err(grads[bias].data, fd_gradient(f_bias, bias0.copy())) <= 1e-4


def test_concat_and_scale_gradients():
    rng = np.random.default_rng(7)
    a0 = rng.uniform(-2, 2, (3, 2))
    b0 = rng.uniform(-2, 2, (3, 3))
    a, b = Tensor(a0), Tensor(b0)
    tape = Tape()
    tape.watch_all([a, b])
    loss = vern.sum_all(vern.scale(vern.concat_cols(a, b), 1.5))
    grads = backward(tape, loss)
    np.testing.assert_allclose(grads[a].data, np.full((3, 2), 1.5), atol=1e-12)
    np.testing.assert_allclose(grads[b].data, np.full((3, 3), 1.5), atol=1e-12)


def test_dropout_gradient_uses_same_mask():
    rng = np.random.default_rng(3)
    x0 = rng.uniform(0.5, 2.0, (4, 4))
    x = Tensor(x0)
    tape = Tape()
    tape.watch(x)
    out = vern.dropout(x, 0.5, "train", np.random.default_rng(11))
    loss = vern.sum_all(out)
    analytic = backward(tape, loss)[x].data

    def f(arr):
        t = vern.dropout(Tensor(arr), 0.5, "train", np.random.default_rng(11))
        return float(t.data.sum())

    assert max_rel_err(analytic, fd_gradient(f, x0.copy())) <= 1e-4
