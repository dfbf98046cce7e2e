# tests/unit/test_numerics.py
import numpy as np
import pytest

from dmlm.core import numerics as nx
from dmlm.core.errors import NonDeterministicFunction, NonScalarLoss, ShapeMismatch
from dmlm.core.gradcheck import finite_difference_check
from dmlm.core.numerics import Tape, Tensor, backward, precision


def _leaf(values):
    return Tensor(values, requires_grad=True)


# --- forward values ---

def test_softmax_uniform_row():
    out = nx.softmax_lastdim(Tensor([[0.0, 0.0, 0.0]]))
    np.testing.assert_allclose(out.numpy(), [[1 / 3, 1 / 3, 1 / 3]], rtol=1e-6)


def test_softmax_is_shift_invariant_and_stable():
    out = nx.softmax_lastdim(Tensor([1000.0, 1001.0]))
    np.testing.assert_allclose(out.numpy(), [0.26894142, 0.73105858], rtol=1e-5)
    assert nx.all_finite(out)


def test_softmax_ignores_masked_entries():
    out = nx.softmax_lastdim(Tensor([[0.0, -np.inf, 0.0]]))
    np.testing.assert_allclose(out.numpy(), [[0.5, 0.0, 0.5]])


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        nx.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_add_does_not_broadcast():
    with pytest.raises(ShapeMismatch):
        nx.add(Tensor(np.ones((2, 3))), Tensor(np.ones(3)))


def test_add_scalar_and_broadcast_rows():
    rows = nx.broadcast_rows(Tensor([1.0, 2.0]), 3)
    assert rows.shape == (3, 2)
    np.testing.assert_allclose(nx.add(rows, 1.0).numpy()[2], [2.0, 3.0])


def test_concat_checks_off_axis_dims():
    with pytest.raises(ShapeMismatch):
        nx.concat([Tensor(np.ones((1, 2))), Tensor(np.ones((1, 3)))], axis=0)
    assert nx.concat([Tensor(np.ones((1, 2))), Tensor(np.ones((2, 2)))], axis=0).shape == (3, 2)


def test_layer_norm_zero_mean_unit_variance():
    out = nx.layer_norm(Tensor([[1.0, 2.0, 3.0, 4.0]])).numpy()
    assert abs(out.mean()) < 1e-6
    assert out.var() == pytest.approx(1.0, rel=1e-3)


def test_precision_scope_restores_dtype():
    with precision(np.float64):
        assert Tensor([1.0]).values.dtype == np.float64
    assert Tensor([1.0]).values.dtype == np.float32


# --- reverse mode ---

def test_backward_of_sum_of_squares():
    x = _leaf([1.0, 2.0, 3.0])
    with Tape() as tape:
        loss = nx.reduce_sum(nx.mul(x, x))
    tape.backward(loss)
    np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0])


def test_gradients_accumulate_over_reuse():
    x = _leaf([2.0])
    with Tape():
        y = nx.add(nx.scale(x, 3.0), nx.mul(x, x))
        backward(nx.reduce_sum(y))
    np.testing.assert_allclose(x.grad, [3.0 + 4.0])


def test_gradients_accumulate_across_calls():
    x = _leaf([1.0])
    for _ in range(2):
        with Tape() as tape:
            loss = nx.reduce_sum(nx.scale(x, 5.0))
        tape.backward(loss)
    np.testing.assert_allclose(x.grad, [10.0])
    x.zero_grad()
    np.testing.assert_allclose(x.grad, [0.0])


def test_backward_needs_a_scalar():
    x = _leaf([1.0, 2.0])
    with Tape() as tape:
        y = nx.scale(x, 2.0)
    with pytest.raises(NonScalarLoss):
        tape.backward(y)


def test_backward_without_tape():
    with pytest.raises(NonScalarLoss):
        backward(nx.reduce_sum(_leaf([1.0])))


def test_no_tape_records_nothing():
    x = _leaf([1.0])
    y = nx.scale(x, 2.0)
    assert y.requires_grad
    with Tape() as tape:
        nx.scale(Tensor([1.0]), 2.0)
    assert len(tape) == 0


def test_embedding_gather_scatters_repeated_rows():
    table = _leaf(np.arange(6.0).reshape(3, 2))
    with Tape() as tape:
        loss = nx.reduce_sum(nx.embedding_gather(table, [2, 0, 2]))
    tape.backward(loss)
    np.testing.assert_allclose(table.grad, [[1, 1], [0, 0], [2, 2]])


# --- finite differences ---

def test_fd_check_on_square():
    assert finite_difference_check(lambda x: nx.reduce_sum(nx.mul(x, x)), [3.0]) < 1e-6


def test_fd_check_rejects_non_scalar():
    with pytest.raises(NonScalarLoss):
        finite_difference_check(lambda x: nx.scale(x, 2.0), [1.0, 2.0])


def test_fd_check_rejects_non_deterministic():
    rng = np.random.default_rng(0)

    def noisy(x):
        return nx.add(nx.reduce_sum(x), float(rng.random()))

    with pytest.raises(NonDeterministicFunction):
        finite_difference_check(noisy, [1.0])


def _weights(shape, seed=0):
    return np.random.default_rng(seed).normal(size=shape)


W = _weights((3, 4), seed=1)

PRIMITIVE_CASES = {
    "matmul": (lambda x: nx.reduce_sum(nx.matmul(x, nx.constant(W))), (2, 3)),
    "mul": (lambda x: nx.reduce_sum(nx.mul(x, x)), (2, 3)),
    "concat": (lambda x: nx.reduce_sum(nx.mul(nx.concat([x, x], axis=1), nx.concat([x, x], axis=1))), (2, 3)),
    "getitem": (lambda x: nx.reduce_sum(nx.mul(x[1:, :2], x[1:, :2])), (3, 3)),
    "pick": (lambda x: nx.reduce_sum(nx.log(nx.pick(nx.softmax_lastdim(x), [0, 1, 1], [2, 0, 2]))), (2, 3)),
    "transpose": (lambda x: nx.reduce_sum(nx.matmul(nx.transpose(x), nx.constant(W[:2]))), (2, 3)),
    "broadcast_rows": (lambda x: nx.reduce_sum(nx.mul(nx.broadcast_rows(x, 3), nx.constant(W))), (4,)),
    "sigmoid": (lambda x: nx.reduce_sum(nx.sigmoid(x)), (2, 3)),
    "tanh": (lambda x: nx.reduce_sum(nx.mul(nx.tanh(x), nx.tanh(x))), (2, 3)),
    "relu": (lambda x: nx.reduce_sum(nx.mul(nx.relu(x), nx.relu(x))), (2, 3)),
    "softmax": (lambda x: nx.reduce_sum(nx.mul(nx.softmax_lastdim(x), nx.constant(W[:2, :3]))), (2, 3)),
    "normalize_rows": (lambda x: nx.reduce_sum(nx.mul(nx.normalize_rows(nx.mul(x, x)), nx.constant(W[:2, :3]))),
                       (2, 3)),
    "layer_norm": (lambda x: nx.reduce_sum(nx.mul(nx.layer_norm(x), nx.constant(W[:2]))), (2, 4)),
    "log": (lambda x: nx.reduce_sum(nx.log(nx.add(nx.mul(x, x), 1.0))), (2, 3)),
    "reduce_mean": (lambda x: nx.reduce_mean(nx.mul(x, x)), (2, 3)),
    "embedding_gather": (lambda x: nx.reduce_sum(nx.mul(nx.embedding_gather(x, [0, 2, 0]),
                                                        nx.constant(W[:3, :2]))), (3, 2)),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
def test_primitive_gradients_match_finite_differences(name):
    f, shape = PRIMITIVE_CASES[name]
    point = np.random.default_rng(sorted(PRIMITIVE_CASES).index(name)).uniform(0.2, 1.5, size=shape)
    assert finite_difference_check(f, point) < 1e-5, name
