import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from omicgraph.errors import BackwardError, DimensionError, NumericalError
from omicgraph.numcore import (SparseMatrix, Tensor, backward, densify, finite_diff_check, ops)


# -- matmul / spmm -----------------------------------------------------------------

def test_matmul_identity():
    M = np.arange(6.0).reshape(3, 2)
    assert np.array_equal(ops.matmul(Tensor(np.eye(3)), Tensor(M)).data, M)


def test_matmul_hand_oracle():
    out = ops.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
    assert np.array_equal(out.data, [[3.0], [7.0]])


def test_matmul_shape_error():
    with pytest.raises(DimensionError):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


def test_matmul_backward_formulas(rng):
    A = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    B = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    G = rng.normal(size=(3, 2))
    backward(ops.sum(ops.mul(ops.matmul(A, B), Tensor(G))))
    np.testing.assert_allclose(A.grad, G @ B.data.T, atol=1e-14)
    np.testing.assert_allclose(B.grad, A.data.T @ G, atol=1e-14)


def test_spmm_identity_and_empty(rng):
    M = rng.normal(size=(5, 3))
    assert np.array_equal(ops.spmm(SparseMatrix.identity(5), Tensor(M)).data, M)
    empty = SparseMatrix(5, 5, np.zeros(6), [], [])
    assert np.array_equal(ops.spmm(empty, Tensor(M)).data, np.zeros((5, 3)))


def test_spmm_dense_oracle_6x6(rng):
    A = rng.normal(size=(6, 6)) * (rng.random((6, 6)) < 0.4)
    D = rng.normal(size=(6, 3))
    out = ops.spmm(SparseMatrix.from_dense(A), Tensor(D)).data
    np.testing.assert_allclose(out, A @ D, rtol=0, atol=1e-12)


def test_spmm_dimension_error():
    with pytest.raises(DimensionError):
        ops.spmm(SparseMatrix.identity(3), Tensor(np.ones((4, 2))))


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 64), k=st.integers(1, 5), density=st.floats(0.0, 0.5),
       seed=st.integers(0, 2**31 - 1))
def test_spmm_equals_densified_matmul(n, k, density, seed):
    r = np.random.default_rng(seed)
    m = r.integers(1, 64)
    A = sp.random(n, m, density=density, random_state=seed, format="csr")
    S = SparseMatrix(n, m, A.indptr, A.indices, A.data)
    D = r.normal(size=(m, k))
    np.testing.assert_allclose(ops.spmm(S, Tensor(D)).data, densify(S) @ D, rtol=0, atol=1e-12)


def test_spmm_value_gradient(rng):
    A = rng.normal(size=(5, 5)) * (rng.random((5, 5)) < 0.5)
    S = SparseMatrix.from_dense(A)
    D = rng.normal(size=(5, 2))

    def f(vals):
        return ops.sum(ops.tanh(ops.spmm(S, Tensor(D), values=vals)))

    assert finite_diff_check(f, S.values) < 1e-6


def test_sparse_matrix_invariants():
    with pytest.raises(DimensionError):
        SparseMatrix(2, 2, [0, 2, 2], [1, 0], [1.0, 1.0])  # unsorted columns
    with pytest.raises(DimensionError):
        SparseMatrix(2, 2, [0, 1, 2], [0, 2], [1.0, 1.0])  # column out of range
    with pytest.raises(NumericalError):
        SparseMatrix(1, 1, [0, 1], [0], [np.nan])


# -- elementwise suite -------------------------------------------------------------

def test_elementwise_examples():
    assert ops.relu(Tensor(-2.0)).item() == 0.0
    assert ops.relu(Tensor(3.0)).item() == 3.0
    np.testing.assert_allclose(ops.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)
    assert ops.sigmoid(Tensor(0.0)).item() == 0.5
    assert ops.leaky_relu(Tensor(-1.0), 0.1).item() == pytest.approx(-0.1)


@settings(max_examples=50, deadline=None)
@given(rows=st.integers(1, 8), cols=st.integers(1, 8), scale=st.floats(0.1, 50.0),
       seed=st.integers(0, 2**31 - 1))
def test_softmax_rows_sum_to_one(rows, cols, scale, seed):
    x = np.random.default_rng(seed).normal(scale=scale, size=(rows, cols))
    out = ops.softmax(Tensor(x), axis=1).data
    assert (out >= 0).all()
    np.testing.assert_allclose(out.sum(axis=1), 1.0, rtol=0, atol=1e-12)


def test_softmax_axis_error():
    with pytest.raises(DimensionError):
        ops.softmax(Tensor(np.ones((2, 2))), axis=2)


def test_dropout_contract(rng):
    x = Tensor(np.ones((50, 4)))
    assert ops.dropout(x, 0.5, training=False, rng=None) is x
    a = ops.dropout(x, 0.5, True, np.random.default_rng(0)).data
    b = ops.dropout(x, 0.5, True, np.random.default_rng(0)).data
    assert np.array_equal(a, b)
    assert set(np.unique(a)) <= {0.0, 2.0}
    with pytest.raises(ValueError):
        ops.dropout(x, 1.0, True, rng)
    with pytest.raises(ValueError):
        ops.dropout(x, 0.5, True, None)


def test_concat_and_mean_rows():
    a, b = Tensor(np.ones((2, 2))), Tensor(np.zeros((2, 1)))
    assert ops.concat([a, b], axis=1).shape == (2, 3)
    assert np.array_equal(ops.mean_rows(Tensor([[1.0, 2.0], [3.0, 4.0]])).data, [[2.0, 3.0]])
    with pytest.raises(DimensionError):
        ops.concat([a, b], axis=0)


def test_nonfinite_raises():
    with pytest.raises(NumericalError):
        ops.log(Tensor([0.0]))
    with pytest.raises(NumericalError):
        ops.exp(Tensor([1000.0]))


# -- backward ----------------------------------------------------------------------

def test_backward_sum():
    w = Tensor(np.zeros(3), requires_grad=True)
    backward(ops.sum(w))
    assert np.array_equal(w.grad, [1.0, 1.0, 1.0])


def test_backward_square():
    w = Tensor([1.0, 2.0], requires_grad=True)
    backward(ops.sum(ops.mul(w, w)))
    assert np.array_equal(w.grad, [2.0, 4.0])


def test_backward_reused_tensor_accumulates():
    x = Tensor([3.0], requires_grad=True)
    y = ops.mul(x, 2.0)
    backward(ops.sum(ops.add(ops.mul(y, y), y)))  # 4x^2 + 2x
    assert x.grad[0] == pytest.approx(8 * 3.0 + 2)


def test_backward_errors():
    w = Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(BackwardError):
        backward(ops.mul(w, 2.0))
    loss = ops.sum(w)
    backward(loss)
    with pytest.raises(BackwardError):
        backward(loss)
    with pytest.raises(BackwardError):
        backward(ops.sum(Tensor(np.ones(2))))


def test_finite_diff_check_examples(rng):
    assert finite_diff_check(ops.sum, rng.normal(size=5)) < 1e-10
    v = rng.normal(size=6)
    assert finite_diff_check(lambda x: ops.sigmoid(ops.sum(ops.mul(x, Tensor(v)))), rng.normal(size=6)) < 1e-4
    with pytest.raises(NumericalError):
        finite_diff_check(lambda x: ops.sum(ops.log(ops.sub(x, 10.0))), np.ones(3))
    with pytest.raises(DimensionError):
        finite_diff_check(lambda x: ops.mul(x, 2.0), np.ones(3))


OP_CASES = {
    "add": lambda x, c: ops.add(x, c),
    "sub": lambda x, c: ops.sub(c, x),
    "mul": lambda x, c: ops.mul(x, c),
    "div": lambda x, c: ops.div(x, ops.add(ops.mul(c, c), 1.0)),
    "div_den": lambda x, c: ops.div(c, ops.add(ops.mul(x, x), 1.0)),
    "matmul": lambda x, c: ops.matmul(x, ops.transpose(c)),
    "relu": lambda x, c: ops.relu(x),
    "leaky_relu": lambda x, c: ops.leaky_relu(x, 0.2),
    "sigmoid": lambda x, c: ops.sigmoid(x),
    "tanh": lambda x, c: ops.tanh(x),
    "exp": lambda x, c: ops.exp(ops.mul(x, 0.5)),
    "log": lambda x, c: ops.log(ops.add(ops.mul(x, x), 1.0)),
    "sqrt": lambda x, c: ops.sqrt(ops.add(ops.mul(x, x), 1.0)),
    "softmax0": lambda x, c: ops.softmax(x, axis=0),
    "softmax1": lambda x, c: ops.softmax(x, axis=1),
    "concat": lambda x, c: ops.concat([x, c], axis=1),
    "mean_rows": lambda x, c: ops.mean_rows(x),
    "sum_axis": lambda x, c: ops.sum(x, axis=0, keepdims=True),
    "mean": lambda x, c: ops.mean(x),
    "reshape": lambda x, c: ops.reshape(x, (-1,)),
    "gather": lambda x, c: ops.gather_rows(x, np.array([0, 0, x.shape[0] - 1])),
    "scatter": lambda x, c: ops.scatter_rows(x, np.arange(x.shape[0])[::-1], x.shape[0] + 2),
    "segment_mean": lambda x, c: ops.segment_mean(x, np.array([0, 1, x.shape[0]])),
    "segment_softmax": lambda x, c: ops.segment_softmax(x, np.array([0, 1, x.shape[0]])),
    "layer_norm": lambda x, c: ops.layer_norm(x, ops.add(ops.mul(c, 0.0), 1.5), c),
    "bce": lambda x, c: ops.bce_with_logits(ops.reshape(x, (-1,)), (c.data.reshape(-1) > 0)),
    "dropout": lambda x, c: ops.dropout(x, 0.3, True, np.random.default_rng(0)),
}


@pytest.mark.parametrize("name", sorted(OP_CASES))
@settings(max_examples=5, deadline=None)
@given(rows=st.integers(2, 5), cols=st.integers(2, 4), seed=st.integers(0, 2**31 - 1))
def test_op_gradients(name, rows, cols, seed):
    r = np.random.default_rng(seed)
    x0 = r.normal(size=(rows, cols))
    c = Tensor(r.normal(size=(rows, cols)))
    proj = Tensor(r.normal(size=OP_CASES[name](Tensor(x0), c).shape))
    if name == "relu" or name == "leaky_relu":
        x0 = np.where(np.abs(x0) < 1e-3, 0.1, x0)  # stay off the kink
    err = finite_diff_check(lambda x: ops.sum(ops.mul(OP_CASES[name](x, c), proj)), x0)
    assert err < 1e-4


def test_bce_examples(rng):
    assert ops.bce_with_logits(Tensor([0.0]), [1]).item() == pytest.approx(np.log(2), abs=1e-15)
    assert ops.bce_with_logits(Tensor([0.0]), [0]).item() == pytest.approx(np.log(2), abs=1e-15)
    assert ops.bce_with_logits(Tensor([20.0]), [1]).item() < 1e-8
    z = rng.normal(scale=3, size=40)
    y = rng.integers(0, 2, 40)
    idx = np.arange(0, 40, 3)
    p = 1 / (1 + np.exp(-z[idx]))
    oracle = np.mean(-(y[idx] * np.log(p) + (1 - y[idx]) * np.log(1 - p)))
    assert ops.bce_with_logits(Tensor(z), y, idx).item() == pytest.approx(oracle, abs=1e-12)
    with pytest.raises(ValueError):
        ops.bce_with_logits(Tensor(z), y, np.array([], dtype=int))
