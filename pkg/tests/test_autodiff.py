import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from faerec import autodiff as ad
from faerec.autodiff import Tensor, no_grad
from faerec.errors import ContractError, DimensionError, DomainError

from conftest import grad_rel_error

TOL = 1e-4


def leaf(rng, *shape, scale=1.0):
    return Tensor(rng.normal(size=shape) * scale, requires_grad=True)


def test_matmul_example():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[5.0], [6.0]])
    np.testing.assert_array_equal(ad.matmul(a, b).data, [[17.0], [39.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_sigmoid_grad_at_zero():
    x = Tensor(0.0, requires_grad=True)
    ad.sigmoid(x).backward()
    assert x.grad == pytest.approx(0.25, abs=1e-15)


def test_square_grad():
    x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
    (x * x).sum().backward()
    np.testing.assert_array_equal(x.grad, [2.0, -4.0, 6.0])


def test_shared_path_accumulates():
    # y = x*x + 3x uses x along three paths
    x = Tensor(2.0, requires_grad=True)
    a = x * x
    y = a + 3.0 * x + a * 0.0
    y.backward()
    assert x.grad == pytest.approx(7.0)


def test_backward_non_scalar_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        (x * 2.0).backward()


def test_backward_without_tape_rejected():
    with pytest.raises(ContractError):
        Tensor(1.0).backward()


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        y = (x * 3.0).sum()
    assert not y.requires_grad
    with pytest.raises(ContractError):
        y.backward()


def test_domain_errors():
    with pytest.raises(DomainError):
        ad.log(Tensor([1.0, 0.0]))
    with pytest.raises(DomainError):
        ad.sqrt(Tensor([-1.0]))
    out = ad.sqrt(Tensor([0.0, 4.0]), floor=1e-12)
    assert np.all(np.isfinite(out.data))


def test_sqrt_floor_zero_grad_on_clamped():
    x = Tensor([0.0, 4.0], requires_grad=True)
    ad.sqrt(x, floor=1e-6).sum().backward()
    np.testing.assert_allclose(x.grad, [0.0, 0.25])


def test_softmax_fully_masked_row():
    with pytest.raises(ContractError):
        ad.softmax(Tensor(np.zeros((2, 2))), mask=np.array([[True, False], [False, False]]))


def test_take_out_of_range():
    with pytest.raises(IndexError):
        ad.take(Tensor(np.zeros((3, 2))), np.array([0, 3]))


def test_bad_axis():
    with pytest.raises(DimensionError):
        Tensor(np.zeros((2, 2))).sum(axis=2)


def test_inputs_not_mutated(rng):
    x = leaf(rng, 3, 4)
    w = leaf(rng, 4, 2)
    before_x, before_w = x.data.copy(), w.data.copy()
    ad.tanh(ad.matmul(x, w)).sum().backward()
    np.testing.assert_array_equal(x.data, before_x)
    np.testing.assert_array_equal(w.data, before_w)


def test_intermediate_nodes_keep_no_grad(rng):
    x = leaf(rng, 3)
    mid = x * 2.0
    mid.sum().backward()
    assert mid.grad is None
    assert x.grad is not None


CASES = {
    "add_broadcast": lambda a, b, c: (a + b[0]).sum(),
    "sub_div": lambda a, b, c: ((a - c) / (c * c + 1.0)).sum(),
    "mul_rsub": lambda a, b, c: ((1.0 - a) * c).sum(),
    "matmul": lambda a, b, c: (ad.matmul(a, b) * ad.matmul(a, b)).sum(),
    "batched_matmul": lambda a, b, c: ad.matmul(a.reshape(2, 3, 4), b.reshape(1, 4, 4)[:, :, :2]).square().sum(),
    "sigmoid": lambda a, b, c: ad.sigmoid(a).sum(),
    "log_sigmoid": lambda a, b, c: ad.log_sigmoid(a * 3.0).sum(),
    "exp_log": lambda a, b, c: ad.log(ad.exp(a) + 1.0).sum(),
    "sqrt": lambda a, b, c: ad.sqrt(a * a + 0.5).sum(),
    "tanh": lambda a, b, c: ad.tanh(a).sum(),
    "relu": lambda a, b, c: (ad.relu(a) * c).sum(),
    "softmax_masked": lambda a, b, c: (ad.softmax(a, axis=1, mask=np.tri(6, 4, dtype=bool)) * c).sum(),
    "logsumexp": lambda a, b, c: ad.logsumexp(a, axis=0).sum(),
    "concat": lambda a, b, c: (ad.concat([a, c], axis=1) * ad.concat([c, a], axis=1)).sum(),
    "take": lambda a, b, c: ad.take(a, np.array([[0, 2], [2, 5]])).square().sum(),
    "getitem": lambda a, b, c: (a[np.arange(4), np.arange(4)] * 2.0).sum() + a[1:3].square().sum(),
    "transpose_mean": lambda a, b, c: (a.T.mean(axis=1) * c[0]).sum(),
    "max": lambda a, b, c: a.max(axis=1).sum(),
    "sum_keepdims": lambda a, b, c: (a / a.square().sum(axis=0, keepdims=True).sqrt()).sum(),
}


@pytest.mark.parametrize("name", sorted(CASES))
def test_op_gradients(name, rng):
    a = leaf(rng, 6, 4)
    b = leaf(rng, 4, 4)
    c = leaf(rng, 6, 4)
    err = grad_rel_error(lambda: CASES[name](a, b, c), [a, b, c])
    assert err <= TOL, f"{name}: {err}"


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8))
def test_sigmoid_in_unit_interval(values):
    s = ad.sigmoid(Tensor(values)).data
    assert np.all((s >= 0) & (s <= 1))
    assert np.all(np.isfinite(ad.log_sigmoid(Tensor(values)).data))
