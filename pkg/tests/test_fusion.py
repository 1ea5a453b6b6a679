import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from faerec.autodiff import Tensor
from faerec.errors import DimensionError
from faerec.fusion import fuse_infer, fuse_train, gate, init_gate
from faerec.params import ParameterStore

from conftest import grad_rel_error


def gate_params(d, seed=0):
    params = ParameterStore()
    init_gate(params, d, np.random.default_rng(seed))
    return params


def test_zero_params_give_half():
    params = {"gate.W1": Tensor(np.zeros((8, 8))), "gate.b1": Tensor(np.zeros(8)),
              "gate.W2": Tensor(np.zeros((4, 8))), "gate.b2": Tensor(np.zeros(4))}
    g = gate(params, Tensor(np.ones((3, 4))), Tensor(-np.ones((3, 4)))).data
    np.testing.assert_array_equal(g, 0.5)


def test_initial_gate_is_half(rng):
    g = gate(gate_params(4), Tensor(rng.normal(size=(5, 4))), Tensor(rng.normal(size=(5, 4)))).data
    np.testing.assert_array_equal(g, 0.5)


def test_saturated_dimension(rng):
    params = gate_params(4)
    params["gate.b2"].data[2] = 50.0
    g = gate(params, Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(3, 4)))).data
    assert np.all(np.abs(g[:, 2] - 1.0) <= 1e-9)


def test_shape_mismatch():
    with pytest.raises(DimensionError):
        gate(gate_params(4), Tensor(np.ones((2, 4))), Tensor(np.ones((2, 3))))
    with pytest.raises(DimensionError):
        fuse_infer(Tensor(np.ones(2)), Tensor(np.ones(3)))


def test_fuse_examples():
    e_id, e_llm = Tensor([2.0, 0.0]), Tensor([0.0, 2.0])
    np.testing.assert_array_equal(fuse_train(Tensor([1.0, 1.0]), e_id, e_llm).data, e_id.data)
    np.testing.assert_array_equal(fuse_train(Tensor([0.0, 0.0]), e_id, e_llm).data, e_llm.data)
    np.testing.assert_array_equal(fuse_train(Tensor([0.5, 0.5]), e_id, e_llm).data, [1.0, 1.0])
    np.testing.assert_array_equal(fuse_infer(Tensor([1.0, 1.0]), Tensor([3.0, -1.0])).data, [2.0, 0.0])
    same = Tensor([0.3, -7.0])
    np.testing.assert_array_equal(fuse_infer(same, same).data, same.data)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_fused_value_lies_between_views(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(4, 6)), rng.normal(size=(4, 6))
    g = rng.uniform(size=(4, 6))
    f = fuse_train(Tensor(g), Tensor(a), Tensor(b)).data
    assert np.all(f >= np.minimum(a, b) - 1e-12) and np.all(f <= np.maximum(a, b) + 1e-12)
    half = fuse_train(Tensor(np.full((4, 6), 0.5)), Tensor(a), Tensor(b)).data
    assert np.max(np.abs(half - fuse_infer(Tensor(a), Tensor(b)).data)) <= 1e-15


def test_gate_gradient(rng):
    params = gate_params(8)
    params["gate.W2"].data = rng.normal(0, 0.3, size=(8, 16))
    params["gate.b1"].data = rng.normal(0, 0.1, size=16)
    e_id = Tensor(rng.normal(size=(6, 8)), requires_grad=True)
    e_llm = Tensor(rng.normal(size=(6, 8)), requires_grad=True)

    def loss():
        g = gate(params, e_id, e_llm)
        return fuse_train(g, e_id, e_llm).square().sum()

    err = grad_rel_error(loss, [t for _, t in params.items()] + [e_id, e_llm])
    assert err <= 1e-4
