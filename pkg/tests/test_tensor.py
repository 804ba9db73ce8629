"""Tensor core: forward semantics and tape gradients vs finite differences."""

import math

import numpy as np
import pytest

from sliceseg import tensor as T
from sliceseg.errors import ContractError, DomainError, ShapeError
from sliceseg.gradcheck import max_rel_error
from sliceseg.tensor import Tensor


def test_matmul_identity():
    eye = Tensor(np.eye(2))
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(T.matmul(eye, m).data, m.data)


def test_matmul_annihilator():
    z = Tensor(np.zeros((2, 3)))
    m = Tensor(np.arange(12.0).reshape(3, 4))
    assert np.array_equal(T.matmul(z, m).data, np.zeros((2, 4)))


def test_matmul_hand_product():
    # hand multiplication oracle
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[5.0, 6.0], [7.0, 8.0]])
    assert np.array_equal(T.matmul(a, b).data, [[19.0, 22.0], [43.0, 50.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


@pytest.mark.parametrize("seed", range(5))
def test_matmul_associativity(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (Tensor(rng.standard_normal((4, 4))) for _ in range(3))
    left = T.matmul(T.matmul(a, b), c).data
    right = T.matmul(a, T.matmul(b, c)).data
    assert np.abs(left - right).max() <= 1e-9


def test_softmax_symmetry():
    out = T.softmax(Tensor([0.0, 0.0, 0.0])).data
    assert np.allclose(out, [1 / 3] * 3, atol=1e-15)


def test_softmax_stability_under_large_inputs():
    out = T.softmax(Tensor([1000.0, 1000.0])).data
    assert np.allclose(out, [0.5, 0.5], atol=1e-15)


def test_softmax_derived_values():
    # independent direct evaluation of exp(x_i) / sum exp(x_k)
    x = [1.0, 2.0, 3.0]
    e = [math.exp(v) for v in x]
    expected = [v / sum(e) for v in e]
    out = T.softmax(Tensor(x)).data
    assert np.allclose(out, expected, atol=1e-12)
    assert np.allclose(out, [0.09003057, 0.24472847, 0.66524096], atol=1e-7)


def test_softmax_sums_to_one_and_shift_invariant():
    rng = np.random.default_rng(7)
    for _ in range(50):
        x = rng.standard_normal(6)
        out = T.softmax(Tensor(x)).data
        assert abs(out.sum() - 1.0) <= 1e-12
        shifted = T.softmax(Tensor(x + 123.456)).data
        assert np.abs(out - shifted).max() <= 1e-12


def test_softmax_empty_is_domain_error():
    with pytest.raises(DomainError):
        T.softmax(Tensor(np.zeros(0)))


def test_cosine_sim_scale_invariance():
    u = Tensor([1.0, -2.0, 3.0])
    assert T.cosine_sim(u, Tensor(2.0 * u.data)).item() == pytest.approx(1.0, abs=1e-12)


def test_cosine_sim_orthogonal():
    assert T.cosine_sim(Tensor([1.0, 0.0]), Tensor([0.0, 1.0])).item() == 0.0


def test_cosine_sim_hand_value():
    # dot/(norm*norm) = 4/5 by hand
    assert T.cosine_sim(Tensor([1.0, 2.0]), Tensor([2.0, 1.0])).item() == pytest.approx(0.8, abs=1e-12)


def test_cosine_sim_degenerate_zero_vector():
    u = Tensor(np.zeros(3), requires_grad=True)
    v = Tensor([1.0, 2.0, 3.0])
    out = T.cosine_sim(u, v)
    assert out.item() == 0.0
    out.backward()
    assert u.grad is None  # no gradient through the degenerate pair


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        T.mul(x, 2.0).backward()


def test_backward_linear_case():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    T.tensor_sum(x).backward()
    assert np.array_equal(x.grad, [1.0, 1.0, 1.0])


def test_backward_square():
    x = Tensor(3.0, requires_grad=True)
    T.mul(x, x).backward()
    assert x.grad == pytest.approx(6.0)


def test_backward_accumulates_across_calls():
    x = Tensor([1.0, 2.0], requires_grad=True)
    T.tensor_sum(x).backward()
    T.tensor_sum(x).backward()
    assert np.array_equal(x.grad, [2.0, 2.0])
    x.zero_grad()
    assert x.grad is None


def _composite(x: Tensor, c: Tensor) -> Tensor:
    """Exercises most of the op set in one scalar graph."""
    a = T.sigmoid(T.matmul(x, T.transpose(c)))
    b = T.layer_norm(T.tanh(T.add(a, 0.3)))
    d = T.softmax(T.mul(b, 1.7))
    e = T.concatenate([T.narrow(d, 1, 0, 2), T.exp(T.narrow(d, 1, 2, 2))], axis=1)
    return T.add(T.mean(T.mul(e, e)), T.tensor_sum(T.sqrt(T.add(T.mul(x, x), 1.0))))


@pytest.mark.parametrize("seed", range(10))
def test_composite_graph_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    c = Tensor(rng.standard_normal((4, 4)))
    loss = _composite(x, c)
    loss.backward()
    assert max_rel_error(lambda: _composite(x, c), x) <= 1e-3


@pytest.mark.parametrize(
    "name,build",
    [
        ("add", lambda x, c: T.tensor_sum(T.mul(T.add(x, c), c))),
        ("sub", lambda x, c: T.tensor_sum(T.mul(T.sub(c, x), c))),
        ("mul", lambda x, c: T.tensor_sum(T.mul(T.mul(x, c), c))),
        ("div", lambda x, c: T.tensor_sum(T.div(c, T.add(T.mul(x, x), 1.0)))),
        ("exp", lambda x, c: T.tensor_sum(T.exp(x))),
        ("sigmoid", lambda x, c: T.tensor_sum(T.mul(T.sigmoid(x), c))),
        ("tanh", lambda x, c: T.tensor_sum(T.mul(T.tanh(x), c))),
        ("mean", lambda x, c: T.mean(T.mul(x, c))),
        ("mean_axis", lambda x, c: T.tensor_sum(T.mean(T.mul(x, c), axis=0))),
        ("sum_axis", lambda x, c: T.tensor_sum(T.tensor_sum(T.mul(x, c), axis=1))),
        ("reshape", lambda x, c: T.tensor_sum(T.mul(T.reshape(x, (4, 3)), T.reshape(c, (4, 3))))),
        ("transpose", lambda x, c: T.tensor_sum(T.mul(T.transpose(x), T.transpose(c)))),
        ("layer_norm", lambda x, c: T.tensor_sum(T.mul(T.layer_norm(x), c))),
        ("softmax", lambda x, c: T.tensor_sum(T.mul(T.softmax(x), c))),
        ("clip", lambda x, c: T.tensor_sum(T.clip(T.mul(x, c), -0.5, 0.5))),
    ],
)
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_each_op_gradient(name, build, seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    c = Tensor(rng.standard_normal((3, 4)))
    build(x, c).backward()
    assert max_rel_error(lambda: build(x, c), x) <= 1e-3, name


def test_cosine_sim_gradients():
    rng = np.random.default_rng(3)
    u = Tensor(rng.standard_normal(5), requires_grad=True)
    v = Tensor(rng.standard_normal(5), requires_grad=True)
    T.cosine_sim(u, v).backward()
    assert max_rel_error(lambda: T.cosine_sim(u, v), u) <= 1e-3
    assert max_rel_error(lambda: T.cosine_sim(u, v), v) <= 1e-3


def test_forward_outputs_finite():
    rng = np.random.default_rng(11)
    x = Tensor(rng.standard_normal((4, 4)))
    out = _composite(x, Tensor(rng.standard_normal((4, 4))))
    assert np.isfinite(out.data).all()


def test_reshape_size_mismatch():
    with pytest.raises(ShapeError):
        T.reshape(Tensor(np.zeros((2, 3))), (4, 2))


def test_grad_shape_matches_data():
    x = Tensor(np.ones((2, 3)), requires_grad=True)
    T.tensor_sum(T.mul(x, x)).backward()
    assert x.grad.shape == x.data.shape
