import numpy as np
import pytest

from hoirefine import autodiff as ad
from hoirefine.autodiff import Tensor

TOL = 1e-6


def test_square_derivative():
    x = Tensor(np.array(3.0), requires_grad=True)
    ad.backward(ad.mul(x, x))
    assert x.grad == pytest.approx(6.0)


def test_non_scalar_loss_rejected():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        ad.backward(ad.mul(x, 2.0))


def test_accumulators_reset():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    loss = ad.sum(ad.mul(x, x))
    ad.backward(loss)
    ad.backward(loss)
    np.testing.assert_allclose(x.grad, [2.0, 4.0])


def test_shared_subexpression_accumulates():
    x = Tensor(np.array([1.5]), requires_grad=True)
    y = ad.mul(x, 3.0)
    ad.backward(ad.sum(ad.add(y, ad.mul(y, y))))
    np.testing.assert_allclose(x.grad, [3.0 + 2 * 4.5 * 3.0])


def test_gradient_shape_matches_value(rng):
    w = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=(3,)), requires_grad=True)
    ad.backward(ad.sum(ad.relu(ad.add(ad.matmul(rng.normal(size=(5, 4)), w), b))))
    assert w.grad.shape == (4, 3) and b.grad.shape == (3,)


R = np.random.default_rng(7)
A34 = R.normal(size=(3, 4))
B45 = R.normal(size=(4, 5))
P = R.normal(size=(6, 3))
Q = R.normal(size=(5, 3))

PRIMITIVES = {
    "add": (lambda a, b: ad.add(a, b), [A34, R.normal(size=(4,))]),
    "sub": (lambda a, b: ad.sub(a, b), [A34, R.normal(size=(3, 1))]),
    "mul": (lambda a, b: ad.mul(a, b), [A34, R.normal(size=(3, 4))]),
    "matmul": (lambda a, b: ad.matmul(a, b), [A34, B45]),
    "transpose": (lambda a: ad.transpose(a), [A34]),
    "relu": (lambda a: ad.relu(a), [A34 + 0.05 * np.sign(A34)]),
    "softmax_rows": (lambda a: ad.softmax_rows(a), [A34 * 3]),
    "concat": (lambda a, b: ad.concat([a, b]), [A34, R.normal(size=(3, 2))]),
    "reshape": (lambda a: ad.reshape(a, (2, 6)), [A34]),
    "index": (lambda a: ad.index(a, np.array([2, 0, 2])), [A34]),
    "slice": (lambda a: ad.index(a, (slice(None), slice(1, 3))), [A34]),
    "gather": (lambda a: ad.gather(a, np.array([0, 2, 2]), np.array([1, 3, 3])), [A34]),
    "scatter_add": (lambda v: ad.scatter_add(v, np.array([0, 2, 0, 1]), 3), [R.normal(size=4)]),
    "sum": (lambda a: ad.sum(a, axis=0), [A34]),
    "mean": (lambda a: ad.mean(a, axis=1), [A34]),
    "sqrt": (lambda a: ad.sqrt(a), [np.abs(A34) + 0.5]),
    "sqnorm_rows": (lambda a: ad.sqnorm_rows(a), [A34]),
    "min": (lambda a: ad.min(a, axis=1), [A34]),
    "pairwise_sqdist": (lambda p, q: ad.pairwise_sqdist(p, q), [P, Q]),
    "spmm_sparse": (lambda w, x: ad.spmm(np.array([0, 1, 4, 2]), np.array([1, 0, 0, 2]), w, x, 3),
                    [R.uniform(0.1, 1, 4), R.normal(size=(5, 3))]),
    "spmm_dense": (lambda w, x: ad.spmm(np.array([0, 1, 0, 1]), np.array([0, 0, 1, 1]), w, x, 2),
                   [R.uniform(0.1, 1, 4), R.normal(size=(2, 3))]),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_matches_finite_differences(name):
    fn, inputs = PRIMITIVES[name]
    assert ad.check_primitive(fn, inputs, step=1e-5) < TOL


def test_softmax_random_inputs(rng):
    for _ in range(5):
        assert ad.check_primitive(ad.softmax_rows, [rng.normal(size=(4, 6)) * 4], rng=rng) < TOL


def test_min_tie_goes_to_lowest_index():
    x = Tensor(np.array([[2.0, 1.0, 1.0]]), requires_grad=True)
    ad.backward(ad.sum(ad.min(x, axis=1)))
    np.testing.assert_array_equal(x.grad, [[0.0, 1.0, 0.0]])


def test_spmm_matches_dense(rng):
    src, dst = rng.integers(0, 6, 15), rng.integers(0, 4, 15)
    w, x = rng.random(15), rng.normal(size=(6, 3))
    dense = np.zeros((4, 6))
    np.add.at(dense, (dst, src), w)
    np.testing.assert_allclose(ad.spmm(src, dst, w, x, 4).value, dense @ x, atol=1e-14)


def test_linearity_over_scene_losses(rng):
    w = rng.normal(size=(3, 2))
    xs = [rng.normal(size=(4, 3)) for _ in range(3)]

    def loss(x, t):
        return ad.sum(ad.sqnorm_rows(ad.relu(ad.matmul(x, t))))

    t = Tensor(w, requires_grad=True)
    total = loss(xs[0], t)
    for x in xs[1:]:
        total = ad.add(total, loss(x, t))
    ad.backward(total)
    joint = t.grad.copy()
    parts = []
    for x in xs:
        t = Tensor(w, requires_grad=True)
        ad.backward(loss(x, t))
        parts.append(t.grad)
    np.testing.assert_allclose(joint, sum(parts), rtol=1e-12)


def test_override_rule_restores():
    original = ad.RULES["relu"]
    with ad.override_rule("relu", ad.scaled_rule("relu", 2.0)):
        x = Tensor(np.array([1.0, -1.0]), requires_grad=True)
        ad.backward(ad.sum(ad.relu(x)))
        np.testing.assert_allclose(x.grad, [2.0, 0.0])
    assert ad.RULES["relu"] is original


def test_corrupted_rule_is_detected():
    fn, inputs = PRIMITIVES["matmul"]
    with ad.override_rule("matmul", ad.scaled_rule("matmul", 1.1)):
        assert ad.check_primitive(fn, inputs) > 0.05
