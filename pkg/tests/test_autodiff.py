import numpy as np
import pytest

from amod.bench import check_param_grads, relative_error
from amod.policy import GradientError, Tensor, parameter


def _fd(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for ix in np.ndindex(x.shape):
        old = x[ix]
        x[ix] = old + eps
        up = f(x)
        x[ix] = old - eps
        dn = f(x)
        x[ix] = old
        g[ix] = (up - dn) / (2 * eps)
    return g


def test_quadratic_gradient():
    w = parameter([1.0, -2.0, 3.0])
    (w * w).sum().backward()
    assert w.grad.tolist() == [2.0, -4.0, 6.0]


def test_double_backward_requires_reset():
    w = parameter([1.0, 2.0])
    w.square().sum().backward()
    with pytest.raises(GradientError):
        w.square().sum().backward()
    w.zero_grad()
    w.square().sum().backward()
    assert w.grad.tolist() == [2.0, 4.0]


def test_backward_needs_scalar():
    with pytest.raises(ValueError):
        parameter([1.0, 2.0]).square().backward()


def test_linear_critic_bias_gradient():
    # zero weights: prediction is the bias b, loss (b - y)^2, d/db = 2 (b - y)
    w, b = parameter(np.zeros((3, 1))), parameter([0.5])
    x = np.ones((4, 3))
    ((x @ w).sum() + b.sum() - 2.0).square().backward()
    assert b.grad[0] == pytest.approx(2 * (0.5 - 2.0))
    np.testing.assert_allclose(w.grad.ravel(), 2 * (0.5 - 2.0) * 4 * np.ones(3))


def test_ndarray_on_the_left():
    w = parameter([1.0, 2.0])
    out = np.array([3.0, 3.0]) - w
    assert isinstance(out, Tensor)
    out.sum().backward()
    assert w.grad.tolist() == [-1.0, -1.0]


@pytest.mark.parametrize("name,fn", [
    ("softplus", lambda t: t.softplus().sum()),
    ("gammaln", lambda t: (t.exp() + 0.1).gammaln().sum()),
    ("digamma", lambda t: (t.exp() + 0.1).digamma().sum()),
    ("div", lambda t: (t / (t.square() + 1.0)).sum()),
    ("index", lambda t: t[np.array([0, 2, 2])].square().sum()),
    ("reshape_sum_axis", lambda t: t.reshape(2, 3).sum(axis=0).square().sum()),
    ("log", lambda t: (t.square() + 1.0).log().sum()),
])
def test_elementwise_ops_match_fd(name, fn):
    rng = np.random.default_rng(hash(name) % 2 ** 32)
    x = rng.normal(0, 1, 6)
    t = parameter(x.copy())
    fn(t).backward()
    num = _fd(lambda v: float(fn(Tensor(v)).data), x.copy())
    assert relative_error(t.grad, num).max() < 1e-6


def test_matmul_and_mix_match_fd():
    rng = np.random.default_rng(0)
    A = rng.random((3, 3))
    W0 = rng.normal(0, 1, (4, 2))
    H = rng.normal(0, 1, (6, 4))
    W = parameter(W0.copy())

    def f(wv):
        return float(((Tensor(H).mix(A, 2) @ Tensor(wv)).square()).sum().data)

    (Tensor(H).mix(A, 2) @ W).square().sum().backward()
    assert relative_error(W.grad, _fd(f, W0.copy())).max() < 1e-6


def test_broadcast_add_unbroadcasts():
    b = parameter(np.zeros(3))
    (Tensor(np.ones((4, 3))) + b).sum().backward()
    assert b.grad.tolist() == [4.0, 4.0, 4.0]


def test_check_param_grads_skips_relu_kinks():
    w = parameter(np.array([0.0, 1.0]))
    worst, checked, skipped = check_param_grads(lambda: w.relu().sum(), {"w": w})
    assert skipped == 1 and checked == 1 and worst < 1e-8
