"""Network forward/backward correctness against independent references."""

import numpy as np
import pytest

from delayrl.nets import Adam, Mlp, finite_difference_grads, max_relative_error


def test_zero_parameters_give_zero_output():
    net = Mlp((3, 4, 4, 2), np.random.default_rng(0))
    for p in net.param_list():
        p[...] = 0.0
    out = net.forward(np.ones((5, 3)))
    assert np.all(out == 0.0)


def test_single_linear_layer_identity():
    net = Mlp((3, 3), np.random.default_rng(0))
    net.weights[0][...] = np.eye(3)
    net.biases[0][...] = 0.0
    x = np.random.default_rng(1).normal(size=(4, 3))
    assert np.allclose(net.forward(x), x)


def test_forward_is_deterministic():
    net = Mlp((4, 8, 8, 2), np.random.default_rng(3))
    x = np.random.default_rng(5).normal(size=(6, 4))
    assert np.array_equal(net.forward(x), net.forward(x))


def test_dimension_mismatch_raises():
    net = Mlp((4, 8, 2), np.random.default_rng(0))
    with pytest.raises(ValueError):
        net.forward(np.zeros((3, 5)))
    with pytest.raises(ValueError):
        net.forward(np.zeros(4))  # must be batched


def test_constant_loss_has_zero_gradient():
    net = Mlp((2, 4, 1), np.random.default_rng(2))
    x = np.random.default_rng(0).normal(size=(3, 2))
    _, acts = net.forward_cache(x)
    grads, _ = net.backward(acts, np.zeros((3, 1)))
    assert all(np.all(g == 0.0) for g in grads)


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(7)
    for _ in range(10):
        dims = (int(rng.integers(2, 5)), int(rng.integers(3, 8)),
                int(rng.integers(3, 8)), int(rng.integers(1, 3)))
        net = Mlp(dims, rng)
        x = rng.normal(size=(4, dims[0]))
        target = rng.normal(size=(4, dims[-1]))

        def loss():
            d = net.forward(x) - target
            return 0.5 * float(np.sum(d * d))

        out, acts = net.forward_cache(x)
        analytic, _ = net.backward(acts, out - target)
        numeric = finite_difference_grads(loss, net.param_list())
        assert max_relative_error(analytic, numeric) < 1e-4


def test_linear_net_matches_least_squares_gradient():
    rng = np.random.default_rng(11)
    net = Mlp((3, 2), rng)
    x = rng.normal(size=(8, 3))
    target = rng.normal(size=(8, 2))
    out, acts = net.forward_cache(x)
    grads, _ = net.backward(acts, out - target)
    resid = x @ net.weights[0] + net.biases[0] - target
    assert np.allclose(grads[0], x.T @ resid)  # closed-form dW
    assert np.allclose(grads[1], resid.sum(axis=0))  # closed-form db


def test_backward_input_gradient():
    rng = np.random.default_rng(13)
    net = Mlp((3, 6, 1), rng)
    x0 = rng.normal(size=(1, 3))

    def loss_of_input(x):
        return float(net.forward(x)[0, 0])

    _, acts = net.forward_cache(x0)
    _, dx = net.backward(acts, np.ones((1, 1)))
    h = 1e-6
    for i in range(3):
        xp, xm = x0.copy(), x0.copy()
        xp[0, i] += h
        xm[0, i] -= h
        num = (loss_of_input(xp) - loss_of_input(xm)) / (2 * h)
        assert abs(dx[0, i] - num) < 1e-6


def test_adam_reduces_quadratic_loss():
    rng = np.random.default_rng(17)
    param = rng.normal(size=(4,)) * 5
    opt = Adam([param], lr=0.1)
    for _ in range(500):
        opt.step([param.copy()])  # gradient of 0.5*||p||^2 is p
    assert np.linalg.norm(param) < 1e-2


def test_clone_is_independent():
    net = Mlp((2, 3, 1), np.random.default_rng(0))
    other = net.clone()
    other.weights[0][...] = 99.0
    assert not np.array_equal(net.weights[0], other.weights[0])
