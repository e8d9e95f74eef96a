import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epinn import autodiff as ad


def central_diff(f, x, eps=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = eps
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * eps)
    return g


def test_square_gradient():
    val, g = ad.value_and_grad(lambda x: x * x, 3.0)
    assert val == 9.0
    assert g == pytest.approx(6.0)


def test_constant_output_has_zero_gradient():
    _, g = ad.value_and_grad(lambda x: 7.0 + 0 * x, 2.0)
    assert g == 0.0


def test_unused_input_gets_zero_adjoint():
    tape = ad.Tape()
    a, b = tape.input(2.0), tape.input(5.0)
    out = a * a
    grads = ad.gradient(tape, out)
    assert grads[b.index] == 0.0
    assert grads[a.index] == pytest.approx(4.0)


def test_bad_output_index():
    tape = ad.Tape()
    tape.input(1.0)
    with pytest.raises(IndexError):
        ad.gradient(tape, 5)
    other = ad.Tape().input(1.0)
    with pytest.raises(IndexError):
        ad.gradient(tape, other)


def test_nonscalar_output_needs_seed():
    tape = ad.Tape()
    x = tape.input(np.ones(3))
    with pytest.raises(ValueError):
        ad.gradient(tape, x * 2.0)
    g = ad.gradient(tape, x * 2.0, seed=np.array([1.0, 2.0, 3.0]))
    np.testing.assert_allclose(g[x.index], [2.0, 4.0, 6.0])


def test_branching_on_tape_value_is_rejected():
    tape = ad.Tape()
    x = tape.input(1.0)
    with pytest.raises(TypeError):
        if x > 0:
            pass


def test_unsupported_ufunc():
    tape = ad.Tape()
    x = tape.input(np.ones(2))
    with pytest.raises(ad.UnsupportedPrimitiveError):
        np.sin(x)


def f_mix(x):
    a = np.tanh(x @ np.array([[0.3, -1.2], [0.7, 0.4], [-0.5, 0.9]]))
    b = np.exp(0.3 * x).sum() + np.log(1.5 + x * x).sum()
    return (a * a).sum() + b / (2.0 + (x**2).sum()) - (a[1:] - 0.5).sum() + ad.relu3(x).sum()


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_gradient_matches_central_differences(vals):
    x = np.array(vals)
    _, g = ad.value_and_grad(f_mix, x)
    fd = central_diff(lambda v: float(f_mix(v)), x)
    np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-7)


def test_getitem_scatter_and_reshape():
    def f(x):
        m = x.reshape((2, 3))
        return (m[:, 1] * m[0, 2]).sum() + m.T[2, 0]

    x = np.arange(1.0, 7.0)
    _, g = ad.value_and_grad(f, x)
    np.testing.assert_allclose(g, central_diff(lambda v: float(f(v)), x), atol=1e-8)


def test_maximum_and_abs_gradients():
    def f(x):
        return np.maximum(x, 0.5).sum() + np.abs(x).sum()

    x = np.array([-1.0, 0.2, 2.0])
    _, g = ad.value_and_grad(f, x)
    np.testing.assert_allclose(g, [-1.0, 1.0, 2.0])


def test_relu_subgradient_at_kink_is_zero():
    _, g = ad.value_and_grad(lambda x: ad.relu(x).sum(), np.array([-1.0, 0.0, 1.0]))
    np.testing.assert_allclose(g, [0.0, 0.0, 1.0])


def test_second_derivative_of_cube():
    assert ad.second_input_derivative(lambda x: (x * x * x).sum(), [2.0], 0) == pytest.approx(12.0)


def test_second_derivative_of_tanh_at_zero():
    assert ad.second_input_derivative(lambda x: np.tanh(x).sum(), [0.0], 0) == pytest.approx(0.0, abs=1e-14)


def test_second_derivative_tanh_mlp_vs_differences():
    rng = np.random.default_rng(3)
    W1, W2 = rng.normal(size=(2, 8)), rng.normal(size=(8, 1))

    def net(x):
        return (np.tanh(x @ W1) @ W2).sum()

    x0 = np.array([0.3, -0.2])
    for axis in (0, 1):
        d2 = ad.second_input_derivative(net, x0, axis)
        e = np.zeros(2)
        e[axis] = 1e-4
        fd = (net(x0 + e) - 2 * net(x0) + net(x0 - e)) / 1e-8
        assert d2 == pytest.approx(fd, rel=1e-4)


def test_second_derivative_through_relu_raises():
    with pytest.raises(ad.NonSmoothError):
        ad.second_input_derivative(lambda x: ad.relu(x).sum(), [0.5], 0)
    with pytest.raises(ad.NonSmoothError):
        ad.second_input_derivative(lambda x: np.abs(x).sum(), [0.5], 0)


def test_second_order_counter():
    ad.COUNTERS.clear()
    ad.second_input_derivative(lambda x: (x * x).sum(), [1.0], 0)
    assert ad.COUNTERS["second_order"] == 1


def tanh_derivs(v, order=2):
    t = np.tanh(v)
    s = 1 - t * t
    return t, s, -2 * t * s, s * (4 * t * t - 2 * s)


@pytest.mark.parametrize("order", [1, 2])
def test_jet_activation_adjoint(order):
    rng = np.random.default_rng(order)
    n, k, m = 5, 2, 3
    z0 = rng.normal(size=((1 + k * order) * n, m))
    b0 = rng.normal(size=m)
    seed = rng.normal(size=z0.shape)

    def f(z, b):
        return (ad.jet_activation(z, b, k, order, tanh_derivs) * seed).sum()

    tape = ad.Tape()
    zv, bv = tape.input(z0), tape.input(b0)
    grads = ad.gradient(tape, f(zv, bv))
    fd_z = central_diff(lambda z: float(f(z, b0)), z0)
    fd_b = central_diff(lambda b: float(f(z0, b)), b0)
    np.testing.assert_allclose(grads[zv.index], fd_z, rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(grads[bv.index], fd_b, rtol=1e-6, atol=1e-8)


def test_jet_activation_rejects_duals():
    with pytest.raises(ad.UnsupportedPrimitiveError):
        ad.jet_activation(ad.Dual(np.ones((2, 1)), np.ones((2, 1))), np.zeros(1), 1, 1, tanh_derivs)
