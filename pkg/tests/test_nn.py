import math

import numpy as np
import pytest

from rirl.gradcheck import finite_diff_check
from rirl.layers import (Affine, GruCell, MLP, categorical_entropy,
                         categorical_log_prob, categorical_sample,
                         gaussian_log_density, gaussian_sample, log_softmax)
from rirl.optim import Adam
from rirl.tape import Tensor, concat, gather, logsumexp, parameter


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


# --- affine ------------------------------------------------------------


def test_affine_identity():
    rng = np.random.default_rng(0)
    layer = Affine(2, 2, rng)
    layer.weight.data[:] = np.eye(2)
    layer.bias.data[:] = 0.0
    out = layer(Tensor(np.array([[1.0, 2.0]])))
    assert np.allclose(out.data, [[1.0, 2.0]])


def test_affine_zero_weight_returns_bias():
    rng = np.random.default_rng(0)
    layer = Affine(3, 1, rng)
    layer.weight.data[:] = 0.0
    layer.bias.data[:] = 3.0
    out = layer(Tensor(np.array([[5.0, -2.0, 7.0]])))
    assert np.allclose(out.data, [[3.0]])


def test_affine_matches_naive_matmul():
    rng = np.random.default_rng(1)
    layer = Affine(4, 3, rng)
    x = rng.normal(size=(5, 4))
    expected = naive_matmul(x, layer.weight.data) + layer.bias.data
    assert np.allclose(layer(Tensor(x)).data, expected, atol=1e-12)


def test_affine_dimension_mismatch():
    layer = Affine(4, 3, np.random.default_rng(0))
    with pytest.raises(ValueError):
        layer(Tensor(np.zeros((2, 5))))


def test_affine_gradcheck():
    rng = np.random.default_rng(2)
    layer = Affine(3, 2, rng)
    x = Tensor(rng.normal(size=(4, 3)))

    def loss():
        return (layer(x).tanh() ** 2.0).sum()

    assert finite_diff_check(loss, layer.parameters()) < 1e-6


# --- recurrent cell ----------------------------------------------------


def test_gru_zero_weights_closed_form():
    rng = np.random.default_rng(3)
    cell = GruCell(2, 3, rng)
    cell.x_gates.weight.data[:] = 0.0
    cell.h_gates.weight.data[:] = 0.0
    bias = rng.normal(size=3 * 3)
    cell.x_gates.bias.data[:] = bias
    cell.h_gates.bias.data[:] = 0.0
    h = cell(Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 3))))
    # by hand: gates sit at their bias points, hidden starts at zero
    update = 1.0 / (1.0 + np.exp(-bias[3:6]))
    candidate = np.tanh(bias[6:9])
    assert np.allclose(h.data[0], update * candidate, atol=1e-12)


def test_gru_deterministic():
    rng = np.random.default_rng(4)
    cell = GruCell(3, 4, rng)
    x = Tensor(rng.normal(size=(2, 3)))
    h = Tensor(rng.normal(size=(2, 4)))
    out1 = cell(x, h)
    out2 = cell(x, h)
    assert np.array_equal(out1.data, out2.data)


def test_gru_gradcheck_through_three_steps():
    rng = np.random.default_rng(5)
    cell = GruCell(2, 3, rng)
    xs = [rng.normal(size=(1, 2)) for _ in range(3)]

    def loss():
        h = Tensor(np.zeros((1, 3)))
        for x in xs:
            h = cell(x=Tensor(x), hidden=h)
        return (h ** 2.0).sum()

    assert finite_diff_check(loss, cell.parameters()) < 1e-4


def test_gru_hidden_size_mismatch():
    cell = GruCell(2, 3, np.random.default_rng(0))
    with pytest.raises(ValueError):
        cell(Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 5))))


# --- gaussian head -----------------------------------------------------


def test_gaussian_sample_zero_noise_limit():
    mean = parameter(np.zeros((1, 1)))
    log_std = parameter(np.full((1, 1), -50.0))  # clamps to the floor
    sample, _ = gaussian_sample(mean, log_std, np.array([[5.0]]))
    assert abs(sample.data[0, 0]) <= 5 * math.exp(-8) + 1e-12


def test_gaussian_density_at_mean():
    mean = parameter(np.ones((1, 1)))
    log_std = parameter(np.zeros((1, 1)))
    sample, log_density = gaussian_sample(mean, log_std, np.zeros((1, 1)))
    assert np.allclose(sample.data, 1.0)
    assert np.allclose(log_density.data, -0.5 * math.log(2 * math.pi))


def test_gaussian_density_matches_formula():
    rng = np.random.default_rng(6)
    mean = parameter(rng.normal(size=(100, 1)))
    log_std = parameter(rng.normal(size=(100, 1)) * 0.5)
    noise = rng.normal(size=(100, 1))
    sample, log_density = gaussian_sample(mean, log_std, noise)
    std = np.exp(log_std.data)
    expected = (-0.5 * ((sample.data - mean.data) / std) ** 2
                - np.log(std) - 0.5 * math.log(2 * math.pi)).sum(axis=-1)
    assert np.allclose(log_density.data, expected, atol=1e-9)


def test_gaussian_non_finite_params_raise():
    mean = parameter(np.array([[np.nan]]))
    log_std = parameter(np.zeros((1, 1)))
    with pytest.raises(ValueError):
        gaussian_sample(mean, log_std, np.zeros((1, 1)))


def test_gaussian_density_integrates_to_one():
    mean = parameter(np.array([[0.3]]))
    log_std = parameter(np.array([[math.log(0.7)]]))
    grid = np.linspace(-6, 6, 20001)
    dens = np.exp(gaussian_log_density(grid[:, None], mean, log_std).data)
    assert abs(np.trapezoid(dens, grid) - 1.0) < 1e-3


def test_gaussian_sample_path_vs_score_gradients():
    # pathwise: gradient flows from the sample into mean
    mean = parameter(np.zeros((1, 2)))
    log_std = parameter(np.zeros((1, 2)))
    sample, log_density = gaussian_sample(mean, log_std, np.ones((1, 2)))
    sample.sum().backward()
    assert np.allclose(mean.grad, 1.0)
    assert np.allclose(log_std.grad, 1.0)  # d(std*eps)/d(log_std) = std*eps
    # score: log-density treats the sampled value as constant, so its mean
    # gradient is (x - mean)/std^2 = noise/std, not the pathwise value
    mean.grad = None
    log_std.grad = None
    log_density.sum().backward()
    assert np.allclose(mean.grad, 1.0)   # noise/std with std=1
    assert np.allclose(log_std.grad, 0.0)  # z^2 - 1 with z = noise = 1


def test_gaussian_log_density_gradcheck():
    rng = np.random.default_rng(7)
    mean = parameter(rng.normal(size=(3, 2)))
    log_std = parameter(rng.normal(size=(3, 2)) * 0.3)
    x = rng.normal(size=(3, 2))

    def loss():
        return gaussian_log_density(x, mean, log_std).sum()

    assert finite_diff_check(loss, [mean, log_std]) < 1e-6


# --- categorical head ---------------------------------------------------


def test_log_softmax_normalizes():
    rng = np.random.default_rng(8)
    logits = Tensor(rng.normal(size=(5, 7)) * 3)
    lp = log_softmax(logits)
    assert np.allclose(np.exp(lp.data).sum(axis=-1), 1.0, atol=1e-9)


def test_categorical_sample_deterministic_and_distributed():
    logits = parameter(np.log(np.array([[0.2, 0.8]])))
    lp = log_softmax(logits)
    rng1 = np.random.default_rng(9)
    rng2 = np.random.default_rng(9)
    a1 = categorical_sample(log_softmax(parameter(np.tile(logits.data, (4000, 1)))), rng1)
    a2 = categorical_sample(log_softmax(parameter(np.tile(logits.data, (4000, 1)))), rng2)
    assert np.array_equal(a1, a2)
    assert abs(a1.mean() - 0.8) < 0.03
    assert categorical_log_prob(lp, np.array([1])).data[0] == pytest.approx(math.log(0.8))


def test_categorical_entropy_uniform():
    lp = log_softmax(Tensor(np.zeros((1, 4))))
    assert categorical_entropy(lp).data[0] == pytest.approx(math.log(4))


# --- optimizer ----------------------------------------------------------


def test_adam_zero_gradient_no_move():
    p = parameter(np.array([1.0, -2.0]))
    opt = Adam([p], lr=0.1)
    p.grad = np.zeros(2)
    opt.step()
    assert np.array_equal(p.data, [1.0, -2.0])


def test_adam_first_step_closed_form():
    p = parameter(np.array([0.5]))
    g = np.array([0.3])
    opt = Adam([p], lr=0.01)
    p.grad = g.copy()
    opt.step()
    # bias-corrected first step: lr * g / (|g| + eps) ~= lr * sign(g)
    expected = 0.5 - 0.01 * g / (np.abs(g) + 1e-8)
    assert np.allclose(p.data, expected, atol=1e-9)


def test_adam_deterministic_across_runs():
    def run():
        rng = np.random.default_rng(11)
        p = parameter(rng.normal(size=4))
        opt = Adam([p], lr=0.05)
        for _ in range(2):
            p.grad = rng.normal(size=4)
            opt.step()
        return p.data.copy()

    assert np.array_equal(run(), run())


def test_adam_nan_gradient_skips_with_warning():
    p = parameter(np.array([1.0]))
    opt = Adam([p], lr=0.1)
    p.grad = np.array([np.nan])
    with pytest.warns(RuntimeWarning):
        moved = opt.step()
    assert not moved
    assert p.data[0] == 1.0


# --- finite differences --------------------------------------------------


def test_finite_diff_quadratic():
    x = parameter(np.array([3.0]))
    assert finite_diff_check(lambda: (x ** 2.0).sum(), [x]) < 1e-6


def test_finite_diff_constant():
    x = parameter(np.array([1.0, 2.0]))
    err = finite_diff_check(lambda: Tensor(np.array(5.0)) + (x * 0.0).sum(), [x])
    assert err < 1e-8


# --- misc tape ops -------------------------------------------------------


def test_concat_and_slice_gradcheck():
    rng = np.random.default_rng(12)
    a = parameter(rng.normal(size=(2, 3)))
    b = parameter(rng.normal(size=(2, 2)))

    def loss():
        joined = concat([a, b], axis=-1)
        return (joined[:, 1:4].tanh() ** 2.0).sum()

    assert finite_diff_check(loss, [a, b]) < 1e-6


def test_logsumexp_and_gather_gradcheck():
    rng = np.random.default_rng(13)
    logits = parameter(rng.normal(size=(3, 5)))
    idx = np.array([0, 3, 2])

    def loss():
        lp = logits - logsumexp(logits, axis=-1, keepdims=True)
        return gather(lp, idx).sum()

    assert finite_diff_check(loss, [logits]) < 1e-6


def test_broadcast_backward():
    a = parameter(np.ones((1, 3)))
    b = parameter(np.ones((4, 1)))
    (a * b).sum().backward()
    assert np.array_equal(a.grad, np.full((1, 3), 4.0))
    assert np.array_equal(b.grad, np.full((4, 1), 3.0))


def test_mlp_forward_deterministic_and_gradcheck():
    rng = np.random.default_rng(14)
    net = MLP([3, 8, 2], rng)
    x = rng.normal(size=(4, 3))
    assert np.array_equal(net(Tensor(x)).data, net(Tensor(x)).data)

    def loss():
        return (net(Tensor(x)) ** 2.0).mean()

    assert finite_diff_check(loss, net.parameters()) < 1e-6
