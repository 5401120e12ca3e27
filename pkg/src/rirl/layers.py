"""Network building blocks: affine layers, a gated recurrent cell, and
stochastic heads (diagonal Gaussian, categorical)."""

from __future__ import annotations

import math

import numpy as np

from .tape import Module, Tensor, concat, gather, logsumexp, parameter

LOG_STD_MIN = -8.0
LOG_STD_MAX = 4.0
LOG_2PI = math.log(2.0 * math.pi)


class Affine(Module):
    """y = x @ W + b with fan-in scaled normal init."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.in_dim = in_dim
        self.out_dim = out_dim
        scale = 1.0 / math.sqrt(in_dim)
        self.weight = parameter(rng.normal(0.0, scale, size=(in_dim, out_dim)))
        self.bias = parameter(np.zeros(out_dim))

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.shape[-1] != self.in_dim:
            raise ValueError(
                f"affine expects input width {self.in_dim}, got {x.data.shape[-1]}")
        return x @ self.weight + self.bias


class MLP(Module):
    """Tanh MLP; `sizes` runs input -> hidden... -> output (linear last layer)."""

    def __init__(self, sizes: list[int], rng: np.random.Generator):
        self.layers = [Affine(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers[:-1]:
            x = layer(x).tanh()
        return self.layers[-1](x)


class GruCell(Module):
    """Gated recurrent cell. Step is deterministic given (input, hidden)."""

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.x_gates = Affine(input_size, 3 * hidden_size, rng)
        self.h_gates = Affine(hidden_size, 3 * hidden_size, rng)

    def __call__(self, x: Tensor, hidden: Tensor) -> Tensor:
        if hidden.data.shape[-1] != self.hidden_size:
            raise ValueError(
                f"hidden width {hidden.data.shape[-1]} != {self.hidden_size}")
        H = self.hidden_size
        gx = self.x_gates(x)
        gh = self.h_gates(hidden)
        reset = (gx[..., :H] + gh[..., :H]).sigmoid()
        update = (gx[..., H:2 * H] + gh[..., H:2 * H]).sigmoid()
        candidate = (gx[..., 2 * H:] + reset * gh[..., 2 * H:]).tanh()
        return (1.0 - update) * hidden + update * candidate

    def initial_hidden(self, batch: int) -> Tensor:
        return Tensor(np.zeros((batch, self.hidden_size)))


def gaussian_sample(mean: Tensor, log_std: Tensor, noise: np.ndarray):
    """Reparameterized draw plus its log-density.

    The sample carries pathwise gradients into `mean`/`log_std`; the returned
    log-density evaluates the density at the *fixed* sampled value, so its
    gradient is the score term only (the sample's own path does not route
    through it).
    """
    if not (np.all(np.isfinite(mean.data)) and np.all(np.isfinite(log_std.data))):
        raise ValueError("non-finite Gaussian head parameters")
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != mean.data.shape:
        raise ValueError(f"noise shape {noise.shape} != head shape {mean.data.shape}")
    log_std_c = log_std.clip(LOG_STD_MIN, LOG_STD_MAX)
    std = log_std_c.exp()
    sample = mean + std * noise
    log_density = gaussian_log_density(sample.data, mean, log_std)
    return sample, log_density


def gaussian_log_density(x: np.ndarray, mean: Tensor, log_std: Tensor) -> Tensor:
    """Diagonal-normal log-density of fixed points `x`, summed over the last axis."""
    log_std_c = log_std.clip(LOG_STD_MIN, LOG_STD_MAX)
    inv_std = (-log_std_c).exp()
    z = (Tensor(np.asarray(x, dtype=np.float64)) - mean) * inv_std
    per_dim = z * z * -0.5 - log_std_c - 0.5 * LOG_2PI
    return per_dim.sum(axis=-1)


def log_softmax(logits: Tensor) -> Tensor:
    return logits - logsumexp(logits, axis=-1, keepdims=True)


def categorical_sample(log_probs: Tensor, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF sampling; deterministic given the generator state."""
    probs = np.exp(log_probs.data)
    cum = np.cumsum(probs, axis=-1)
    cum[..., -1] = 1.0  # guard against rounding
    u = rng.random(size=probs.shape[:-1] + (1,))
    return (u > cum).sum(axis=-1).astype(np.intp)


def categorical_log_prob(log_probs: Tensor, actions: np.ndarray) -> Tensor:
    return gather(log_probs, actions)


def categorical_entropy(log_probs: Tensor) -> Tensor:
    return (log_probs.exp() * log_probs).sum(axis=-1) * -1.0
