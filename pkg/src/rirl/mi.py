"""Pointwise mutual-information estimation with density-ratio discriminators.

A binary classifier is trained to separate jointly sampled (output, context)
pairs from factorized ones (outputs deranged against contexts within the
batch). With balanced classes its logit converges to the pointwise log
density ratio, so the logit at a joint sample is the single-sample MI
estimate and its batch mean estimates the mutual information in nats.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .optim import Adam
from .tape import Module, Tensor
from .layers import MLP


@dataclass
class PairBatch:
    outputs: np.ndarray   # (B, output_dim)
    contexts: np.ndarray  # (B, context_dim)
    pairing: str = "joint"

    def __post_init__(self):
        if self.outputs.shape[0] != self.contexts.shape[0]:
            raise ValueError("outputs and contexts must have equal batch size")


def derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded permutation of range(n) with no fixed point (Sattolo's algorithm)."""
    if n < 2:
        raise ValueError("derangement needs n >= 2")
    perm = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i))
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def make_factorized(batch: PairBatch, rng: np.random.Generator) -> PairBatch:
    """Permute outputs against unchanged contexts; breaks the pairing."""
    if batch.outputs.shape[0] < 2:
        raise ValueError("factorized pairing needs batch size >= 2")
    perm = derangement(batch.outputs.shape[0], rng)
    return PairBatch(batch.outputs[perm], batch.contexts, pairing="factorized")


class MiDiscriminator(Module):
    """Classifier whose logit estimates log p(x,c) - log p(x)p(c).

    Joint pairs carry label 1, factorized pairs label 0; train_step enforces
    balanced halves so the logit-as-log-ratio calibration holds.
    """

    def __init__(self, output_dim: int, context_dim: int,
                 rng: np.random.Generator, lr: float = 1e-3,
                 hidden: int = 64, depth: int = 2):
        self.output_dim = output_dim
        self.context_dim = context_dim
        sizes = [output_dim + context_dim] + [hidden] * depth + [1]
        self.net = MLP(sizes, rng)
        self.lr = lr
        self.opt = Adam(self.parameters(), lr=lr)

    # tape-free forward for penalty evaluation (no gradients to the policy)
    def logits(self, outputs: np.ndarray, contexts: np.ndarray) -> np.ndarray:
        x = np.concatenate([np.atleast_2d(outputs), np.atleast_2d(contexts)], axis=-1)
        for layer in self.net.layers[:-1]:
            x = np.tanh(x @ layer.weight.data + layer.bias.data)
        last = self.net.layers[-1]
        return (x @ last.weight.data + last.bias.data)[:, 0]

    def logits_tape(self, outputs: Tensor, contexts: np.ndarray) -> Tensor:
        """Differentiable logits for a live `outputs` tensor: the pathwise
        route by which an attention penalty reaches the encoder that produced
        the encodings. Contexts stay detached."""
        from .tape import concat

        joined = concat([outputs, Tensor(np.atleast_2d(contexts))], axis=-1)
        return self.net(joined)[:, 0]

    def train_step(self, joint: PairBatch, factorized: PairBatch) -> float:
        """One balanced binary cross-entropy step; returns the mean loss."""
        if joint.outputs.shape[0] != factorized.outputs.shape[0]:
            raise ValueError("train_step requires balanced class sizes")
        inputs = np.concatenate([
            np.concatenate([joint.outputs, joint.contexts], axis=-1),
            np.concatenate([factorized.outputs, factorized.contexts], axis=-1),
        ], axis=0)
        labels = np.concatenate([np.ones(joint.outputs.shape[0]),
                                 np.zeros(factorized.outputs.shape[0])])
        logit = self.net(Tensor(inputs))[:, 0]
        # BCE with logits: softplus(z) - y*z
        loss = (logit.softplus() - Tensor(labels) * logit).mean()
        if not np.isfinite(loss.data):
            warnings.warn("non-finite discriminator loss: step skipped",
                          RuntimeWarning)
            return float(loss.data)
        self.opt.zero_grad()
        loss.backward()
        self.opt.step()
        return float(loss.data)


def pointwise_mi(disc: MiDiscriminator, output: np.ndarray,
                 context: np.ndarray) -> np.ndarray:
    """Pointwise log-ratio estimate in nats; mean over joint samples estimates I."""
    return disc.logits(output, context)


def fit_discriminator(disc: MiDiscriminator, outputs: np.ndarray,
                      contexts: np.ndarray, rng: np.random.Generator,
                      steps: int = 1000, batch_size: int | None = None,
                      lr_decay: bool = False) -> float:
    """Convenience trainer used by the measurement-style tests: repeatedly
    resamples balanced joint/factorized minibatches. Returns the final loss."""
    n = outputs.shape[0]
    if batch_size is None:
        batch_size = 512
    batch_size = min(batch_size, n)
    base_lr = disc.opt.lr
    loss = math.log(2.0)
    for step in range(steps):
        if lr_decay:
            disc.opt.lr = base_lr * (1.0 - 0.95 * step / steps)
        idx = rng.choice(n, size=batch_size, replace=False) if batch_size < n \
            else np.arange(n)
        joint = PairBatch(outputs[idx], contexts[idx])
        loss = disc.train_step(joint, make_factorized(joint, rng))
    disc.opt.lr = base_lr
    return loss


def measure_mi(outputs: np.ndarray, contexts: np.ndarray,
               rng: np.random.Generator, steps: int = 800,
               batch_size: int = 512, lr: float = 1e-3) -> float:
    """Measurement-grade MI estimate: trains a fresh discriminator with a
    decaying learning rate and averages the batch-mean pointwise estimate
    over the final tenth of training to damp optimizer oscillation."""
    disc = MiDiscriminator(outputs.shape[1], contexts.shape[1], rng, lr=lr)
    n = outputs.shape[0]
    batch_size = min(batch_size, n)
    tail = max(20, steps // 10)
    estimates = []
    for step in range(steps):
        disc.opt.lr = lr * (1.0 - 0.95 * step / steps)
        idx = rng.choice(n, size=batch_size, replace=False) if batch_size < n \
            else np.arange(n)
        joint = PairBatch(outputs[idx], contexts[idx])
        disc.train_step(joint, make_factorized(joint, rng))
        if step >= steps - tail:
            estimates.append(disc.logits(outputs, contexts).mean())
    return float(np.mean(estimates))
