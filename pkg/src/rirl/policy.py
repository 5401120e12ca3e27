"""The RIRL actor: per-channel residual Gaussian encoders, a gated recurrent
core, and a categorical action decoder.

The per-step log-density factorizes exactly as
log pi = log omega(a | y, h') + sum_k log q_k(y_k | o_k, h),
and gradients flow from the decoder back into encoder parameters through the
reparameterized encodings, while each log-density term treats its sampled
value as a constant.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .layers import (MLP, GruCell, categorical_entropy, categorical_log_prob,
                     categorical_sample, gaussian_log_density, gaussian_sample,
                     log_softmax)
from .mi import MiDiscriminator
from .tape import Module, Tensor, concat

CHECKPOINT_MAGIC = b"RIRL"
CHECKPOINT_VERSION = 1
ENC_LOG_STD_MAX = 1.0  # encoder noise ceiling: observations are O(1), and a
# fully-blurred channel at sigma ~ e already carries < 0.01 nats; anything
# larger just floods the recurrent core and the other channels with noise


@dataclass
class ChannelSpec:
    name: str
    width: int
    cost_weight: float = 0.0  # attention cost per nat

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError("channel width must be positive")
        if not np.isfinite(self.cost_weight):
            raise ValueError("attention cost must be finite")


@dataclass
class ActStep:
    """One decision of one actor over a batch of episodes."""
    observations: dict[str, np.ndarray]
    encodings: dict[str, Tensor]
    log_q: dict[str, Tensor]
    noises: dict[str, np.ndarray]
    enc_mean: dict[str, Tensor]   # residual means, live (regularization hook)
    enc_std: dict[str, np.ndarray]
    hidden_before: Tensor
    hidden_after: Tensor
    actions: np.ndarray          # (B, n_heads)
    log_w: Tensor                # (B,)
    log_pi: Tensor               # (B,)
    entropy: Tensor              # (B,) decoder entropy
    extras: dict = field(default_factory=dict)


class RirlActor(Module):
    def __init__(self, channels: list[ChannelSpec], action_dims: list[int],
                 rng: np.random.Generator, hidden_size: int = 32,
                 enc_hidden: int = 64, dec_hidden: int = 64,
                 decoder_cost_weight: float = 0.0,
                 low_noise_offset: float = -4.0):
        if len({c.name for c in channels}) != len(channels):
            raise ValueError("channel names must be unique")
        self.channels = list(channels)
        self.action_dims = list(action_dims)
        self.hidden_size = hidden_size
        self.enc_hidden = enc_hidden
        self.dec_hidden = dec_hidden
        self.decoder_cost_weight = decoder_cost_weight
        self.total_width = sum(c.width for c in channels)
        self.encoders = {
            c.name: MLP([c.width + hidden_size, enc_hidden, 2 * c.width], rng)
            for c in channels
        }
        self.cell = GruCell(self.total_width, hidden_size, rng)
        self.decoder = MLP([self.total_width + hidden_size, dec_hidden,
                            sum(action_dims)], rng)
        # near-deterministic residual encoders at the start of training
        for enc in self.encoders.values():
            enc.layers[-1].weight.data *= 0.01
            enc.layers[-1].bias.data[:] = 0.0
        init_low_noise(self, low_noise_offset)

    # -- stepping ------------------------------------------------------------

    def initial_hidden(self, batch: int) -> Tensor:
        return self.cell.initial_hidden(batch)

    def encode_channel(self, name: str, obs: np.ndarray, hidden: Tensor,
                       noise: np.ndarray):
        """Residual encoding y = o + mean + std*eps with its log-density."""
        obs = np.asarray(obs, dtype=np.float64)
        if not np.all(np.isfinite(obs)):
            raise ValueError(f"non-finite observation on channel {name!r}")
        spec = self._spec(name)
        if obs.shape[-1] != spec.width:
            raise ValueError(
                f"channel {name!r} expects width {spec.width}, got {obs.shape[-1]}")
        params = self.encoders[name](concat([Tensor(obs), hidden], axis=-1))
        residual = params[..., :spec.width]
        log_std = params[..., spec.width:].clip(-8.0, ENC_LOG_STD_MAX)
        y, log_q = gaussian_sample(Tensor(obs) + residual, log_std, noise)
        return y, log_q, residual, np.exp(log_std.data)

    def act(self, observations: dict[str, np.ndarray], hidden: Tensor,
            rng: np.random.Generator, explore_eps: float = 0.0) -> ActStep:
        """Encode every channel, advance the recurrent state, sample an action.

        `explore_eps` mixes a uniform floor into the decoder distribution
        (sampled and scored as the acting policy): pure REINFORCE has an
        absorbing state wherever a batch's rewards are all equal, and the
        floor keeps recovery gradients alive during training."""
        batch = hidden.data.shape[0]
        encodings, log_qs, noises, means, stds = {}, {}, {}, {}, {}
        for spec in self.channels:
            noise = rng.standard_normal((batch, spec.width))
            y, log_q, residual, std = self.encode_channel(
                spec.name, observations[spec.name], hidden, noise)
            encodings[spec.name] = y
            log_qs[spec.name] = log_q
            noises[spec.name] = noise
            means[spec.name] = residual
            stds[spec.name] = std
        y_all = concat([encodings[c.name] for c in self.channels], axis=-1)
        hidden_after = self.cell(y_all, hidden)
        logits = self.decoder(concat([y_all, hidden_after], axis=-1))
        actions = np.empty((batch, len(self.action_dims)), dtype=np.intp)
        log_w = None
        entropy = None
        offset = 0
        for head, dim in enumerate(self.action_dims):
            lp = log_softmax(logits[..., offset:offset + dim])
            if explore_eps > 0.0:
                lp = (lp.exp() * (1.0 - explore_eps) + explore_eps / dim).log()
            actions[:, head] = categorical_sample(lp, rng)
            head_lp = categorical_log_prob(lp, actions[:, head])
            head_ent = categorical_entropy(lp)
            log_w = head_lp if log_w is None else log_w + head_lp
            entropy = head_ent if entropy is None else entropy + head_ent
            offset += dim
        log_pi = log_w
        for spec in self.channels:
            log_pi = log_pi + log_qs[spec.name]
        return ActStep(observations=dict(observations), encodings=encodings,
                       log_q=log_qs, noises=noises, enc_mean=means, enc_std=stds,
                       hidden_before=hidden, hidden_after=hidden_after,
                       actions=actions, log_w=log_w, log_pi=log_pi,
                       entropy=entropy)

    def replay_log_pi(self, observations: list[dict[str, np.ndarray]],
                      noises: list[dict[str, np.ndarray]],
                      actions: list[np.ndarray],
                      density_points: list[dict[str, np.ndarray]] | None = None
                      ) -> Tensor:
        """Recompute the episode log-density with frozen noise and actions.

        With unchanged parameters this reproduces the rollout's log pi exactly.
        `density_points` pins the encoder log-density evaluation points (the
        stored samples), which makes the result a pure function of the
        parameters — the form finite-difference checks need.
        """
        batch = next(iter(observations[0].values())).shape[0]
        hidden = self.initial_hidden(batch)
        total = Tensor(np.zeros(batch))
        for t, (obs_t, noise_t, act_t) in enumerate(zip(observations, noises,
                                                        actions)):
            encodings = []
            for spec in self.channels:
                obs = np.asarray(obs_t[spec.name], dtype=np.float64)
                params = self.encoders[spec.name](
                    concat([Tensor(obs), hidden], axis=-1))
                mean = Tensor(obs) + params[..., :spec.width]
                log_std = params[..., spec.width:].clip(-8.0, ENC_LOG_STD_MAX)
                std = log_std.exp()
                y = mean + std * noise_t[spec.name]
                x = (density_points[t][spec.name] if density_points is not None
                     else y.data)
                total = total + gaussian_log_density(x, mean, log_std)
                encodings.append(y)
            y_all = concat(encodings, axis=-1)
            hidden = self.cell(y_all, hidden)
            logits = self.decoder(concat([y_all, hidden], axis=-1))
            offset = 0
            for head, dim in enumerate(self.action_dims):
                lp = log_softmax(logits[..., offset:offset + dim])
                total = total + categorical_log_prob(lp, act_t[:, head])
                offset += dim
        return total

    def _spec(self, name: str) -> ChannelSpec:
        for spec in self.channels:
            if spec.name == name:
                return spec
        raise KeyError(name)

    # -- serialization ---------------------------------------------------------

    def save(self, path) -> None:
        header = {
            "version": CHECKPOINT_VERSION,
            "channels": [{"name": c.name, "width": c.width,
                          "cost_weight": c.cost_weight} for c in self.channels],
            "action_dims": self.action_dims,
            "hidden_size": self.hidden_size,
            "enc_hidden": self.enc_hidden,
            "dec_hidden": self.dec_hidden,
            "decoder_cost_weight": self.decoder_cost_weight,
            "shapes": [list(p.data.shape) for p in self.parameters()],
        }
        blob = json.dumps(header).encode()
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            for p in self.parameters():
                fh.write(np.ascontiguousarray(p.data).tobytes())

    @classmethod
    def load(cls, path) -> "RirlActor":
        with open(path, "rb") as fh:
            if fh.read(4) != CHECKPOINT_MAGIC:
                raise ValueError("not an actor checkpoint")
            (length,) = struct.unpack("<I", fh.read(4))
            header = json.loads(fh.read(length))
            if header["version"] != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {header['version']}")
            actor = cls(
                channels=[ChannelSpec(**c) for c in header["channels"]],
                action_dims=header["action_dims"],
                rng=np.random.default_rng(0),
                hidden_size=header["hidden_size"],
                enc_hidden=header["enc_hidden"],
                dec_hidden=header["dec_hidden"],
                decoder_cost_weight=header["decoder_cost_weight"],
            )
            for p, shape in zip(actor.parameters(), header["shapes"]):
                flat = np.frombuffer(fh.read(8 * int(np.prod(shape))),
                                     dtype=np.float64)
                p.data = flat.reshape(shape).copy()
        return actor


def init_low_noise(actor: RirlActor, offset: float) -> None:
    """Shift every encoder's log-std output bias so initial encodings hug the
    observations (std ~= e^offset per coordinate)."""
    if offset > 0:
        raise ValueError("low-noise offset must be <= 0")
    for spec in actor.channels:
        bias = actor.encoders[spec.name].layers[-1].bias
        bias.data[spec.width:] += offset


def one_hot_actions(actions: np.ndarray, action_dims: list[int]) -> np.ndarray:
    """Concatenate per-head one-hot encodings, for discriminator inputs."""
    batch = actions.shape[0]
    parts = []
    for head, dim in enumerate(action_dims):
        block = np.zeros((batch, dim))
        block[np.arange(batch), actions[:, head]] = 1.0
        parts.append(block)
    return np.concatenate(parts, axis=-1)


def attention_penalties(step: ActStep, channel_specs: list[ChannelSpec],
                        discriminators: dict[str, MiDiscriminator],
                        decoder_disc: MiDiscriminator | None = None,
                        action_dims: list[int] | None = None
                        ) -> dict[str, np.ndarray]:
    """Pointwise attention costs in nats, one array (B,) per instrumented
    channel; context concatenates the hidden state per the estimator contract.
    Inputs are detached — penalties are rewards, not gradient paths."""
    out: dict[str, np.ndarray] = {}
    hid = step.hidden_before.data
    for spec in channel_specs:
        disc = discriminators.get(spec.name)
        if disc is None:
            continue
        context = np.concatenate([step.observations[spec.name], hid], axis=-1)
        out[spec.name] = disc.logits(step.encodings[spec.name].data, context)
    if decoder_disc is not None:
        y_all = np.concatenate(
            [step.encodings[c.name].data for c in channel_specs], axis=-1)
        context = np.concatenate([y_all, step.hidden_after.data], axis=-1)
        out["decoder"] = decoder_disc.logits(
            one_hot_actions(step.actions, action_dims), context)
    return out
