import math

import numpy as np
import pytest

from rirl.gradcheck import finite_diff_check
from rirl.mi import MiDiscriminator, fit_discriminator
from rirl.policy import (ActStep, ChannelSpec, RirlActor, attention_penalties,
                         init_low_noise, one_hot_actions)
from rirl.tape import Tensor


def small_actor(rng=None, widths=(3, 2), action_dims=(4,), **kwargs):
    rng = rng or np.random.default_rng(0)
    channels = [ChannelSpec(f"c{i}", w) for i, w in enumerate(widths)]
    defaults = dict(hidden_size=5, enc_hidden=8, dec_hidden=8)
    defaults.update(kwargs)
    return RirlActor(channels, list(action_dims), rng, **defaults)


def random_obs(actor, batch, rng):
    return {c.name: rng.normal(size=(batch, c.width)) for c in actor.channels}


# --- encoding -------------------------------------------------------------


def test_fresh_encoder_hugs_observation():
    rng = np.random.default_rng(1)
    actor = small_actor(rng)
    obs = random_obs(actor, 64, rng)
    step = actor.act(obs, actor.initial_hidden(64), rng)
    for c in actor.channels:
        assert np.all(step.enc_std[c.name] <= 0.02)
        assert np.max(np.abs(step.encodings[c.name].data - obs[c.name])) < 0.2


def test_residual_identity_at_noise_floor():
    rng = np.random.default_rng(2)
    actor = small_actor(rng)
    for c in actor.channels:
        final = actor.encoders[c.name].layers[-1]
        final.weight.data[:] = 0.0
        final.bias.data[:c.width] = 0.0
        final.bias.data[c.width:] = -50.0  # clamps to the -8 floor
    obs = random_obs(actor, 32, rng)
    step = actor.act(obs, actor.initial_hidden(32), rng)
    floor = math.exp(-8)
    for c in actor.channels:
        deviation = np.linalg.norm(step.encodings[c.name].data - obs[c.name],
                                   axis=-1)
        assert np.all(deviation <= 3 * floor * math.sqrt(c.width))


def test_encode_channel_density_matches_oracle():
    rng = np.random.default_rng(3)
    actor = small_actor(rng)
    hidden = actor.initial_hidden(16)
    obs = rng.normal(size=(16, 3))
    noise = rng.standard_normal((16, 3))
    y, log_q, residual, std = actor.encode_channel("c0", obs, hidden, noise)
    mean = obs + residual.data
    expected = (-0.5 * ((y.data - mean) / std) ** 2 - np.log(std)
                - 0.5 * math.log(2 * math.pi)).sum(axis=-1)
    assert np.allclose(log_q.data, expected, atol=1e-9)


def test_encode_channel_rejects_bad_input():
    actor = small_actor()
    hidden = actor.initial_hidden(2)
    with pytest.raises(ValueError):
        actor.encode_channel("c0", np.full((2, 3), np.nan), hidden,
                             np.zeros((2, 3)))
    with pytest.raises(ValueError):
        actor.encode_channel("c0", np.zeros((2, 5)), hidden, np.zeros((2, 5)))


# --- acting ----------------------------------------------------------------


def test_log_pi_factorization_identity():
    rng = np.random.default_rng(4)
    actor = small_actor(rng)
    obs = random_obs(actor, 32, rng)
    step = actor.act(obs, actor.initial_hidden(32), rng)
    parts = step.log_w.data + sum(step.log_q[c.name].data
                                  for c in actor.channels)
    assert np.allclose(step.log_pi.data, parts, atol=1e-9)


def test_single_channel_log_pi_has_two_summands():
    rng = np.random.default_rng(5)
    actor = small_actor(rng, widths=(3,))
    obs = random_obs(actor, 8, rng)
    step = actor.act(obs, actor.initial_hidden(8), rng)
    assert len(step.log_q) == 1
    assert np.allclose(step.log_pi.data,
                       step.log_w.data + step.log_q["c0"].data, atol=1e-12)


def test_act_deterministic_given_noise():
    actor = small_actor(np.random.default_rng(6))
    obs = random_obs(actor, 16, np.random.default_rng(7))
    s1 = actor.act(obs, actor.initial_hidden(16), np.random.default_rng(8))
    s2 = actor.act(obs, actor.initial_hidden(16), np.random.default_rng(8))
    assert np.array_equal(s1.actions, s2.actions)
    assert np.array_equal(s1.log_pi.data, s2.log_pi.data)
    for c in actor.channels:
        assert np.array_equal(s1.encodings[c.name].data,
                              s2.encodings[c.name].data)


def test_replay_reproduces_rollout_log_pi():
    rng = np.random.default_rng(9)
    actor = small_actor(rng)
    obs_seq, noise_seq, act_seq = [], [], []
    hidden = actor.initial_hidden(8)
    total = np.zeros(8)
    step_rng = np.random.default_rng(10)
    for _ in range(3):
        obs = random_obs(actor, 8, step_rng)
        step = actor.act(obs, hidden, step_rng)
        hidden = step.hidden_after
        obs_seq.append(obs)
        noise_seq.append(step.noises)
        act_seq.append(step.actions)
        total += step.log_pi.data
    replay = actor.replay_log_pi(obs_seq, noise_seq, act_seq)
    assert np.allclose(replay.data, total, atol=1e-9)


def test_actor_log_density_gradcheck():
    rng = np.random.default_rng(11)
    actor = small_actor(rng, widths=(2,), action_dims=(3,),
                        hidden_size=3, enc_hidden=4, dec_hidden=4)
    hidden = actor.initial_hidden(2)
    obs_seq, noise_seq, act_seq, point_seq = [], [], [], []
    step_rng = np.random.default_rng(12)
    for _ in range(2):
        obs = random_obs(actor, 2, step_rng)
        step = actor.act(obs, hidden, step_rng)
        hidden = step.hidden_after
        obs_seq.append(obs)
        noise_seq.append(step.noises)
        act_seq.append(step.actions)
        point_seq.append({k: v.data.copy() for k, v in step.encodings.items()})

    def loss():
        return actor.replay_log_pi(obs_seq, noise_seq, act_seq,
                                   density_points=point_seq).sum()

    assert finite_diff_check(loss, actor.parameters()) < 1e-3


def test_gradient_flow_contract():
    rng = np.random.default_rng(13)
    actor = small_actor(rng)
    obs = random_obs(actor, 4, rng)
    step = actor.act(obs, actor.initial_hidden(4), rng)
    enc_params = actor.encoders["c0"].parameters()
    # decoder loss reaches encoder parameters through the sampled encodings
    actor.zero_grad()
    step.log_w.sum().backward()
    assert any(p.grad is not None and np.any(p.grad != 0) for p in enc_params)
    # the log-density term is score-only: its gradient equals the gradient of
    # the density evaluated at the *pinned* sample value (no pathwise share)
    actor.zero_grad()
    step.log_q["c0"].sum().backward()
    score_grad = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
                  for p in enc_params]
    from rirl.layers import gaussian_log_density
    from rirl.tape import concat

    def pinned_density():
        params = actor.encoders["c0"](
            concat([Tensor(obs["c0"]), step.hidden_before], axis=-1))
        return gaussian_log_density(step.encodings["c0"].data,
                                    Tensor(obs["c0"]) + params[..., :3],
                                    params[..., 3:]).sum()

    actor.zero_grad()
    pinned_density().backward()
    for p, g in zip(enc_params, score_grad):
        assert np.allclose(np.zeros_like(g) if p.grad is None else p.grad,
                           g, atol=1e-12)


# --- initialization ----------------------------------------------------------


def test_init_low_noise_offsets():
    rng = np.random.default_rng(14)
    actor = small_actor(rng, low_noise_offset=0.0)
    before = {c.name: actor.encoders[c.name].layers[-1].bias.data.copy()
              for c in actor.channels}
    init_low_noise(actor, 0.0)
    for c in actor.channels:
        assert np.array_equal(actor.encoders[c.name].layers[-1].bias.data,
                              before[c.name])
    init_low_noise(actor, -4.0)
    obs = random_obs(actor, 16, rng)
    step = actor.act(obs, actor.initial_hidden(16), rng)
    for c in actor.channels:
        assert np.allclose(step.enc_std[c.name], math.exp(-4), atol=5e-3)
    with pytest.raises(ValueError):
        init_low_noise(actor, 1.0)


def test_low_noise_init_keeps_encoding_informative():
    # a near-identity encoding carries most of the observation's information
    rng = np.random.default_rng(15)
    actor = small_actor(rng, widths=(1,), action_dims=(2,))
    bits = rng.integers(0, 2, size=(2048, 1)).astype(float)
    step = actor.act({"c0": bits}, actor.initial_hidden(2048), rng)
    from rirl.mi import measure_mi
    context = np.concatenate([bits, step.hidden_before.data], axis=-1)
    est = measure_mi(step.encodings["c0"].data, context,
                     np.random.default_rng(16), steps=300)
    assert est > 0.5  # close to the ln 2 content of the bit


# --- attention penalties ------------------------------------------------------


def test_two_state_channel_penalty_matches_quadrature_oracle():
    rng = np.random.default_rng(17)
    actor = small_actor(rng, widths=(1,), action_dims=(2,))
    final = actor.encoders["c0"].layers[-1]
    final.weight.data[:] = 0.0
    final.bias.data[:1] = 0.0
    sigma = 0.35
    final.bias.data[1:] = math.log(sigma)

    # exact MI of y = o + sigma*eps with o ~ Bernoulli(1/2) by quadrature
    grid = np.linspace(-4, 5, 8001)
    comp0 = np.exp(-0.5 * (grid / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))
    comp1 = np.exp(-0.5 * ((grid - 1) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))
    mix = 0.5 * comp0 + 0.5 * comp1
    h_y = -np.trapezoid(np.where(mix > 0, mix * np.log(mix + 1e-300), 0.0), grid)
    h_y_given_o = 0.5 * math.log(2 * math.pi * math.e * sigma ** 2)
    exact = h_y - h_y_given_o

    bits = rng.integers(0, 2, size=(4096, 1)).astype(float)
    step = actor.act({"c0": bits}, actor.initial_hidden(4096), rng)
    context = np.concatenate([bits, step.hidden_before.data], axis=-1)
    disc = MiDiscriminator(1, context.shape[1], np.random.default_rng(18))
    fit_discriminator(disc, step.encodings["c0"].data, context,
                      np.random.default_rng(19), steps=600, lr_decay=True)
    penalties = attention_penalties(step, actor.channels, {"c0": disc})
    assert penalties["c0"].mean() == pytest.approx(exact, abs=0.05)


def test_penalties_reported_only_for_instrumented_channels():
    rng = np.random.default_rng(20)
    actor = small_actor(rng)
    obs = random_obs(actor, 8, rng)
    step = actor.act(obs, actor.initial_hidden(8), rng)
    disc = MiDiscriminator(3, 3 + actor.hidden_size, rng)
    penalties = attention_penalties(step, actor.channels, {"c0": disc})
    assert set(penalties) == {"c0"}
    assert penalties["c0"].shape == (8,)


def test_decoder_penalty_shape():
    rng = np.random.default_rng(21)
    actor = small_actor(rng, action_dims=(4, 3))
    obs = random_obs(actor, 6, rng)
    step = actor.act(obs, actor.initial_hidden(6), rng)
    dec_disc = MiDiscriminator(7, actor.total_width + actor.hidden_size, rng)
    penalties = attention_penalties(step, actor.channels, {},
                                    decoder_disc=dec_disc,
                                    action_dims=actor.action_dims)
    assert penalties["decoder"].shape == (6,)
    onehot = one_hot_actions(step.actions, actor.action_dims)
    assert onehot.shape == (6, 7)
    assert np.allclose(onehot.sum(axis=-1), 2.0)


# --- serialization -------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(22)
    actor = small_actor(rng, widths=(3, 2), action_dims=(4, 2))
    path = tmp_path / "actor.rirl"
    actor.save(path)
    clone = RirlActor.load(path)
    obs = random_obs(actor, 8, np.random.default_rng(23))
    s1 = actor.act(obs, actor.initial_hidden(8), np.random.default_rng(24))
    s2 = clone.act(obs, clone.initial_hidden(8), np.random.default_rng(24))
    assert np.array_equal(s1.actions, s2.actions)
    assert np.array_equal(s1.log_pi.data, s2.log_pi.data)
    # header is JSON-parseable and carries the channel/cost layout
    import json
    import struct
    raw = path.read_bytes()
    length = struct.unpack("<I", raw[4:8])[0]
    header = json.loads(raw[8:8 + length])
    assert header["channels"][0]["name"] == "c0"
    assert header["action_dims"] == [4, 2]
