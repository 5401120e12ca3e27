import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rirl.optim import Adam
from rirl.policy import ChannelSpec, RirlActor
from rirl.team import TeamConfig, TeamEnv
from rirl.tape import Tensor
from rirl.training import (TrainConfig, Trajectory, anneal_lambda,
                           discounted_returns, entropy_coefficient,
                           policy_gradient_step, train)


def naive_returns(rewards, gamma):
    T = len(rewards)
    return [sum(gamma ** k * rewards[t + k] for k in range(T - t))
            for t in range(T)]


# --- returns and annealing -------------------------------------------------


def test_returns_gamma_zero_is_identity():
    r = np.array([[0.3, -1.0, 2.0]])
    assert np.array_equal(discounted_returns(r, 0.0), r)


def test_returns_geometric_example():
    out = discounted_returns(np.array([1.0, 1.0, 1.0]), 0.9)
    assert np.allclose(out, [2.71, 1.9, 1.0])


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=12),
       st.floats(0, 1))
@settings(max_examples=60, deadline=None)
def test_returns_match_naive_double_loop(rewards, gamma):
    ours = discounted_returns(np.array(rewards), gamma)
    assert np.allclose(ours, naive_returns(rewards, gamma), atol=1e-9)


def test_returns_rejects_non_finite():
    with pytest.raises(ValueError):
        discounted_returns(np.array([1.0, np.inf]), 0.9)


def test_anneal_examples():
    assert anneal_lambda(0, 3.0, 4 / 10000) == 0.0
    assert anneal_lambda(2500, 3.0, 4 / 10000) == pytest.approx(1.0)
    assert anneal_lambda(10**6, 3.0, 4 / 10000) == 3.0
    with pytest.raises(ValueError):
        anneal_lambda(5, 1.0, 0.0)


def test_entropy_coefficient_anneals_to_zero():
    total = 300
    values = [entropy_coefficient(b, total, 0.01) for b in range(total + 1)]
    assert values[0] == pytest.approx(0.01)
    assert values[total // 2] == pytest.approx(0.01)
    assert values[total] == pytest.approx(0.0)
    assert all(a >= b - 1e-12 for a, b in zip(values, values[1:]))


# --- policy gradient step -----------------------------------------------------


def bandit_actor(seed=0, n_actions=2):
    rng = np.random.default_rng(seed)
    return RirlActor([ChannelSpec("obs", 1)], [n_actions], rng,
                     hidden_size=4, enc_hidden=8, dec_hidden=8)


def bandit_trajectory(actor, batch, rng, reward_fn):
    obs = {"obs": np.zeros((batch, 1))}
    step = actor.act(obs, actor.initial_hidden(batch), rng)
    rewards = reward_fn(step.actions[:, 0]).reshape(batch, 1)
    return Trajectory([step], rewards, {}, {}).finalize(gamma=1.0)


def test_constant_advantage_gives_zero_step():
    actor = bandit_actor()
    before = [p.data.copy() for p in actor.parameters()]
    opt = Adam(actor.parameters(), lr=0.1)
    rng = np.random.default_rng(1)
    traj = bandit_trajectory(actor, 16, rng, lambda a: np.ones_like(a, float))
    policy_gradient_step(actor, traj, opt)
    for p, b in zip(actor.parameters(), before):
        assert np.allclose(p.data, b, atol=1e-12)


def test_zero_learning_rate_freezes():
    actor = bandit_actor()
    before = [p.data.copy() for p in actor.parameters()]
    opt = Adam(actor.parameters(), lr=0.0)
    rng = np.random.default_rng(2)
    traj = bandit_trajectory(actor, 16, rng,
                             lambda a: (a == 0).astype(float))
    policy_gradient_step(actor, traj, opt)
    for p, b in zip(actor.parameters(), before):
        assert np.array_equal(p.data, b)


def test_bandit_converges_to_better_arm():
    actor = bandit_actor(seed=3)
    opt = Adam(actor.parameters(), lr=0.05)
    rng = np.random.default_rng(4)
    for _ in range(300):
        traj = bandit_trajectory(actor, 32, rng,
                                 lambda a: (a == 0).astype(float))
        policy_gradient_step(actor, traj, opt)
    counts = np.zeros(2)
    for _ in range(20):
        step = actor.act({"obs": np.zeros((32, 1))},
                         actor.initial_hidden(32), rng)
        counts += np.bincount(step.actions[:, 0], minlength=2)
    assert counts[0] / counts.sum() > 0.99


def test_reward_scaling_scales_gradient_linearly():
    actor = bandit_actor(seed=5)
    rng_state = np.random.default_rng(6)
    obs = {"obs": np.zeros((8, 1))}
    step = actor.act(obs, actor.initial_hidden(8), rng_state)
    rewards = (step.actions[:, 0] == 0).astype(float).reshape(8, 1)

    def grad_with_scale(scale):
        traj = Trajectory([step], rewards, {}, {}).finalize(1.0, scale)
        actor.zero_grad()
        baseline = traj.returns.mean(axis=0, keepdims=True)
        loss = (step.log_pi * (traj.returns - baseline)[:, 0]).sum() * (-1 / 8)
        loss.backward()
        return [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in actor.parameters()]

    g1 = grad_with_scale(1.0)
    g5 = grad_with_scale(0.2)
    for a, b in zip(g1, g5):
        assert np.allclose(0.2 * a, b, atol=1e-12)


# --- trajectory bookkeeping ----------------------------------------------------


def test_trajectory_ri_identity_and_scaling():
    rng = np.random.default_rng(7)
    u = rng.normal(size=(6, 4))
    pen = {"output": rng.normal(size=(6, 4)), "effort": rng.normal(size=(6, 4))}
    lam = {"output": 2.0, "effort": 0.5}
    traj = Trajectory([], u, pen, lam).finalize(gamma=1.0, scale=0.25)
    expected = u - 2.0 * pen["output"] - 0.5 * pen["effort"]
    assert np.allclose(traj.ri_utilities, expected, atol=1e-12)
    assert np.allclose(traj.rewards, expected * 0.25, atol=1e-12)


def test_trainconfig_defaults_and_validation():
    cfg = TrainConfig(policy_lr=2e-4)
    assert cfg.disc_lr == pytest.approx(2e-3)  # 10x by default
    with pytest.raises(ValueError):
        TrainConfig(gamma=1.5)
    with pytest.raises(ValueError):
        TrainConfig(lambda_targets={"output": -1.0})


# --- end-to-end trainer properties ------------------------------------------------


def tiny_env():
    return TeamEnv(TeamConfig(n_agents=2, horizon=3))


def tiny_config(**kwargs):
    defaults = dict(batch_size=8, total_batches=4, horizon=3, seed=0,
                    policy_lr=1e-3, eval_episodes=8, hidden_size=8,
                    enc_hidden=8, dec_hidden=8)
    defaults.update(kwargs)
    return TrainConfig(**defaults)


def test_zero_batches_returns_actors_unchanged():
    env = tiny_env()
    rng = np.random.default_rng(8)
    principal = RirlActor(env.principal_channel_specs({}),
                          [len(env.wage_grid)] * 2, rng, hidden_size=8,
                          enc_hidden=8, dec_hidden=8)
    agent = RirlActor(env.agent_channel_specs(), [env.agent_action_dim], rng,
                      hidden_size=8, enc_hidden=8, dec_hidden=8)
    before_p = [p.data.copy() for p in principal.parameters()]
    before_a = [p.data.copy() for p in agent.parameters()]
    result = train(tiny_config(total_batches=0), env, principal, agent)
    for p, b in zip(result.principal.parameters(), before_p):
        assert np.array_equal(p.data, b)
    for p, b in zip(result.agent.parameters(), before_a):
        assert np.array_equal(p.data, b)


def test_training_deterministic_given_seed():
    r1 = train(tiny_config(lambda_targets={"output": 1.0}), tiny_env())
    r2 = train(tiny_config(lambda_targets={"output": 1.0}), tiny_env())
    assert r1.metrics == r2.metrics
    assert r1.eval_rows == r2.eval_rows


def test_lambda_zero_reduces_to_plain_reinforce():
    # with no attention costs the penalty terms contribute exactly 0
    env = tiny_env()
    cfg = tiny_config(lambda_targets={"output": 0.0, "effort": 0.0})
    result = train(cfg, env)
    for row in result.metrics:
        if row["actor"] == "principal":
            assert row["mean_RI_utility"] == pytest.approx(
                row["mean_utility"] / cfg.horizon, abs=1e-12)


def test_reward_scaling_flag_logged_relation():
    env = tiny_env()
    scaled = train(tiny_config(reward_scaling=True), env)
    raw = train(tiny_config(reward_scaling=False), env)
    for rs, rr in zip(scaled.metrics, raw.metrics):
        assert rs["mean_RI_utility"] == pytest.approx(
            rr["mean_RI_utility"] / 3.0, abs=1e-9)


def test_shared_agent_batch_concatenates_experiences():
    # the agent trajectory carries batch * n_agents rows
    env = tiny_env()
    cfg = tiny_config()
    result = train(cfg, env)
    assert result.eval_summary["mean_u_a"] == pytest.approx(
        np.mean([r["u_a"] for r in result.eval_rows]))
    agents = {r["agent_id"] for r in result.eval_rows}
    assert agents == {0, 1}


def test_metric_log_columns():
    result = train(tiny_config(lambda_targets={"output": 2.0}), tiny_env())
    principal_rows = [r for r in result.metrics if r["actor"] == "principal"]
    row = principal_rows[0]
    for column in ("batch", "actor", "mean_utility", "mean_RI_utility",
                   "mi_output", "mi_effort", "lambda_output", "entropy",
                   "seed"):
        assert column in row
    assert row["lambda_output"] == 0.0  # annealing starts at zero
