"""Policy-gradient training with attention-adjusted rewards.

One batch = collect rollouts, update every discriminator once, recompute the
pointwise penalties with the fresh discriminators, then take one ascent step
per actor on sum_t log pi_t * (return_t - baseline_t).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mi import MiDiscriminator, PairBatch, make_factorized
from .optim import Adam
from .policy import ActStep, RirlActor, attention_penalties
from .tape import Tensor


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    policy_lr: float = 1e-4
    agent_lr: float | None = None  # defaults to the principal's rate; a faster
    # agent keeps the best-response fresh against an exploiting principal
    disc_lr: float | None = None  # defaults to 10x the policy rate
    batch_size: int = 512
    total_batches: int = 60000
    gamma: float = 1.0
    lambda_targets: dict[str, float] = field(default_factory=dict)
    anneal_rate: float = 4.0 / 10000.0
    horizon: int = 5
    seed: int = 0
    reward_scaling: bool = True
    entropy_coef: float = 0.01
    explore_eps: float = 0.05  # uniform decoder floor, annealed with entropy
    principal_explore_eps: float | None = None  # defaults to explore_eps
    agent_anneal_fraction: float = 0.5  # the agent's exploration anneals out
    # earlier so the principal's final phase optimizes against the final agent
    checkpoint_every: int = 0  # 0: final checkpoint only
    eval_episodes: int = 128
    hidden_size: int = 32
    enc_hidden: int = 64
    dec_hidden: int = 64
    use_decoder_penalty: bool = False
    normalize_advantages: bool = True  # divide by the per-timestep batch std
    linear_baseline: bool = True       # per-batch least-squares return fit
    low_variance_gradients: bool = True  # decoder-score + pathwise-encoder
    # estimator instead of the full factorized score: same expected gradient,
    # without the 1/sigma score noise that makes small-noise encoders drift
    encoder_decay: float = 1e-3        # per-batch multiplicative shrink of the
    # encoder mean-head parameters: the log-density score lets encoder means
    # random-walk without bound (the decoder chases, so the direction is
    # reward-neutral); decoupled decay anchors y near o without fighting real,
    # lambda-scaled incentives to blur
    principal_warmup: int = 0  # batches of agent-only updates: the agent must
    # learn its wage response before the principal's pay gradient is meaningful,
    # or both collapse into the no-pay/no-work equilibrium at desk scale

    def __post_init__(self):
        if self.agent_lr is None:
            self.agent_lr = self.policy_lr
        if self.principal_explore_eps is None:
            self.principal_explore_eps = self.explore_eps
        if self.disc_lr is None:
            self.disc_lr = 10.0 * self.policy_lr
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if any(v < 0 or not np.isfinite(v) for v in self.lambda_targets.values()):
            raise ValueError("lambda targets must be finite and nonnegative")


@dataclass
class Trajectory:
    """Batched per-actor record of one rollout collection."""
    steps: list[ActStep]
    utilities: np.ndarray                 # (B, T) raw u_t
    penalties: dict[str, np.ndarray]      # channel -> (B, T) pointwise nats
    lambdas: dict[str, float]             # effective lambda per channel
    ri_utilities: np.ndarray = None       # (B, T) u_t - sum lambda * penalty
    rewards: np.ndarray = None            # (B, T) training rewards
    returns: np.ndarray = None            # (B, T) discounted

    def finalize(self, gamma: float, scale: float = 1.0) -> "Trajectory":
        self.ri_utilities = self.utilities.copy()
        for name, pen in self.penalties.items():
            self.ri_utilities -= self.lambdas.get(name, 0.0) * pen
        self.rewards = self.ri_utilities * scale
        self.returns = discounted_returns(self.rewards, gamma)
        return self


def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """R_t = sum_k gamma^k r_{t+k}, along the last axis."""
    r = np.asarray(rewards, dtype=np.float64)
    if not np.all(np.isfinite(r)):
        raise ValueError("rewards must be finite")
    out = np.empty_like(r)
    acc = np.zeros(r.shape[:-1])
    for t in range(r.shape[-1] - 1, -1, -1):
        acc = r[..., t] + gamma * acc
        out[..., t] = acc
    return out


def anneal_lambda(batch_index: int, target: float, rate: float) -> float:
    """Linear warm-up capped at the target."""
    if rate <= 0:
        raise ValueError("anneal rate must be positive")
    return min(target, batch_index * rate)


def _linear_baseline(returns_t: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Closed-form least-squares fit of the batch's returns on the step's
    observation features. Action-independent, so the expectation of the
    gradient is unchanged; it removes the context-driven return variance the
    plain batch mean cannot."""
    x = features - features.mean(axis=0, keepdims=True)
    y = returns_t - returns_t.mean()
    gram = x.T @ x + 1e-6 * np.eye(x.shape[1])
    coef = np.linalg.solve(gram, x.T @ y)
    return returns_t.mean() + x @ coef


def _step_features(step: ActStep) -> np.ndarray:
    return np.concatenate([np.asarray(v, dtype=np.float64)
                           for v in step.observations.values()], axis=-1)


def decay_encoder_means(actor: RirlActor, rate: float) -> None:
    """Shrink each encoder's mean-head output parameters toward zero (the
    residual-identity point). Applied after the optimizer step so adaptive
    scaling cannot swallow it."""
    if rate <= 0.0:
        return
    factor = 1.0 - rate
    for spec in actor.channels:
        final = actor.encoders[spec.name].layers[-1]
        final.weight.data[:, :spec.width] *= factor
        final.bias.data[:spec.width] *= factor


def policy_gradient_step(actor: RirlActor, trajectory: Trajectory,
                         optimizer: Adam, entropy_coef: float = 0.0,
                         normalize: bool = False,
                         linear_baseline: bool = False,
                         encoder_decay: float = 0.0,
                         score: str = "log_pi",
                         extra_loss: Tensor | None = None) -> float:
    """One ascent step on the trajectory batch; returns the pre-update mean
    episode return (training scale). Baseline: per-timestep batch mean,
    optionally refined by a per-batch linear fit on observation features and
    scaled by the residual std (neither changes the gradient's expectation).

    `score` picks the likelihood term: "log_pi" is the full factorized
    density (decoder score plus encoder log-density scores); "log_w" keeps
    the decoder score only and leaves encoder learning to the pathwise route
    through the sampled encodings (same expected gradient, far lower variance
    when encoder noise is small). `extra_loss` carries pathwise terms such as
    the attention penalty evaluated through the discriminator."""
    if linear_baseline:
        baseline = np.stack(
            [_linear_baseline(trajectory.returns[:, t], _step_features(step))
             for t, step in enumerate(trajectory.steps)], axis=1)
    else:
        baseline = trajectory.returns.mean(axis=0, keepdims=True)
    advantage = trajectory.returns - baseline
    if normalize:
        advantage = advantage / (advantage.std(axis=0, keepdims=True) + 1e-8)
    batch = trajectory.returns.shape[0]
    loss = Tensor(np.zeros(()))
    for t, step in enumerate(trajectory.steps):
        likelihood = step.log_pi if score == "log_pi" else step.log_w
        loss = loss + (likelihood * advantage[:, t]).sum() * (-1.0 / batch)
        if entropy_coef > 0.0:
            loss = loss + step.entropy.sum() * (-entropy_coef / batch)
    if extra_loss is not None:
        loss = loss + extra_loss
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    decay_encoder_means(actor, encoder_decay)
    return float(trajectory.returns[:, 0].mean())


@dataclass
class TrainResult:
    metrics: list[dict]
    eval_rows: list[dict]
    eval_summary: dict
    principal: RirlActor
    agent: RirlActor


def _collect_rollout(env, principal, agent, batch, rng_env, rng_noise,
                     p_eps=0.0, a_eps=0.0):
    """Roll one batch of episodes; returns the two step sequences plus raw
    utilities; the trainer fills in penalties afterwards."""
    state = env.reset(batch, rng_env)
    n = env.config.n_agents
    T = env.config.horizon
    hp = principal.initial_hidden(batch)
    ha = agent.initial_hidden(batch * n)
    p_steps: list[ActStep] = []
    a_steps: list[ActStep] = []
    u_p = np.zeros((batch, T))
    u_a = np.zeros((batch * n, T))
    for t in range(T):
        pobs = env.principal_obs(state)
        pstep = principal.act(pobs, hp, rng_noise, p_eps)
        hp = pstep.hidden_after
        wages = env.wage_grid[pstep.actions]                   # (B, n)
        aobs = env.agent_obs(state, wages)
        astep = agent.act({"own": aobs}, ha, rng_noise, a_eps)
        ha = astep.hidden_after
        hours, efforts = env.decode_agent_action(astep.actions[:, 0])
        up_t, ua_t = env.step(state, wages,
                              hours.reshape(batch, n), efforts.reshape(batch, n))
        u_p[:, t] = up_t
        u_a[:, t] = ua_t.reshape(batch * n)
        pstep.extras["wages"] = wages
        pstep.extras["state_t"] = t
        p_steps.append(pstep)
        a_steps.append(astep)
    return state, p_steps, a_steps, u_p, u_a


def _update_discriminators(discs: dict[str, MiDiscriminator],
                           steps: list[ActStep], rng: np.random.Generator
                           ) -> dict[str, float]:
    """One balanced step per discriminator on timestep-pooled pairs;
    factorized pairs derange encodings within each timestep."""
    losses = {}
    for name, disc in discs.items():
        joints, facts = [], []
        for step in steps:
            y = step.encodings[name].data
            ctx = np.concatenate([step.observations[name],
                                  step.hidden_before.data], axis=-1)
            joint = PairBatch(y, ctx)
            joints.append(joint)
            facts.append(make_factorized(joint, rng))
        joint_all = PairBatch(np.concatenate([b.outputs for b in joints]),
                              np.concatenate([b.contexts for b in joints]))
        fact_all = PairBatch(np.concatenate([b.outputs for b in facts]),
                             np.concatenate([b.contexts for b in facts]),
                             pairing="factorized")
        losses[name] = disc.train_step(joint_all, fact_all)
    return losses


def _measure_penalties(steps: list[ActStep], channel_specs, discs,
                       batch: int) -> dict[str, np.ndarray]:
    out = {name: np.zeros((batch, len(steps))) for name in discs}
    for t, step in enumerate(steps):
        pen = attention_penalties(step, channel_specs, discs)
        for name, values in pen.items():
            out[name][:, t] = values
    return out


def pathwise_penalty_loss(steps: list[ActStep], discs, lambdas: dict[str, float],
                          gamma: float, scale: float) -> Tensor | None:
    """The attention cost as a differentiable function of the encodings:
    sum_t gamma^t sum_k lambda_k * mean_b D_k(y_kt, [o_kt, h_t]).

    Minimizing it pushes each priced encoder toward less informative
    encodings; the discriminator parameters also receive gradients here, but
    their own training step zeroes them before use."""
    total: Tensor | None = None
    for t, step in enumerate(steps):
        weight = gamma ** t
        for name, lam in lambdas.items():
            if lam <= 0.0 or name not in discs:
                continue
            context = np.concatenate([step.observations[name],
                                      step.hidden_before.data], axis=-1)
            logit = discs[name].logits_tape(step.encodings[name], context)
            term = logit.mean() * (lam * weight * scale)
            total = term if total is None else total + term
    return total


def entropy_coefficient(batch_index: int, total: int, coef: float) -> float:
    """Constant, then annealed to zero over the last third of training."""
    if total <= 0 or coef <= 0:
        return max(coef, 0.0)
    remaining = (total - batch_index) / max(total / 3.0, 1.0)
    return coef * float(np.clip(remaining, 0.0, 1.0))


def train(config: TrainConfig, env, principal: RirlActor | None = None,
          agent: RirlActor | None = None, run_dir: str | Path | None = None,
          log_every: int = 10) -> TrainResult:
    """Train the Principal and the shared Agent actor in a team environment.

    Deterministic given the seed: all sampling flows from spawned child
    generators of one master generator.
    """
    master = np.random.default_rng(config.seed)
    rng_init, rng_env, rng_noise, rng_disc, rng_eval = master.spawn(5)
    n = env.config.n_agents

    if principal is None:
        principal = RirlActor(
            env.principal_channel_specs(config.lambda_targets),
            action_dims=[len(env.wage_grid)] * n, rng=rng_init,
            hidden_size=config.hidden_size, enc_hidden=config.enc_hidden,
            dec_hidden=config.dec_hidden)
    if agent is None:
        agent = RirlActor(env.agent_channel_specs(),
                          action_dims=[env.agent_action_dim], rng=rng_init,
                          hidden_size=config.hidden_size,
                          enc_hidden=config.enc_hidden,
                          dec_hidden=config.dec_hidden)

    discs = {
        name: MiDiscriminator(spec.width, spec.width + config.hidden_size,
                              rng_init, lr=config.disc_lr)
        for name, spec in env.instrumented_channels().items()
    }
    p_opt = Adam(principal.parameters(), lr=config.policy_lr)
    a_opt = Adam(agent.parameters(), lr=config.agent_lr)
    scale = 1.0 / config.horizon if config.reward_scaling else 1.0
    metrics: list[dict] = []
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)

    for batch_index in range(config.total_batches):
        lambdas = {name: anneal_lambda(batch_index, target, config.anneal_rate)
                   for name, target in config.lambda_targets.items()}
        agent_total = int(config.agent_anneal_fraction * config.total_batches)
        p_eps = (config.principal_explore_eps
                 * entropy_coefficient(batch_index, config.total_batches, 1.0))
        a_eps = (config.explore_eps
                 * entropy_coefficient(batch_index, agent_total, 1.0))
        _, p_steps, a_steps, u_p, u_a = _collect_rollout(
            env, principal, agent, config.batch_size, rng_env, rng_noise,
            p_eps, a_eps)
        if not (np.all(np.isfinite(u_p)) and np.all(np.isfinite(u_a))):
            dump = {"batch": batch_index, "lambdas": lambdas,
                    "u_p_finite": bool(np.all(np.isfinite(u_p))),
                    "u_a_finite": bool(np.all(np.isfinite(u_a)))}
            if run_dir is not None:
                (run_dir / "diagnostic.json").write_text(json.dumps(dump))
            raise TrainingDiverged(f"non-finite utilities at batch {batch_index}")

        _update_discriminators(discs, p_steps, rng_disc)
        penalties = _measure_penalties(p_steps, principal.channels, discs,
                                       config.batch_size)
        p_traj = Trajectory(p_steps, u_p, penalties, lambdas).finalize(
            config.gamma, scale)
        a_traj = Trajectory(a_steps, u_a, {}, {}).finalize(config.gamma, scale)

        p_coef = entropy_coefficient(batch_index, config.total_batches,
                                     config.entropy_coef)
        a_coef = entropy_coefficient(batch_index, agent_total,
                                     config.entropy_coef)
        score = "log_w" if config.low_variance_gradients else "log_pi"
        if batch_index >= config.principal_warmup:
            extra = (pathwise_penalty_loss(p_steps, discs, lambdas,
                                           config.gamma, scale)
                     if config.low_variance_gradients else None)
            p_return = policy_gradient_step(principal, p_traj, p_opt, p_coef,
                                            config.normalize_advantages,
                                            config.linear_baseline,
                                            config.encoder_decay,
                                            score=score, extra_loss=extra)
        else:
            p_return = float(p_traj.returns[:, 0].mean())
        if batch_index < agent_total:
            a_return = policy_gradient_step(agent, a_traj, a_opt, a_coef,
                                            config.normalize_advantages,
                                            config.linear_baseline,
                                            config.encoder_decay,
                                            score=score)
        else:  # frozen once its exploration is annealed out: the principal's
            # final phase then optimizes against a stationary opponent
            a_return = float(a_traj.returns[:, 0].mean())

        if batch_index % log_every == 0 or batch_index == config.total_batches - 1:
            row = {"batch": batch_index, "actor": "principal",
                   "mean_utility": float(u_p.mean()),
                   "mean_RI_utility": float(p_traj.rewards.mean()),
                   "entropy": float(np.mean([s.entropy.data.mean()
                                             for s in p_steps])),
                   "seed": config.seed, "return": p_return}
            for name in discs:
                row[f"mi_{name}"] = float(penalties[name].mean())
                row[f"lambda_{name}"] = lambdas.get(name, 0.0)
            metrics.append(row)
            metrics.append({"batch": batch_index, "actor": "agent",
                            "mean_utility": float(u_a.mean()),
                            "mean_RI_utility": float(a_traj.rewards.mean()),
                            "entropy": float(np.mean([s.entropy.data.mean()
                                                      for s in a_steps])),
                            "seed": config.seed, "return": a_return})
        if (run_dir is not None and config.checkpoint_every > 0
                and batch_index > 0
                and batch_index % config.checkpoint_every == 0):
            principal.save(run_dir / f"principal_b{batch_index}.rirl")
            agent.save(run_dir / f"agent_b{batch_index}.rirl")

    eval_rows, eval_summary = evaluate(config, env, principal, agent, discs,
                                       rng_eval)
    if run_dir is not None:
        principal.save(run_dir / "principal.rirl")
        agent.save(run_dir / "agent.rirl")
        write_metrics_csv(run_dir / "metrics.csv", metrics)
    return TrainResult(metrics, eval_rows, eval_summary, principal, agent)


def evaluate(config: TrainConfig, env, principal, agent, discs,
             rng: np.random.Generator):
    """Greedy-free evaluation rollout; logs per (episode, timestep, agent)."""
    rng_env, rng_noise = rng.spawn(2)
    batch = config.eval_episodes
    state, p_steps, a_steps, u_p, u_a = _collect_rollout(
        env, principal, agent, batch, rng_env, rng_noise)
    penalties = _measure_penalties(p_steps, principal.channels, discs, batch)
    rows = env.episode_rows(config.seed, config.lambda_targets, state,
                            p_steps, a_steps, u_p, u_a, penalties)
    n = env.config.n_agents
    summary = {
        "mean_u_p": float(u_p.mean()),
        "mean_u_a": float(u_a.mean()),
        "mean_episode_u_p": float(u_p.sum(axis=1).mean()),
        "mean_episode_u_a": float(u_a.sum(axis=1).mean()),
        "mean_wage": float(np.mean([s.extras["wages"] for s in p_steps])),
        "mean_effort": float(np.mean(
            [env.decode_agent_action(s.actions[:, 0])[1] for s in a_steps])),
    }
    for name in discs:
        summary[f"mi_{name}"] = float(penalties[name].mean())
    return rows, summary


def write_metrics_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        return
    fields: list[str] = []
    for row in rows:
        for key in row:
            if key not in fields:
                fields.append(key)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
