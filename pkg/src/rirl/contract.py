"""Single-step principal-agent game: the Principal posts a per-output-level
Gaussian payment schedule, a quantal-response Agent picks effort, stochastic
output maps to stochastic pay, and the Principal's reward carries an
attention cost on the information the payment reveals about output.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .mi import MiDiscriminator, PairBatch, make_factorized, measure_mi
from .optim import Adam
from .tape import Tensor, logsumexp, parameter
from .training import anneal_lambda

SIGMA_MIN = 0.05
SIGMA_MAX = 5.0
MU_MIN = 0.0
MU_MAX = 20.0
WAGE_SCALE = 5.0  # discriminator input scaling


@dataclass
class OutputGrid:
    levels: np.ndarray = field(
        default_factory=lambda: np.arange(11, dtype=np.float64))
    efforts: np.ndarray = field(
        default_factory=lambda: np.arange(11, dtype=np.float64))

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=np.float64)
        self.efforts = np.asarray(self.efforts, dtype=np.float64)
        if self.levels.size == 0 or np.any(np.diff(self.levels) <= 0):
            raise ValueError("output levels must be non-empty, strictly increasing")
        if not np.all(np.isin(self.efforts, self.levels)):
            raise ValueError("effort levels must be a subset of output levels")


@dataclass
class PaySchedule:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.mu.shape != self.sigma.shape:
            raise ValueError("mu and sigma must align with the output grid")
        if not (np.all(np.isfinite(self.mu)) and np.all(np.isfinite(self.sigma))):
            raise ValueError("schedule parameters must be finite")
        if np.any(self.sigma < SIGMA_MIN - 1e-12) or np.any(self.sigma > SIGMA_MAX + 1e-12):
            raise ValueError(f"sigma must lie in [{SIGMA_MIN}, {SIGMA_MAX}]")

    @property
    def range(self) -> float:
        return float(self.mu.max() - self.mu.min())


@dataclass
class QuantalAgent:
    beta: float = 5.0            # rationality; math.inf = exact best response
    rho: float = 2.0             # CRRA curvature
    samples: int = 100           # schedule draws per output level
    effort_cost: float = 0.08    # work disutility per effort unit

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")


def output_distribution(effort: float, grid: OutputGrid) -> np.ndarray:
    """p(z|e): 0.7 at z = e, exponentially decaying elsewhere, normalized."""
    if effort not in grid.efforts:
        raise ValueError(f"effort {effort} outside the grid")
    distance = np.abs(grid.levels - effort)
    off = 0.7 ** distance
    off[distance == 0] = 0.0
    probs = 0.3 * off / off.sum()
    probs[distance == 0] = 0.7
    return probs


def output_matrix(grid: OutputGrid) -> np.ndarray:
    """Rows: p(z|e) for every effort level."""
    return np.stack([output_distribution(e, grid) for e in grid.efforts])


def crra(x, rho: float):
    """Concave income utility, offset so crra(0) = 0 and finite at zero income.

    rho = 2 gives 1 - 1/(1+x); rho = 1 gives ln(1+x).
    """
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        warnings.warn("negative income clamped to 0", RuntimeWarning)
        x = np.clip(x, 0.0, None)
    if rho == 1.0:
        out = np.log1p(x)
    else:
        out = ((x + 1.0) ** (1.0 - rho) - 1.0) / (1.0 - rho)
    return out if out.ndim else float(out)


def _crra_tensor(x: Tensor, rho: float) -> Tensor:
    if rho == 1.0:
        return (x + 1.0).log()
    return ((x + 1.0) ** (1.0 - rho) - 1.0) * (1.0 / (1.0 - rho))


def expected_income_utility(schedule: PaySchedule, agent: QuantalAgent,
                            rng: np.random.Generator) -> np.ndarray:
    """Mean crra(pay) per output level from `samples` schedule draws;
    negative draws are clamped (the Principal pays the clamped amount)."""
    draws = schedule.mu + schedule.sigma * rng.standard_normal(
        (agent.samples, schedule.mu.size))
    return crra(np.clip(draws, 0.0, None), agent.rho).mean(axis=0)


def agent_utilities(schedule: PaySchedule, agent: QuantalAgent,
                    grid: OutputGrid, rng: np.random.Generator) -> np.ndarray:
    """Expected utility of each effort: E[crra(w)] - effort_cost * e."""
    income = expected_income_utility(schedule, agent, rng)
    p_matrix = output_matrix(grid)
    return p_matrix @ income - agent.effort_cost * grid.efforts


def quantal_response(utilities: np.ndarray, beta: float) -> np.ndarray:
    """Softmax over beta-scaled utilities; beta = inf is the exact argmax
    with lowest-effort tie-breaking."""
    if math.isinf(beta):
        probs = np.zeros_like(utilities)
        probs[np.argmax(utilities)] = 1.0
        return probs
    scaled = beta * (utilities - utilities.max())
    expd = np.exp(scaled)
    return expd / expd.sum()


def agent_policy(schedule: PaySchedule, agent: QuantalAgent, grid: OutputGrid,
                 rng: np.random.Generator) -> np.ndarray:
    return quantal_response(agent_utilities(schedule, agent, grid, rng),
                            agent.beta)


def sample_interactions(schedule: PaySchedule, policy: np.ndarray,
                        grid: OutputGrid, n: int, rng: np.random.Generator):
    """Draw n (effort, output, wage) triples from the generative chain."""
    p_matrix = output_matrix(grid)
    efforts_idx = np.searchsorted(np.cumsum(policy), rng.random(n))
    efforts_idx = np.minimum(efforts_idx, policy.size - 1)
    cdf = np.cumsum(p_matrix, axis=1)
    outputs_idx = (rng.random((n, 1)) > cdf[efforts_idx]).sum(axis=1)
    wages = (schedule.mu[outputs_idx]
             + schedule.sigma[outputs_idx] * rng.standard_normal(n))
    return efforts_idx, outputs_idx, wages


def gaussian_entropy(sigma: np.ndarray) -> np.ndarray:
    return 0.5 * np.log(2.0 * math.pi * math.e * np.asarray(sigma) ** 2)


def principal_reward(schedule: PaySchedule, agent: QuantalAgent,
                     grid: OutputGrid, lam: float, n: int,
                     disc: MiDiscriminator | None, rng: np.random.Generator,
                     condition: str = "mi"):
    """N-sample attention-adjusted reward estimate plus the sampled tuples.

    Profit is output minus the (clamped) amount paid; the MI condition
    subtracts lam * pointwise log-ratio, the entropy condition adds
    lam * differential entropy of the sampled level's payment."""
    if n < 1:
        raise ValueError("need at least one sample")
    policy = agent_policy(schedule, agent, grid, rng)
    efforts_idx, outputs_idx, wages = sample_interactions(
        schedule, policy, grid, n, rng)
    pay = np.clip(wages, 0.0, None)
    outputs = grid.levels[outputs_idx]
    u_p = outputs - pay
    if condition == "mi":
        if disc is None:
            penalty = np.zeros(n)
        else:
            penalty = disc.logits(wages[:, None] / WAGE_SCALE,
                                  _one_hot(outputs_idx, grid.levels.size))
        reward = u_p - lam * penalty
    elif condition == "entropy":
        penalty = -gaussian_entropy(schedule.sigma[outputs_idx])
        reward = u_p - lam * penalty
    else:
        raise ValueError(f"unknown condition {condition!r}")
    samples = {"effort": grid.efforts[efforts_idx], "output": outputs,
               "wage": wages, "pay": pay, "u_p": u_p, "penalty": penalty}
    return float(reward.mean()), samples


def entropy_regularized_reward(schedule: PaySchedule, agent: QuantalAgent,
                               grid: OutputGrid, lam: float, n: int,
                               rng: np.random.Generator):
    """Baseline condition: the attention term swapped for an entropy bonus."""
    return principal_reward(schedule, agent, grid, lam, n, disc=None, rng=rng,
                            condition="entropy")


def zero_pay_utility(agent: QuantalAgent, grid: OutputGrid,
                     rng: np.random.Generator) -> float:
    """Expected profit of the constant zero-pay schedule: the Principal's
    lower bound under attention costs."""
    schedule = PaySchedule(np.zeros(grid.levels.size),
                           np.full(grid.levels.size, SIGMA_MIN))
    policy = agent_policy(schedule, agent, grid, rng)
    expected_z = policy @ (output_matrix(grid) @ grid.levels)
    return float(expected_z)


def _one_hot(idx: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((idx.size, n))
    out[np.arange(idx.size), idx] = 1.0
    return out


# -- schedule learning ---------------------------------------------------------


@dataclass
class ContractConfig:
    beta: float = 5.0
    lam: float = 0.0
    condition: str = "mi"            # "mi" | "entropy"
    rho: float = 2.0
    effort_cost: float = 0.08
    schedule_samples: int = 100
    batch_size: int = 128
    total_batches: int = 100000
    policy_lr: float = 1e-3
    disc_lr: float = 5e-3
    anneal_rate: float = 4.0 / 10000.0
    beta_train_cap: float = 10.0     # effort-score smoothing for beta = inf
    seed: int = 0
    eval_samples: int = 4096
    mu_init: float = 1.0
    sigma_init: float = 1.0
    log_every: int = 50

    def grid(self) -> OutputGrid:
        return OutputGrid()

    def agent(self) -> QuantalAgent:
        return QuantalAgent(beta=self.beta, rho=self.rho,
                            samples=self.schedule_samples,
                            effort_cost=self.effort_cost)


@dataclass
class ContractResult:
    schedule: PaySchedule
    metrics: list[dict]
    summary: dict


def learn_schedule(config: ContractConfig) -> ContractResult:
    """REINFORCE on the N-sample attention-adjusted reward.

    The score has two parts: the sampled wage's log-density under its level's
    Gaussian, and the sampled effort's log-probability under the quantal
    response (computed on-tape through the schedule's effect on expected
    utilities; for beta = inf the effort score uses a capped-beta surrogate,
    evaluation always uses the exact policy)."""
    grid = config.grid()
    agent = config.agent()
    n_levels = grid.levels.size
    master = np.random.default_rng(config.seed)
    rng_env, rng_disc, rng_eval = master.spawn(3)

    mu = parameter(np.full(n_levels, config.mu_init))
    log_sigma = parameter(np.full(n_levels, math.log(config.sigma_init)))
    opt = Adam([mu, log_sigma], lr=config.policy_lr)
    disc = (MiDiscriminator(1, n_levels, rng_disc, lr=config.disc_lr)
            if config.condition == "mi" else None)
    p_matrix = output_matrix(grid)
    p_cdf = np.cumsum(p_matrix, axis=1)
    beta_train = min(config.beta, config.beta_train_cap)
    metrics: list[dict] = []

    for batch in range(config.total_batches):
        lam_eff = (anneal_lambda(batch, config.lam, config.anneal_rate)
                   if config.lam > 0 else 0.0)
        sigma = log_sigma.clip(math.log(SIGMA_MIN), math.log(SIGMA_MAX)).exp()

        # expected utility per effort, on tape (reparameterized draws)
        eps = rng_env.standard_normal((agent.samples, n_levels))
        income = _crra_tensor((mu + sigma * eps).relu0(), agent.rho).mean(axis=0)
        u_e = Tensor(p_matrix) @ income - agent.effort_cost * grid.efforts
        log_pi_e = u_e * beta_train - logsumexp(u_e * beta_train)

        # sample the interaction chain (capped-beta exploration when beta=inf)
        probs = np.exp(log_pi_e.data)
        e_idx = np.minimum(np.searchsorted(np.cumsum(probs),
                                           rng_env.random(config.batch_size)),
                           n_levels - 1)
        z_idx = (rng_env.random((config.batch_size, 1))
                 > p_cdf[e_idx]).sum(axis=1)
        eps_w = rng_env.standard_normal(config.batch_size)
        wages = mu.data[z_idx] + sigma.data[z_idx] * eps_w
        pay = np.clip(wages, 0.0, None)
        u_p = grid.levels[z_idx] - pay

        if config.condition == "mi":
            onehot_z = _one_hot(z_idx, n_levels)
            joint = PairBatch(wages[:, None] / WAGE_SCALE, onehot_z)
            disc.train_step(joint, make_factorized(joint, rng_disc))
            penalty = disc.logits(wages[:, None] / WAGE_SCALE, onehot_z)
            reward = u_p - lam_eff * penalty
        else:
            penalty = -gaussian_entropy(sigma.data[z_idx])
            reward = u_p - lam_eff * penalty

        advantage = reward - reward.mean()
        mu_sel = mu[z_idx]
        ls_sel = log_sigma.clip(math.log(SIGMA_MIN), math.log(SIGMA_MAX))[z_idx]
        zscore = (Tensor(wages) - mu_sel) * (-ls_sel).exp()
        log_n = zscore * zscore * -0.5 - ls_sel - 0.5 * math.log(2 * math.pi)
        score = log_n + log_pi_e[e_idx]
        loss = (score * advantage).mean() * -1.0
        if config.condition == "entropy":
            # the entropy bonus is a direct function of the schedule's sigma,
            # so it enters the objective pathwise, not through the score
            loss = loss - lam_eff * (ls_sel + 0.5 * math.log(2 * math.pi * math.e)).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
        np.clip(mu.data, MU_MIN, MU_MAX, out=mu.data)
        np.clip(log_sigma.data, math.log(SIGMA_MIN), math.log(SIGMA_MAX),
                out=log_sigma.data)

        if batch % config.log_every == 0 or batch == config.total_batches - 1:
            metrics.append({
                "batch": batch, "lambda_eff": lam_eff,
                "mean_u_p": float(u_p.mean()),
                "mean_penalty": float(penalty.mean()),
                "mean_agent_utility": float(probs @ u_e.data),
                "schedule_range": float(mu.data.max() - mu.data.min()),
                "mean_sigma": float(sigma.data.mean()),
                "seed": config.seed,
            })

    schedule = PaySchedule(mu.data.copy(),
                           np.clip(np.exp(log_sigma.data), SIGMA_MIN, SIGMA_MAX))
    summary = evaluate_schedule(schedule, config, rng_eval)
    return ContractResult(schedule, metrics, summary)


def evaluate_schedule(schedule: PaySchedule, config: ContractConfig,
                      rng: np.random.Generator) -> dict:
    """Measurement pass with the exact agent policy and a fresh estimator."""
    grid = config.grid()
    agent = config.agent()
    rng_pol, rng_samp, rng_mi = rng.spawn(3)
    utilities = agent_utilities(schedule, agent, grid, rng_pol)
    policy = quantal_response(utilities, config.beta)
    e_idx, z_idx, wages = sample_interactions(schedule, policy, grid,
                                              config.eval_samples, rng_samp)
    pay = np.clip(wages, 0.0, None)
    u_p = grid.levels[z_idx] - pay
    mi_wz = measure_mi(wages[:, None] / WAGE_SCALE,
                       _one_hot(z_idx, grid.levels.size), rng_mi, steps=300)
    return {
        "beta": config.beta, "lam": config.lam, "condition": config.condition,
        "seed": config.seed,
        "mean_u_p": float(u_p.mean()),
        "mean_u_a": float(policy @ utilities),
        "mean_wage": float(pay.mean()),
        "mean_effort": float(grid.efforts[e_idx].mean()),
        "mi_wz": float(mi_wz),
        "schedule_range": schedule.range,
    }


# -- theoretical-form fit --------------------------------------------------------


@dataclass
class MirrleesFit:
    A: float
    B: float
    C: float
    rho: float
    r2: float


def fit_mirrlees(schedule: PaySchedule | np.ndarray,
                 levels: np.ndarray | None = None) -> MirrleesFit:
    """Nonlinear least squares of mu_z against max(A z + B, C)^(1/rho).

    Flat schedules are reported as A ~ 0 with r2 = 1 (no variance to explain).
    When the C branch never binds on the grid, C is canonicalized to the
    smallest fitted linear value, the boundary of the equivalence class."""
    mu = schedule.mu if isinstance(schedule, PaySchedule) else np.asarray(schedule)
    z = np.arange(mu.size, dtype=np.float64) if levels is None else levels
    if mu.size < 4:
        raise ValueError("need at least 4 levels to fit")
    ss_tot = float(((mu - mu.mean()) ** 2).sum())
    if ss_tot < 1e-12:
        return MirrleesFit(0.0, float(mu.mean()), float(mu.mean()), 1.0, 1.0)

    def residual(params):
        a, b, c, rho = params
        base = np.maximum(np.maximum(a * z + b, c), 1e-9)
        return base ** (1.0 / rho) - mu

    best = None
    for rho0 in (0.5, 1.0, 2.0, 4.0):
        slope = max((mu[-1] - mu[0]) / max(z[-1] - z[0], 1.0), 1e-3)
        x0 = np.array([slope ** rho0, max(mu[0], 1e-3) ** rho0,
                       max(mu.min(), 1e-3) ** rho0 * 0.5, rho0])
        try:
            fit = least_squares(residual, x0, bounds=(
                [-np.inf, -np.inf, -np.inf, 0.05], [np.inf, np.inf, np.inf, 20.0]))
        except ValueError:
            continue
        if best is None or fit.cost < best.cost:
            best = fit
    a, b, c, rho = best.x
    if c <= (a * z + b).min():  # inactive kink: report the boundary value
        c = float((a * z + b).min())
    ss_res = float((residual([a, b, c, rho]) ** 2).sum())
    return MirrleesFit(float(a), float(b), float(c), float(rho),
                       1.0 - ss_res / ss_tot)
