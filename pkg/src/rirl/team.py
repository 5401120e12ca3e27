"""Sequential multi-agent environment: hidden abilities, wage-then-work
timesteps, one free and two costly Principal observation channels.

Within a timestep the Principal sets wages first (from last step's outcomes;
zeros on the first step), then every Agent picks hours and effort knowing its
own wage. Output is hours * (ability + effort)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .contract import crra
from .policy import ActStep, ChannelSpec


@dataclass
class TeamConfig:
    n_agents: int = 4
    horizon: int = 5
    ability_levels: tuple = (1.0, 2.0, 3.0, 4.0, 5.0)
    wage_max: float = 5.0
    wage_step: float = 0.5
    hours_max: int = 8
    effort_max: int = 2
    rho: float = 0.3
    labor_cost: float = 0.4
    labor_exponent: float = 1.7
    z_scale: float = 20.0  # observation normalization only

    def __post_init__(self):
        if self.horizon < 1 or self.n_agents < 1:
            raise ValueError("need at least one timestep and one agent")
        if len(self.ability_levels) == 0:
            raise ValueError("need at least one ability level")


@dataclass
class TeamState:
    abilities: np.ndarray          # (B, n), constant within an episode
    t: int = 0
    wages: np.ndarray = None       # (B, n) last wages set
    hours: np.ndarray = None       # (B, n) last hours worked
    efforts: np.ndarray = None     # (B, n)
    outputs: np.ndarray = None     # (B, n)
    history: list = field(default_factory=list)  # per-step (w, h, e, z)

    def __post_init__(self):
        shape = self.abilities.shape
        for name in ("wages", "hours", "efforts", "outputs"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(shape))


class TeamEnv:
    FREE, OUTPUT, EFFORT = "free", "output", "effort"

    def __init__(self, config: TeamConfig):
        self.config = config
        self.wage_grid = np.round(
            np.arange(0.0, config.wage_max + 1e-9, config.wage_step), 10)
        self.hour_grid = np.arange(config.hours_max + 1, dtype=np.float64)
        self.effort_grid = np.arange(config.effort_max + 1, dtype=np.float64)
        self.agent_action_dim = self.hour_grid.size * self.effort_grid.size

    # -- channel layout ------------------------------------------------------

    def principal_channel_specs(self, lambda_targets: dict[str, float] | None = None
                                ) -> list[ChannelSpec]:
        lam = lambda_targets or {}
        n = self.config.n_agents
        return [
            ChannelSpec(self.FREE, n + 2, 0.0),  # time, hours, total output
            ChannelSpec(self.OUTPUT, n, lam.get(self.OUTPUT, 0.0)),
            ChannelSpec(self.EFFORT, n, lam.get(self.EFFORT, 0.0)),
        ]

    def agent_channel_specs(self) -> list[ChannelSpec]:
        return [ChannelSpec("own", 5, 0.0)]

    def instrumented_channels(self) -> dict[str, ChannelSpec]:
        specs = self.principal_channel_specs()
        return {s.name: s for s in specs if s.name != self.FREE}

    # -- dynamics ---------------------------------------------------------------

    def reset(self, batch: int, rng: np.random.Generator) -> TeamState:
        levels = np.asarray(self.config.ability_levels, dtype=np.float64)
        abilities = levels[rng.integers(0, levels.size,
                                        size=(batch, self.config.n_agents))]
        return TeamState(abilities=abilities)

    def principal_obs(self, state: TeamState) -> dict[str, np.ndarray]:
        cfg = self.config
        z_total = state.outputs.sum(axis=1, keepdims=True)
        free = np.concatenate([
            np.full((state.abilities.shape[0], 1), state.t / cfg.horizon),
            state.hours / cfg.hours_max,
            z_total / (cfg.n_agents * cfg.z_scale),
        ], axis=-1)
        return {
            self.FREE: free,
            self.OUTPUT: state.outputs / cfg.z_scale,
            self.EFFORT: state.efforts / max(cfg.effort_max, 1),
        }

    def agent_obs(self, state: TeamState, wages: np.ndarray) -> np.ndarray:
        cfg = self.config
        batch, n = state.abilities.shape
        obs = np.stack([
            wages / cfg.wage_max,
            state.abilities / max(cfg.ability_levels),
            np.full((batch, n), state.t / cfg.horizon),
            state.hours / cfg.hours_max,
            state.efforts / max(cfg.effort_max, 1),
        ], axis=-1)
        return obs.reshape(batch * n, 5)

    def decode_agent_action(self, actions: np.ndarray):
        hours = self.hour_grid[actions // self.effort_grid.size]
        efforts = self.effort_grid[actions % self.effort_grid.size]
        return hours, efforts

    def step(self, state: TeamState, wages: np.ndarray, hours: np.ndarray,
             efforts: np.ndarray):
        """Advance one timestep; returns (u_p (B,), u_a (B, n))."""
        cfg = self.config
        for values, grid, label in ((wages, self.wage_grid, "wage"),
                                    (hours, self.hour_grid, "hours"),
                                    (efforts, self.effort_grid, "effort")):
            if not np.all(np.isclose(values[..., None], grid).any(axis=-1)):
                raise ValueError(f"off-grid {label} value")
        outputs = hours * (state.abilities + efforts)
        income = wages * hours
        u_a = (crra(income, cfg.rho)
               - cfg.labor_cost * hours ** cfg.labor_exponent * (1.0 + efforts))
        u_p = outputs.sum(axis=1) - income.sum(axis=1)
        state.wages = wages
        state.hours = hours
        state.efforts = efforts
        state.outputs = outputs
        state.history.append((wages.copy(), hours.copy(), efforts.copy(),
                              outputs.copy()))
        state.t += 1
        return u_p, u_a

    # -- attention-adjusted reward -------------------------------------------------

    @staticmethod
    def principal_ri_reward(u_p: np.ndarray, penalties: dict[str, np.ndarray],
                            lambdas: dict[str, float]) -> np.ndarray:
        """u_p minus the costly channels' weighted penalties (free channel
        carries no cost)."""
        out = np.asarray(u_p, dtype=np.float64).copy()
        for name, pen in penalties.items():
            out = out - lambdas.get(name, 0.0) * np.asarray(pen)
        return out

    # -- logging ----------------------------------------------------------------------

    def episode_rows(self, seed: int, lambda_targets: dict[str, float],
                     state: TeamState, p_steps: list[ActStep],
                     a_steps: list[ActStep], u_p: np.ndarray, u_a: np.ndarray,
                     penalties: dict[str, np.ndarray]) -> list[dict]:
        """Per (episode, timestep, agent) rows. The attention columns are
        attributed to the timestep whose outcomes were encoded: the Principal
        at action step s+1 reads step-s outputs, so mi_z_t / mi_e_t at t come
        from action step t+1; the final step's outcomes are never observed."""
        cfg = self.config
        batch, n = state.abilities.shape
        lam_z = lambda_targets.get(self.OUTPUT, 0.0)
        lam_e = lambda_targets.get(self.EFFORT, 0.0)
        rows = []
        for b in range(batch):
            for t, (wages, hours, efforts, outputs) in enumerate(state.history):
                mi_z = mi_e = None
                if t + 1 < len(p_steps):
                    if self.OUTPUT in penalties:
                        mi_z = float(penalties[self.OUTPUT][b, t + 1])
                    if self.EFFORT in penalties:
                        mi_e = float(penalties[self.EFFORT][b, t + 1])
                for i in range(n):
                    rows.append({
                        "seed": seed, "lambda_z": lam_z, "lambda_e": lam_e,
                        "T": cfg.horizon, "t": t, "agent_id": i,
                        "ability": float(state.abilities[b, i]),
                        "wage": float(wages[b, i]), "hours": float(hours[b, i]),
                        "effort": float(efforts[b, i]),
                        "output": float(outputs[b, i]),
                        "u_a": float(u_a[b * n + i, t]), "u_p": float(u_p[b, t]),
                        "mi_z_t": mi_z, "mi_e_t": mi_e,
                    })
        return rows


# -- exhaustive oracles -----------------------------------------------------------


def agent_best_response(config: TeamConfig, wage: float):
    """Exhaustive search over the hours x effort grid; lowest-(h, e) ties."""
    hours = np.arange(config.hours_max + 1, dtype=np.float64)
    efforts = np.arange(config.effort_max + 1, dtype=np.float64)
    h_mesh, e_mesh = np.meshgrid(hours, efforts, indexing="ij")
    utility = (crra(wage * h_mesh, config.rho)
               - config.labor_cost * h_mesh ** config.labor_exponent
               * (1.0 + e_mesh))
    best = np.unravel_index(np.argmax(utility), utility.shape)
    return float(hours[best[0]]), float(efforts[best[1]]), float(utility[best])


def optimal_wage(config: TeamConfig, ability: float):
    """Profit-maximizing wage on the grid against the exact best response."""
    wages = np.round(np.arange(0.0, config.wage_max + 1e-9, config.wage_step), 10)
    profits = []
    for w in wages:
        h, e, _ = agent_best_response(config, w)
        profits.append(h * (ability + e) - w * h)
    best = int(np.argmax(profits))
    return float(wages[best]), float(profits[best])


def end_of_episode_effort_check(rows: list[dict]) -> dict:
    """Mean effort at the final timestep vs. all earlier timesteps."""
    horizon = max(int(r["t"]) for r in rows) + 1
    final = [r["effort"] for r in rows if int(r["t"]) == horizon - 1]
    earlier = [r["effort"] for r in rows if int(r["t"]) < horizon - 1]
    return {
        "final_mean": float(np.mean(final)),
        "earlier_mean": float(np.mean(earlier)) if earlier else float("nan"),
        "horizon": horizon,
    }
