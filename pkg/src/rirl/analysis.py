"""Welfare and attention analytics over run logs: Gini/equality, attention
time-courses, per-ability tables, and the figure-ready CSV exports."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

EPISODE_COLUMNS = ["seed", "lambda_z", "lambda_e", "T", "t", "agent_id",
                   "ability", "wage", "hours", "effort", "output", "u_a",
                   "u_p", "mi_z_t", "mi_e_t"]


def gini(incomes) -> float:
    """Normalized mean absolute difference: sum |x_i - x_j| / (2 n^2 mean)."""
    x = np.asarray(incomes, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty income vector")
    if np.any(x < 0):
        raise ValueError("gini requires nonnegative incomes")
    total = x.sum()
    if total == 0.0:
        return 0.0
    diffs = np.abs(x[:, None] - x[None, :]).sum()
    return float(diffs / (2.0 * x.size ** 2 * x.mean()))


def equality(gini_value: float, n: int) -> float:
    """eq = 1 - n/(n-1) * gini."""
    if n < 2:
        raise ValueError("equality needs at least two incomes")
    return 1.0 - (n / (n - 1.0)) * gini_value


def shifted_gini(values) -> tuple[float, float]:
    """Gini over possibly-negative values (utilities): shifts by the batch
    minimum plus a small constant when needed and reports the shift used."""
    x = np.asarray(values, dtype=np.float64)
    shift = float(1e-6 - x.min()) if x.min() < 0 else 0.0
    return gini(x + shift), shift


def bootstrap_ci(values, rng: np.random.Generator, n_boot: int = 1000,
                 alpha: float = 0.05) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean."""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty sample")
    if x.size == 1:
        return float(x[0]), float(x[0])
    idx = rng.integers(0, x.size, size=(n_boot, x.size))
    means = x[idx].mean(axis=1)
    return (float(np.quantile(means, alpha / 2)),
            float(np.quantile(means, 1 - alpha / 2)))


def attention_timecourse(episodes: pd.DataFrame, channel: str = "z",
                         seed_column: str = "seed",
                         rng: np.random.Generator | None = None) -> pd.DataFrame:
    """Mean pointwise attention per output timestep with bootstrap 95% bands
    across seeds. Timesteps whose outcomes were never observed are dropped."""
    rng = rng or np.random.default_rng(0)
    column = f"mi_{channel}_t"
    if column not in episodes.columns:
        raise KeyError(column)
    frame = episodes[episodes[column].notna() & (episodes[column] != "")]
    frame = frame.assign(**{column: frame[column].astype(float)})
    per_seed = frame.groupby([seed_column, "t"])[column].mean().reset_index()
    rows = []
    for t, group in per_seed.groupby("t"):
        values = group[column].to_numpy()
        lo, hi = bootstrap_ci(values, rng)
        rows.append({"t": int(t), "mean": float(values.mean()),
                     "lo": lo, "hi": hi, "n_seeds": len(values)})
    return pd.DataFrame(rows)


@dataclass
class WelfareSummary:
    mean_u_p: float
    mean_u_a: float
    gini: float
    equality: float
    gini_shift: float
    by_ability: pd.DataFrame          # per-ability wage/effort/hours/output/u_a
    attention: dict = field(default_factory=dict)  # channel -> per-t means

    def to_frame(self) -> pd.DataFrame:
        head = self.by_ability.copy()
        head["mean_u_p"] = self.mean_u_p
        head["mean_u_a"] = self.mean_u_a
        head["gini"] = self.gini
        head["equality"] = self.equality
        return head


def load_episodes(run_dir: str | Path) -> pd.DataFrame:
    path = Path(run_dir) / "episodes.csv"
    if not path.exists():
        raise FileNotFoundError(path)
    frame = pd.read_csv(path)
    for column in EPISODE_COLUMNS:
        if column not in frame.columns:
            raise KeyError(f"episodes.csv missing column {column!r}")
    return frame


def summarize(run_dir: str | Path) -> WelfareSummary:
    """Aggregate a completed team run's evaluation episodes."""
    episodes = load_episodes(run_dir)
    if episodes.empty:
        raise ValueError("empty evaluation window")
    n_agents = episodes["agent_id"].nunique()
    per_agent = episodes.groupby(["seed", "agent_id"])["u_a"].sum()
    g, shift = shifted_gini(per_agent.to_numpy())
    by_ability = episodes.groupby("ability").agg(
        wage=("wage", "mean"), hours=("hours", "mean"),
        effort=("effort", "mean"), output=("output", "mean"),
        u_a=("u_a", "mean")).reset_index()
    attention = {}
    for channel in ("z", "e"):
        column = f"mi_{channel}_t"
        observed = episodes[episodes[column].notna()]
        if not observed.empty:
            attention[channel] = (observed.groupby("t")[column].mean()
                                  .dropna().to_dict())
    return WelfareSummary(
        mean_u_p=float(episodes.groupby(["seed", "t"])["u_p"].first().mean()),
        mean_u_a=float(episodes["u_a"].mean()),
        gini=g, equality=equality(g, max(n_agents, 2)), gini_shift=shift,
        by_ability=by_ability, attention=attention)


# -- sweep-level exports -----------------------------------------------------------


def load_sweep(root: str | Path, environment: str | None = None):
    """Yield (config dict, run path) for every completed run under root."""
    root = Path(root)
    for manifest_path in sorted(root.glob("*/manifest.json")):
        manifest = json.loads(manifest_path.read_text())
        if manifest.get("status") != "complete":
            continue
        config = json.loads((manifest_path.parent / "config.json").read_text())
        if environment and config.get("environment") != environment:
            continue
        yield config, manifest_path.parent


def _ci_columns(values, rng):
    lo, hi = bootstrap_ci(np.asarray(values, dtype=np.float64), rng)
    return float(np.mean(values)), lo, hi


def export_fig2(root: str | Path, out_path: str | Path) -> pd.DataFrame:
    """Pay-schedule means by (beta, lambda, z) with 95% bands across seeds."""
    rng = np.random.default_rng(2)
    frames = []
    for config, run_dir in load_sweep(root, "contract"):
        if config.get("condition", "mi") != "mi":
            continue
        frames.append(pd.read_csv(run_dir / "results.csv"))
    if not frames:
        raise ValueError(f"no contract runs under {root}")
    results = pd.concat(frames)
    rows = []
    for (beta, lam, z), group in results.groupby(["beta", "lam", "z"]):
        mean, lo, hi = _ci_columns(group["mu_z"].to_numpy(), rng)
        rows.append({"beta": beta, "lam": lam, "z": z,
                     "mu_mean": mean, "mu_lo": lo, "mu_hi": hi})
    frame = pd.DataFrame(rows).sort_values(["beta", "lam", "z"])
    frame.to_csv(out_path, index=False)
    return frame


def export_fig3(root: str | Path, out_path: str | Path,
                zero_pay: dict[float, float] | None = None) -> pd.DataFrame:
    """Principal utility vs lambda for the MI and entropy conditions."""
    rng = np.random.default_rng(3)
    rows = []
    collected: dict[tuple, list] = {}
    for config, run_dir in load_sweep(root, "contract"):
        summary = json.loads((run_dir / "summary.json").read_text())
        key = (config.get("condition", "mi"), float(config["lam"]),
               float(config["beta"]))
        collected.setdefault(key, []).append(summary["mean_u_p"])
    if not collected:
        raise ValueError(f"no contract runs under {root}")
    for (condition, lam, beta), values in sorted(collected.items()):
        mean, lo, hi = _ci_columns(values, rng)
        row = {"condition": condition, "lam": lam, "beta": beta,
               "u_p_mean": mean, "u_p_lo": lo, "u_p_hi": hi}
        if zero_pay is not None:
            row["zero_pay_bound"] = zero_pay.get(beta)
        rows.append(row)
    frame = pd.DataFrame(rows)
    frame.to_csv(out_path, index=False)
    return frame


def export_fig5(root: str | Path, out_path: str | Path) -> pd.DataFrame:
    """Attention-to-output time-course per horizon (lambda_z > 0 runs)."""
    pieces = []
    for config, run_dir in load_sweep(root, "team"):
        if config.get("lambda_z", 0) <= 0:
            continue
        episodes = load_episodes(run_dir)
        course = attention_timecourse(episodes, "z")
        course["horizon"] = config["horizon"]
        course["lambda_z"] = config["lambda_z"]
        pieces.append(course)
    if not pieces:
        raise ValueError(f"no attention runs under {root}")
    frame = (pd.concat(pieces).groupby(["horizon", "lambda_z", "t"])
             .agg({"mean": "mean", "lo": "mean", "hi": "mean",
                   "n_seeds": "sum"}).reset_index())
    frame.to_csv(out_path, index=False)
    return frame


def _team_condition_stats(root):
    by_condition: dict[tuple, dict[str, list]] = {}
    for config, run_dir in load_sweep(root, "team"):
        episodes = load_episodes(run_dir)
        key = (float(config.get("lambda_z", 0)), float(config.get("lambda_e", 0)))
        stats = by_condition.setdefault(
            key, {"u_p": [], "u_a": [], "wage": [], "effort": [],
                  "by_ability": [], "equality": []})
        stats["u_p"].append(episodes.groupby(["seed", "t"])["u_p"].first().mean())
        stats["u_a"].append(episodes["u_a"].mean())
        stats["wage"].append(episodes["wage"].mean())
        stats["effort"].append(episodes["effort"].mean())
        per_agent = episodes.groupby("agent_id")["u_a"].mean()
        g, _ = shifted_gini(per_agent.to_numpy())
        stats["equality"].append(equality(g, max(len(per_agent), 2)))
        stats["by_ability"].append(
            episodes.groupby("ability").agg(
                wage=("wage", "mean"), effort=("effort", "mean"),
                hours=("hours", "mean"), output=("output", "mean"),
                u_a=("u_a", "mean")))
    return by_condition


def export_fig6(root: str | Path, out_path: str | Path) -> pd.DataFrame:
    """Principal vs (average) Agent utility per (lambda_z, lambda_e)."""
    rng = np.random.default_rng(6)
    stats = _team_condition_stats(root)
    if not stats:
        raise ValueError(f"no team runs under {root}")
    rows = []
    for (lam_z, lam_e), values in sorted(stats.items()):
        u_p_mean, u_p_lo, u_p_hi = _ci_columns(values["u_p"], rng)
        u_a_mean, u_a_lo, u_a_hi = _ci_columns(values["u_a"], rng)
        rows.append({"lambda_z": lam_z, "lambda_e": lam_e,
                     "u_p_mean": u_p_mean, "u_p_lo": u_p_lo, "u_p_hi": u_p_hi,
                     "u_a_mean": u_a_mean, "u_a_lo": u_a_lo, "u_a_hi": u_a_hi,
                     "n_seeds": len(values["u_p"])})
    frame = pd.DataFrame(rows)
    frame.to_csv(out_path, index=False)
    return frame


def export_fig7(root: str | Path, out_path: str | Path) -> pd.DataFrame:
    """Wages by ability plus utility equality per (lambda_z, lambda_e)."""
    rng = np.random.default_rng(7)
    stats = _team_condition_stats(root)
    if not stats:
        raise ValueError(f"no team runs under {root}")
    rows = []
    for (lam_z, lam_e), values in sorted(stats.items()):
        eq_mean = float(np.mean(values["equality"]))
        u_a_all = float(np.mean(values["u_a"]))
        merged = pd.concat(values["by_ability"]).groupby("ability").mean()
        for ability, row in merged.iterrows():
            wages = [frame.loc[ability, "wage"]
                     for frame in values["by_ability"]
                     if ability in frame.index]
            mean, lo, hi = _ci_columns(wages, rng)
            rows.append({"lambda_z": lam_z, "lambda_e": lam_e,
                         "ability": float(ability), "wage_mean": mean,
                         "wage_lo": lo, "wage_hi": hi,
                         "u_a_mean": float(row["u_a"]),
                         "equality": eq_mean, "mean_u_a_all": u_a_all})
    frame = pd.DataFrame(rows)
    frame.to_csv(out_path, index=False)
    return frame


def export_fig8(root: str | Path, out_path: str | Path) -> pd.DataFrame:
    """Per-ability behavior vs attention cost, one sweep per costly channel
    (the other channel held at zero); deltas are relative to lambda = 0."""
    stats = _team_condition_stats(root)
    if not stats:
        raise ValueError(f"no team runs under {root}")
    rows = []
    for channel, selector in (("z", lambda k: k[1] == 0.0),
                              ("e", lambda k: k[0] == 0.0)):
        keys = sorted(k for k in stats if selector(k))
        if not keys:
            continue
        lam0_key = keys[0]
        base = pd.concat(stats[lam0_key]["by_ability"]).groupby("ability").mean()
        for key in keys:
            lam = key[0] if channel == "z" else key[1]
            merged = pd.concat(stats[key]["by_ability"]).groupby("ability").mean()
            for ability, row in merged.iterrows():
                record = {"channel": channel, "lam": lam,
                          "ability": float(ability)}
                for column in ("wage", "effort", "hours", "output", "u_a"):
                    record[column] = float(row[column])
                    record[f"delta_{column}"] = float(
                        row[column] - base.loc[ability, column])
                rows.append(record)
    frame = pd.DataFrame(rows)
    frame.to_csv(out_path, index=False)
    return frame
