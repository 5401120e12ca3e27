"""Batch experiment runner: seeded sweeps over attention costs and agent
types, idempotent run directories with content-hashed manifests, and the
per-figure reproduction presets."""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import math
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .contract import ContractConfig, fit_mirrlees, learn_schedule
from .team import TeamConfig, TeamEnv
from .training import TrainConfig, train, write_metrics_csv

SEED_OFFSET_VAR = "RIRL_SEED_OFFSET"


@dataclass
class ExperimentConfig:
    name: str
    environment: str                 # "contract" | "team"
    base: dict = field(default_factory=dict)   # desk-profile parameters
    paper: dict = field(default_factory=dict)  # overrides for --profile paper
    sweep: dict = field(default_factory=dict)  # axis -> list of values
    seeds: list = field(default_factory=lambda: [0])
    out_dir: str = "runs"

    def __post_init__(self):
        if self.environment not in ("contract", "team"):
            raise ValueError(f"unknown environment {self.environment!r}")
        if not self.seeds:
            raise ValueError("seed list must be non-empty")
        for axis, values in self.sweep.items():
            for value in values:
                flat = value if isinstance(value, (list, tuple)) else [value]
                for entry in flat:
                    # categorical values ("mi", "entropy") and the documented
                    # beta = "inf" pass through; numbers must be sane
                    if isinstance(entry, str):
                        continue
                    if entry < 0 or not np.isfinite(entry):
                        raise ValueError(
                            f"sweep axis {axis!r} has invalid value {value!r}")

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2))

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        return cls(**json.loads(Path(path).read_text()))


def sweep_points(config: ExperimentConfig) -> list[dict]:
    """Cartesian product of sweep axes and seeds. A comma-joined axis name
    ("lambda_z,lambda_e") sweeps those parameters jointly over value tuples."""
    offset = int(os.environ.get(SEED_OFFSET_VAR, "0"))
    axes = list(config.sweep.items()) or []
    points = []
    value_lists = [values for _, values in axes]
    for combo in itertools.product(*value_lists) if axes else [()]:
        point = {}
        for (axis, _), value in zip(axes, combo):
            names = axis.split(",")
            values = value if isinstance(value, (list, tuple)) else [value]
            if len(names) != len(values):
                raise ValueError(f"axis {axis!r} expects {len(names)} values")
            point.update(dict(zip(names, values)))
        for seed in config.seeds:
            points.append({**point, "seed": int(seed) + offset})
    return points


def point_name(point: dict) -> str:
    parts = []
    for key in sorted(point):
        value = point[key]
        if isinstance(value, float) and math.isinf(value):
            value = "inf"
        parts.append(f"{key}={value}")
    return "_".join(parts)


def resolve_point(config: ExperimentConfig, point: dict, profile: str) -> dict:
    if profile not in ("desk", "paper"):
        raise ValueError(f"unknown profile {profile!r}")
    resolved = {"environment": config.environment, "profile": profile}
    resolved.update(config.base)
    if profile == "paper":
        resolved.update(config.paper)
    resolved.update(point)
    return resolved


def config_hash(resolved: dict) -> str:
    canonical = json.dumps({**resolved, "code_version": __version__},
                           sort_keys=True, default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()


def _float(value, default=0.0):
    if value is None:
        return default
    if isinstance(value, str):
        return float("inf") if value == "inf" else float(value)
    return float(value)


def _anneal_rate(resolved: dict, target: float) -> float:
    if resolved.get("anneal_rate") is not None:
        return float(resolved["anneal_rate"])
    if target <= 0:
        return 4.0 / 10000.0
    fraction = float(resolved.get("anneal_fraction", 0.5))
    return target / max(1.0, fraction * int(resolved["total_batches"]))


def run_contract_point(resolved: dict, run_dir: Path) -> dict:
    lam = _float(resolved.get("lam"))
    cfg = ContractConfig(
        beta=_float(resolved.get("beta", 5.0)),
        lam=lam,
        condition=resolved.get("condition", "mi"),
        effort_cost=_float(resolved.get("effort_cost", 0.08)),
        batch_size=int(resolved.get("batch_size", 128)),
        total_batches=int(resolved["total_batches"]),
        policy_lr=_float(resolved.get("policy_lr", 1e-3)),
        disc_lr=_float(resolved.get("disc_lr", 5e-3)),
        anneal_rate=_anneal_rate(resolved, lam),
        beta_train_cap=_float(resolved.get("beta_train_cap", 10.0)),
        seed=int(resolved["seed"]),
        eval_samples=int(resolved.get("eval_samples", 4096)),
    )
    result = learn_schedule(cfg)
    fit = fit_mirrlees(result.schedule)
    write_metrics_csv(run_dir / "metrics.csv", result.metrics)
    (run_dir / "summary.json").write_text(json.dumps(result.summary, indent=2))
    with open(run_dir / "results.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lam", "beta", "seed", "z", "mu_z", "sigma_z",
                         "u_p", "u_a", "mi_wz", "fit_A", "fit_B", "fit_C",
                         "fit_rho", "fit_r2"])
        for z, (mu_z, sigma_z) in enumerate(zip(result.schedule.mu,
                                                result.schedule.sigma)):
            writer.writerow([
                cfg.lam, cfg.beta, cfg.seed, z, mu_z, sigma_z,
                result.summary["mean_u_p"], result.summary["mean_u_a"],
                result.summary["mi_wz"], fit.A, fit.B, fit.C, fit.rho, fit.r2])
    return {"summary": result.summary,
            "fit": {"A": fit.A, "B": fit.B, "C": fit.C, "rho": fit.rho,
                    "r2": fit.r2}}


def run_team_point(resolved: dict, run_dir: Path) -> dict:
    ability_levels = tuple(resolved.get("ability_levels",
                                        (1.0, 2.0, 3.0, 4.0, 5.0)))
    if "ability" in resolved:  # sweep axis: train with one fixed ability
        ability_levels = (_float(resolved["ability"]),)
    env_cfg = TeamConfig(
        n_agents=int(resolved.get("n_agents", 4)),
        horizon=int(resolved.get("horizon", 5)),
        ability_levels=ability_levels,
    )
    env = TeamEnv(env_cfg)
    lam_z = _float(resolved.get("lambda_z"))
    lam_e = _float(resolved.get("lambda_e"))
    target = max(lam_z, lam_e)
    cfg = TrainConfig(
        policy_lr=_float(resolved.get("policy_lr", 1e-3)),
        agent_lr=_float(resolved.get("agent_lr", 3e-3)),
        disc_lr=_float(resolved["disc_lr"]) if resolved.get("disc_lr") else None,
        batch_size=int(resolved.get("batch_size", 32)),
        total_batches=int(resolved["total_batches"]),
        gamma=_float(resolved.get("gamma", 1.0)),
        lambda_targets={env.OUTPUT: lam_z, env.EFFORT: lam_e},
        anneal_rate=_anneal_rate(resolved, target),
        horizon=env_cfg.horizon,
        seed=int(resolved["seed"]),
        reward_scaling=bool(resolved.get("reward_scaling", True)),
        entropy_coef=_float(resolved.get("entropy_coef", 0.1)),
        explore_eps=_float(resolved.get("explore_eps", 0.05)),
        principal_explore_eps=(
            _float(resolved["principal_explore_eps"])
            if resolved.get("principal_explore_eps") is not None else None),
        agent_anneal_fraction=_float(resolved.get("agent_anneal_fraction", 0.5)),
        checkpoint_every=int(resolved.get("checkpoint_every", 0)),
        eval_episodes=int(resolved.get("eval_episodes", 128)),
        principal_warmup=int(resolved.get("principal_warmup", 0)),
    )
    result = train(cfg, env, run_dir=run_dir)
    with open(run_dir / "episodes.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(result.eval_rows[0]))
        writer.writeheader()
        writer.writerows(result.eval_rows)
    (run_dir / "summary.json").write_text(
        json.dumps(result.eval_summary, indent=2))
    return {"summary": result.eval_summary}


def run_point(resolved: dict, run_dir: str | Path, force: bool = False) -> dict:
    """Execute one sweep point idempotently; the manifest records the config
    hash, so a completed, unchanged point is a no-op."""
    run_dir = Path(run_dir)
    manifest_path = run_dir / "manifest.json"
    digest = config_hash(resolved)
    if manifest_path.exists() and not force:
        manifest = json.loads(manifest_path.read_text())
        if manifest.get("status") == "complete" \
                and manifest.get("config_hash") == digest:
            manifest["skipped"] = True
            return manifest
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(
        json.dumps(resolved, indent=2, default=str))
    manifest = {"config_hash": digest, "code_version": __version__,
                "status": "running"}
    manifest_path.write_text(json.dumps(manifest, indent=2))
    try:
        runner = (run_contract_point if resolved["environment"] == "contract"
                  else run_team_point)
        outcome = runner(resolved, run_dir)
        manifest.update(status="complete", **outcome)
    except Exception as error:  # partial sweep failure: record and move on
        manifest.update(status="failed", error=repr(error),
                        traceback=traceback.format_exc())
    manifest_path.write_text(json.dumps(manifest, indent=2, default=str))
    return manifest


def _worker(args):
    resolved, run_dir, force = args
    return str(run_dir), run_point(resolved, run_dir, force)


def run(config: ExperimentConfig, jobs: int = 1, profile: str = "desk",
        force: bool = False) -> Path:
    """Run every (sweep point x seed); each gets its own subdirectory."""
    root = Path(config.out_dir)
    root.mkdir(parents=True, exist_ok=True)
    tasks = []
    for point in sweep_points(config):
        resolved = resolve_point(config, point, profile)
        tasks.append((resolved, root / point_name(point), force))
    if jobs <= 1:
        results = [_worker(task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_worker, tasks))
    failures = [(name, m) for name, m in results if m.get("status") == "failed"]
    for name, manifest in failures:
        print(f"FAILED {name}: {manifest.get('error')}")
    return root


# -- figure presets ----------------------------------------------------------------

_TEAM_CROSS = [[0.0, 0.0], [3.0, 0.0], [6.0, 0.0], [0.0, 2.0], [0.0, 6.0]]

_TEAM_DESK = {
    "total_batches": 1500, "batch_size": 32, "policy_lr": 1e-3,
    "entropy_coef": 0.1, "principal_warmup": 300, "eval_episodes": 128,
    "horizon": 5,
}
_TEAM_PAPER = {
    "total_batches": 60000, "batch_size": 512, "policy_lr": 1e-4,
    "entropy_coef": 0.1, "principal_warmup": 0, "anneal_rate": 4.0 / 10000.0,
}
_CONTRACT_DESK = {"total_batches": 4000, "batch_size": 128, "policy_lr": 1e-3}
_CONTRACT_PAPER = {"total_batches": 100000, "batch_size": 128,
                   "policy_lr": 1e-3, "anneal_rate": 4.0 / 10000.0}


def preset(figure: str, out_dir: str | None = None) -> ExperimentConfig:
    """Reproduction sweep for one of the paper-style figures."""
    presets = {
        "fig2": ExperimentConfig(
            name="fig2-pay-schedules", environment="contract",
            base=dict(_CONTRACT_DESK), paper=dict(_CONTRACT_PAPER),
            sweep={"lam": [0.0, 1.0, 3.0], "beta": [3.0, 5.0, "inf"]},
            seeds=list(range(5)), out_dir=out_dir or "runs/fig2"),
        "fig3": ExperimentConfig(
            name="fig3-mi-vs-entropy", environment="contract",
            base=dict(_CONTRACT_DESK, beta=5.0),
            paper=dict(_CONTRACT_PAPER, beta=5.0),
            sweep={"condition": ["mi", "entropy"], "lam": [0.0, 1.0, 3.0]},
            seeds=list(range(5)), out_dir=out_dir or "runs/fig3"),
        "fig5": ExperimentConfig(
            name="fig5-attention-timecourse", environment="team",
            base=dict(_TEAM_DESK, lambda_z=3.0, lambda_e=0.0),
            paper=dict(_TEAM_PAPER, lambda_z=3.0, lambda_e=0.0),
            sweep={"horizon": [5, 10]},
            seeds=list(range(20)), out_dir=out_dir or "runs/fig5"),
        "fig6": ExperimentConfig(
            name="fig6-welfare", environment="team",
            base=dict(_TEAM_DESK), paper=dict(_TEAM_PAPER),
            sweep={"lambda_z,lambda_e": [list(p) for p in _TEAM_CROSS]},
            seeds=list(range(20)), out_dir=out_dir or "runs/team_cross"),
        "fig7": ExperimentConfig(
            name="fig7-wage-equality", environment="team",
            base=dict(_TEAM_DESK), paper=dict(_TEAM_PAPER),
            sweep={"lambda_z,lambda_e": [[0.0, 0.0], [6.0, 0.0]]},
            seeds=list(range(20)), out_dir=out_dir or "runs/team_cross"),
        "fig8": ExperimentConfig(
            name="fig8-ability-breakdown", environment="team",
            base=dict(_TEAM_DESK), paper=dict(_TEAM_PAPER),
            sweep={"lambda_z,lambda_e": [list(p) for p in _TEAM_CROSS]},
            seeds=list(range(20)), out_dir=out_dir or "runs/team_cross"),
    }
    if figure not in presets:
        raise KeyError(
            f"unknown figure {figure!r}; known: {sorted(presets)}")
    return presets[figure]
