#!/usr/bin/env python3
"""Render paper-style figures from the experiment CSV exports.

Display-only: every number shown comes from the input CSV. Output is a
vector image (pdf or svg), byte-identical across invocations on the same
input.

Usage: render.py --figure fig5 --input fig5.csv --output fig5.pdf
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "rirl-figures"

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import pandas as pd  # noqa: E402

PALETTE = ["#4C72B0", "#DD8452", "#55A868", "#C44E52", "#8172B3", "#937860"]


def _require(frame: pd.DataFrame, columns: list[str], figure: str) -> None:
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise SystemExit(f"{figure}: input is missing columns {missing}")
    if frame.empty:
        raise SystemExit(f"{figure}: input CSV has no rows")


def render_fig2(frame: pd.DataFrame):
    _require(frame, ["beta", "lam", "z", "mu_mean", "mu_lo", "mu_hi"], "fig2")
    lams = sorted(frame["lam"].unique())
    fig, axes = plt.subplots(1, len(lams), figsize=(4 * len(lams), 3.2),
                             sharey=True, squeeze=False)
    for ax, lam in zip(axes[0], lams):
        chunk = frame[frame["lam"] == lam]
        for color, (beta, group) in zip(PALETTE,
                                        chunk.groupby("beta", sort=True)):
            group = group.sort_values("z")
            ax.plot(group["z"], group["mu_mean"], color=color,
                    label=f"beta={beta}")
            ax.fill_between(group["z"], group["mu_lo"], group["mu_hi"],
                            color=color, alpha=0.2, linewidth=0)
        ax.set_title(f"attention cost = {lam}")
        ax.set_xlabel("output level z")
    axes[0][0].set_ylabel("mean payment")
    axes[0][0].legend(frameon=False, fontsize=8)
    return fig


def render_fig3(frame: pd.DataFrame):
    _require(frame, ["condition", "lam", "u_p_mean", "u_p_lo", "u_p_hi"],
             "fig3")
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    for color, (condition, group) in zip(PALETTE,
                                         frame.groupby("condition")):
        group = group.sort_values("lam")
        ax.plot(group["lam"], group["u_p_mean"], color=color, marker="o",
                label=condition)
        ax.fill_between(group["lam"], group["u_p_lo"], group["u_p_hi"],
                        color=color, alpha=0.2, linewidth=0)
    if "zero_pay_bound" in frame.columns and frame["zero_pay_bound"].notna().any():
        bound = frame["zero_pay_bound"].dropna().iloc[0]
        ax.axhline(bound, color="gray", linestyle="--", linewidth=1,
                   label="zero-pay bound")
    ax.set_xlabel("regularization strength")
    ax.set_ylabel("principal utility")
    ax.legend(frameon=False, fontsize=8)
    return fig


def render_fig5(frame: pd.DataFrame):
    _require(frame, ["horizon", "t", "mean", "lo", "hi"], "fig5")
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    for color, (horizon, group) in zip(PALETTE, frame.groupby("horizon")):
        group = group.sort_values("t")
        ax.plot(group["t"], group["mean"], color=color, marker="o",
                label=f"T={horizon}")
        ax.fill_between(group["t"], group["lo"], group["hi"], color=color,
                        alpha=0.2, linewidth=0)
    ax.set_xlabel("timestep of observed output")
    ax.set_ylabel("attention to output (nats)")
    ax.legend(frameon=False, fontsize=8)
    return fig


def render_fig6(frame: pd.DataFrame):
    _require(frame, ["lambda_z", "lambda_e", "u_p_mean", "u_a_mean"], "fig6")
    fig, ax = plt.subplots(figsize=(4.5, 3.4))
    sizes = 30 + 60 * frame["lambda_e"]
    scatter = ax.scatter(frame["u_a_mean"], frame["u_p_mean"],
                         c=frame["lambda_z"], s=sizes, cmap="viridis",
                         edgecolor="black", linewidth=0.4)
    fig.colorbar(scatter, ax=ax, label="output attention cost")
    ax.set_xlabel("mean agent utility")
    ax.set_ylabel("principal utility")
    ax.set_title("dot size: effort attention cost")
    return fig


def render_fig7(frame: pd.DataFrame):
    _require(frame, ["lambda_z", "lambda_e", "ability", "wage_mean",
                     "wage_lo", "wage_hi", "equality", "mean_u_a_all"],
             "fig7")
    fig, (left, right) = plt.subplots(1, 2, figsize=(8.5, 3.2))
    lam_lo = frame["lambda_z"].min()
    lam_hi = frame["lambda_z"].max()
    width = 0.38
    for offset, (lam, color) in enumerate(((lam_lo, PALETTE[5]),
                                           (lam_hi, PALETTE[0]))):
        chunk = (frame[frame["lambda_z"] == lam]
                 .groupby("ability").first().reset_index())
        err = [chunk["wage_mean"] - chunk["wage_lo"],
               chunk["wage_hi"] - chunk["wage_mean"]]
        left.bar(chunk["ability"] + (offset - 0.5) * width,
                 chunk["wage_mean"], width=width, yerr=err, capsize=2,
                 color=color, label=f"lambda_z={lam}")
    left.set_xlabel("agent ability")
    left.set_ylabel("mean wage")
    left.legend(frameon=False, fontsize=8)
    per_condition = (frame.groupby(["lambda_z", "lambda_e"])
                     .first().reset_index())
    scatter = right.scatter(per_condition["mean_u_a_all"],
                            per_condition["equality"],
                            c=per_condition["lambda_z"],
                            s=30 + 60 * per_condition["lambda_e"],
                            cmap="viridis", edgecolor="black", linewidth=0.4)
    fig.colorbar(scatter, ax=right, label="output attention cost")
    right.set_xlabel("mean agent utility")
    right.set_ylabel("equality of utility")
    return fig


def render_fig8(frame: pd.DataFrame):
    _require(frame, ["channel", "lam", "ability", "delta_wage",
                     "delta_effort", "delta_hours", "delta_output",
                     "delta_u_a"], "fig8")
    rows = ["delta_wage", "delta_effort", "delta_hours", "delta_output",
            "delta_u_a"]
    channels = sorted(frame["channel"].unique())
    fig, axes = plt.subplots(len(rows), len(channels),
                             figsize=(4 * len(channels), 2.1 * len(rows)),
                             sharex="col", squeeze=False)
    for col, channel in enumerate(channels):
        chunk = frame[frame["channel"] == channel]
        for row, metric in enumerate(rows):
            ax = axes[row][col]
            for color, (ability, group) in zip(PALETTE,
                                               chunk.groupby("ability")):
                group = group.sort_values("lam")
                ax.plot(group["lam"], group[metric], color=color,
                        marker=".", label=f"ability {ability:g}")
            ax.axhline(0.0, color="gray", linewidth=0.6)
            if col == 0:
                ax.set_ylabel(metric.replace("delta_", "Δ"))
        axes[0][col].set_title(f"inattention to {channel}")
        axes[-1][col].set_xlabel("attention cost")
    axes[0][0].legend(frameon=False, fontsize=7)
    return fig


RENDERERS = {
    "fig2": render_fig2,
    "fig3": render_fig3,
    "fig5": render_fig5,
    "fig6": render_fig6,
    "fig7": render_fig7,
    "fig8": render_fig8,
}


def render(figure: str, input_path: str | Path, output_path: str | Path) -> Path:
    if figure not in RENDERERS:
        raise SystemExit(
            f"unknown figure {figure!r}; known: {sorted(RENDERERS)}")
    frame = pd.read_csv(input_path)
    fig = RENDERERS[figure](frame)
    fig.tight_layout()
    output_path = Path(output_path)
    # strip the volatile metadata so identical inputs give identical bytes
    metadata = ({"CreationDate": None} if output_path.suffix == ".pdf"
                else {"Date": None})
    fig.savefig(output_path, metadata=metadata)
    plt.close(fig)
    return output_path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--figure", required=True,
                        help="|".join(sorted(RENDERERS)))
    parser.add_argument("--input", required=True, help="exported CSV")
    parser.add_argument("--output", required=True, help=".pdf or .svg path")
    args = parser.parse_args(argv)
    path = render(args.figure, args.input, args.output)
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
