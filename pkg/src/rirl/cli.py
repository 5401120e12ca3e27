"""Command-line entry points: run a sweep config, print a figure preset,
summarize a finished run or sweep directory."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="rirl",
        description="Principal-agent simulations with priced attention")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a sweep config (JSON)")
    p_run.add_argument("config", help="path to an experiment config")
    p_run.add_argument("--jobs", type=int, default=1,
                       help="parallel worker processes")
    p_run.add_argument("--profile", choices=("desk", "paper"), default="desk")
    p_run.add_argument("--force", action="store_true",
                       help="rerun completed points")

    p_preset = sub.add_parser("preset", help="emit a figure-reproduction config")
    p_preset.add_argument("figure", help="fig2|fig3|fig5|fig6|fig7|fig8")
    p_preset.add_argument("--out", help="write JSON here instead of stdout")
    p_preset.add_argument("--out-dir", help="override the sweep output directory")

    p_sum = sub.add_parser("summarize", help="aggregate a run directory")
    p_sum.add_argument("directory")
    p_sum.add_argument("--export", help="write figure CSVs to this directory")

    args = parser.parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "preset":
        return _cmd_preset(args)
    return _cmd_summarize(args)


def _cmd_run(args) -> int:
    from .experiments import ExperimentConfig, run

    config = ExperimentConfig.from_json(args.config)
    root = run(config, jobs=args.jobs, profile=args.profile, force=args.force)
    print(f"sweep complete under {root}")
    return 0


def _cmd_preset(args) -> int:
    from .experiments import preset

    try:
        config = preset(args.figure, out_dir=args.out_dir)
    except KeyError as error:
        print(error.args[0], file=sys.stderr)
        return 2
    if args.out:
        config.to_json(args.out)
        print(f"wrote {args.out}")
    else:
        from dataclasses import asdict

        print(json.dumps(asdict(config), indent=2))
    return 0


def _cmd_summarize(args) -> int:
    from . import analysis

    path = Path(args.directory)
    if (path / "episodes.csv").exists():  # single team run
        summary = analysis.summarize(path)
        print(f"mean u_p per step : {summary.mean_u_p:.3f}")
        print(f"mean u_a per step : {summary.mean_u_a:.3f}")
        print(f"gini / equality   : {summary.gini:.3f} / {summary.equality:.3f}"
              f" (shift {summary.gini_shift:.3g})")
        print(summary.by_ability.to_string(index=False))
        return 0
    if (path / "summary.json").exists():  # single contract run
        print(json.dumps(json.loads((path / "summary.json").read_text()),
                         indent=2))
        return 0
    # sweep directory: export whichever figure CSVs its runs support
    exported = []
    if args.export:
        out_root = Path(args.export)
        out_root.mkdir(parents=True, exist_ok=True)
        for figure, exporter in (
                ("fig2", analysis.export_fig2), ("fig3", analysis.export_fig3),
                ("fig5", analysis.export_fig5), ("fig6", analysis.export_fig6),
                ("fig7", analysis.export_fig7), ("fig8", analysis.export_fig8)):
            try:
                exporter(path, out_root / f"{figure}.csv")
                exported.append(figure)
            except (ValueError, KeyError, FileNotFoundError):
                continue
        print(f"exported: {', '.join(exported) if exported else 'nothing'}")
        return 0
    completed = list(path.glob("*/manifest.json"))
    done = sum(1 for m in completed
               if json.loads(m.read_text()).get("status") == "complete")
    print(f"{done}/{len(completed)} runs complete under {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
