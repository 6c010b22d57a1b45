"""Command-line front end: train / eval / ablate / replay / plot.

Exit codes: 0 success, 2 configuration error, 3 numerical fault,
4 missing artifact.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .autodiff import TrainingError, UsageError
from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig
from .world import EpisodeFault, ScenarioError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_MISSING = 4


def _resolve_config(args) -> RunConfig:
    doc = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise FileNotFoundError(f"config file {path} not found")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(str(path), f"invalid JSON: {exc}") from exc
    if getattr(args, "seed", None) is not None:
        doc["seed"] = args.seed
    elif "seed" not in doc and os.environ.get("SAFELOCO_SEED"):
        doc["seed"] = int(os.environ["SAFELOCO_SEED"])
    if getattr(args, "mode", None):
        doc.setdefault("train", {})["mode"] = args.mode
    if getattr(args, "steps", None) is not None:
        doc.setdefault("train", {})["total_steps"] = args.steps
    if getattr(args, "jobs", None) is not None:
        doc.setdefault("eval", {})["jobs"] = args.jobs
    if getattr(args, "out", None):
        doc["run_name"] = Path(args.out).name
    return RunConfig.from_dict(doc)


def cmd_train(args) -> int:
    from .trainer import train

    cfg = _resolve_config(args)
    out = Path(args.out)
    ckpt = train(cfg, args.scenario, out)
    print(f"final checkpoint: {ckpt}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluate import run_trials

    mask = tuple(int(x) for x in args.mask_rings.split(",")) if args.mask_rings else ()
    report = run_trials(args.ckpt, args.scenario, args.trials,
                        seeds=[args.seed + i for i in range(args.trials)]
                        if args.seed is not None else None,
                        level=args.level, jobs=args.jobs, mask_rings=mask)
    out = Path(args.out) if args.out else Path("reports") / "eval"
    path = report.write_csv(out / f"eval_{args.scenario}_{report.mode}.csv")
    print(f"scenario={report.scenario} mode={report.mode} trials={report.n_trials} "
          f"success_rate={report.success_rate:.3f} "
          f"t_unsafe={report.mean_t_unsafe:.3f}s "
          f"t_uncomfortable={report.mean_t_uncomfortable:.3f}s")
    print(f"per-trial rows: {path}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .evaluate import run_ablation

    cfg = _resolve_config(args)
    scenarios = args.scenarios.split(",")
    tables = run_ablation(scenarios, cfg, args.budget, args.out)
    for name, path in tables.items():
        print(f"{name}: {path}")
    return EXIT_OK


REPLAY_STATE_COLS = ["step", "px", "py", "yaw", "height", "vx", "vy", "omega_z"]


def cmd_replay(args) -> int:
    from .evaluate import run_episode

    traj = run_episode(args.ckpt, args.scenario, args.seed, level=args.level)
    term_names = sorted(traj.reward_terms[0]) if traj.reward_terms else []
    dump = Path(args.dump)
    dump.parent.mkdir(parents=True, exist_ok=True)
    with dump.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPLAY_STATE_COLS + [f"a{i}" for i in range(4)] + ["reward"]
                   + [f"term_{t}" for t in term_names]
                   + ["c_safe", "c_limit", "c_d", "h_d", "d_obs"])
        for k in range(len(traj.rewards)):
            row = [k,
                   repr(float(traj.positions[k, 0])), repr(float(traj.positions[k, 1])),
                   repr(float(traj.yaws[k])), repr(float(traj.heights[k])),
                   repr(float(traj.velocities[k, 0])), repr(float(traj.velocities[k, 1])),
                   repr(float(traj.omegas[k]))]
            row += [repr(float(a)) for a in traj.actions[k]]
            row += [repr(float(traj.rewards[k]))]
            row += [repr(float(traj.reward_terms[k].get(t, 0.0))) for t in term_names]
            row += [repr(float(c)) for c in traj.costs[k]]
            row += [repr(float(traj.h_vals[k])), repr(float(traj.d_obs[k]))]
            w.writerow(row)
    print(f"success={traj.success} collided={traj.collided} steps={len(traj.rewards)}")
    print(f"trajectory dump: {dump}")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .svg import write_trajectory_svg
    from .world import load_scenario

    traj_path = Path(args.traj)
    if not traj_path.exists():
        raise FileNotFoundError(f"trajectory file {traj_path} not found")
    with traj_path.open() as fh:
        reader = csv.DictReader(fh)
        pts = [(float(r["px"]), float(r["py"])) for r in reader]
    scenario = load_scenario(args.scenario)
    out = write_trajectory_svg(np.asarray(pts), scenario, None, args.mode, args.out)
    print(f"plot: {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="safeloco",
                                description="Safe-locomotion training and evaluation")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one policy")
    t.add_argument("--config", help="JSON run configuration")
    t.add_argument("--mode", choices=["p3o_cbf", "p3o", "ppo_reward_shaping"])
    t.add_argument("--scenario", default="cluttered_static")
    t.add_argument("--seed", type=int)
    t.add_argument("--steps", type=int, help="total environment steps")
    t.add_argument("--out", default="runs/run")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--ckpt", required=True, help="checkpoint base path (no extension)")
    e.add_argument("--scenario", required=True)
    e.add_argument("--trials", type=int, default=30)
    e.add_argument("--seed", type=int)
    e.add_argument("--level", type=int)
    e.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    e.add_argument("--mask-rings", default="", help="comma list of ring indices "
                   "to blank in the actor's scan input")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train+evaluate all modes")
    a.add_argument("--config")
    a.add_argument("--scenarios", default="cluttered_static")
    a.add_argument("--budget", type=int, default=150_000)
    a.add_argument("--seed", type=int)
    a.add_argument("--jobs", type=int)
    a.add_argument("--out", default="reports/ablation")
    a.set_defaults(func=cmd_ablate)

    r = sub.add_parser("replay", help="deterministic episode dump")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--scenario", required=True)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--level", type=int)
    r.add_argument("--dump", required=True)
    r.set_defaults(func=cmd_replay)

    pl = sub.add_parser("plot", help="SVG from a replay dump")
    pl.add_argument("--traj", required=True)
    pl.add_argument("--scenario", required=True)
    pl.add_argument("--mode", default="p3o_cbf")
    pl.add_argument("--out", default="reports/trajectory.svg")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingError, EpisodeFault) as exc:
        print(f"numerical fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, CheckpointError) as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
