"""Scenario evaluation bench: deterministic trials, safety/comfort time
metrics, ablation orchestration, and CSV/SVG report emission.

Evaluation always replaces the stochastic policy by its mean action, so
a (checkpoint, seed) pair fully determines every reported number.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig, apply_mode
from .env import CmdpEnv, RunningNorm
from .svg import write_trajectory_svg
from .trainer import load_policy_from_checkpoint, train
from .world import load_scenario


@dataclass
class TrialRecord:
    seed: int
    success: bool
    collided: bool
    steps: int
    t_unsafe: float
    t_uncomfortable: float
    reward_sum: float
    min_d_obs: float


@dataclass
class Trajectory:
    positions: np.ndarray        # (K, 2)
    heights: np.ndarray          # (K,)
    yaws: np.ndarray             # (K,)
    velocities: np.ndarray       # (K, 2)
    omegas: np.ndarray           # (K,)
    d_obs: np.ndarray            # (K,) exact nearest-obstacle distance
    h_vals: np.ndarray           # (K,) barrier values
    rewards: np.ndarray
    costs: np.ndarray            # (K, 3)
    actions: np.ndarray          # (K, 4)
    reward_terms: list[dict]
    obstacles: list
    success: bool
    collided: bool


@dataclass
class EvalReport:
    scenario: str
    mode: str
    n_trials: int
    success_rate: float
    mean_t_unsafe: float
    mean_t_uncomfortable: float
    mean_episode_steps: float
    trials: list[TrialRecord] = field(default_factory=list)

    ROW_FIELDS = ("seed", "success", "collided", "steps", "t_unsafe",
                  "t_uncomfortable", "reward_sum", "min_d_obs")

    def write_csv(self, path: str | Path) -> Path:
        out = Path(path)
        out.parent.mkdir(parents=True, exist_ok=True)
        with out.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scenario", "mode", *self.ROW_FIELDS])
            for t in self.trials:
                w.writerow([self.scenario, self.mode,
                            *[getattr(t, f) for f in self.ROW_FIELDS]])
        return out


def comfort_metrics(d_obs: np.ndarray, dt: float, unsafe: float = 0.6,
                    comfortable: float = 1.2) -> tuple[float, float]:
    """Seconds spent in the unsafe band (< unsafe) and in the
    uncomfortable-but-safe band [unsafe, comfortable)."""
    d = np.asarray(d_obs)
    t_unsafe = dt * int((d < unsafe).sum())
    t_uncomfortable = dt * int(((d >= unsafe) & (d < comfortable)).sum())
    return float(t_unsafe), float(t_uncomfortable)


def _frozen_norm(norms: dict, prefix: str, width: int) -> RunningNorm:
    rn = RunningNorm(width)
    if f"{prefix}/mean" in norms:
        rn.load_state(norms[f"{prefix}/mean"], norms[f"{prefix}/var"],
                      norms[f"{prefix}/count"])
    return rn


def run_episode(ckpt_base: str | Path, scenario_name: str, seed: int,
                level: int | None = None,
                mask_rings: tuple[int, ...] = ()) -> Trajectory:
    """One deterministic mean-action episode, fully recorded."""
    policy, _, norms, run_cfg, ckpt_level = load_policy_from_checkpoint(ckpt_base)
    scenario = load_scenario(scenario_name)
    env = CmdpEnv(scenario, run_cfg.env, run_cfg.cbf, seed=seed,
                  mask_rings=mask_rings)
    norm = _frozen_norm(norms, "norm_actor", env.spec.actor_width)
    use_level = ckpt_level if level is None else level
    res = env.reset(seed=seed, level=use_level)

    positions, heights, yaws, vels, omegas = [], [], [], [], []
    d_obs, h_vals, rewards, costs, actions, terms = [], [], [], [], [], []
    success = False
    collided = False
    while True:
        obs = norm.normalize(res.actor_obs) if run_cfg.env.normalize_obs else res.actor_obs
        action, _, _ = policy.act(obs[None])
        res = env.step(action[0])
        positions.append(env.robot.p.copy())
        heights.append(env.robot.height)
        yaws.append(env.robot.yaw)
        vels.append(env.robot.v.copy())
        omegas.append(env.robot.omega_z)
        d_obs.append(res.info.get("d_obs", np.inf))
        h_vals.append(res.info.get("h", np.inf))
        rewards.append(res.reward)
        costs.append(res.costs)
        actions.append(action[0])
        terms.append(res.info.get("reward_terms", {}))
        if res.terminated or res.truncated:
            success = bool(res.info.get("success", False))
            collided = bool(res.info.get("collision", False))
            break
    return Trajectory(
        positions=np.asarray(positions), heights=np.asarray(heights),
        yaws=np.asarray(yaws), velocities=np.asarray(vels),
        omegas=np.asarray(omegas),
        d_obs=np.asarray(d_obs), h_vals=np.asarray(h_vals),
        rewards=np.asarray(rewards), costs=np.asarray(costs),
        actions=np.asarray(actions), reward_terms=terms,
        obstacles=env.obstacles, success=success, collided=collided)


def _trial(args) -> TrialRecord:
    ckpt, scenario_name, seed, level, dt, unsafe, comfortable, mask = args
    traj = run_episode(ckpt, scenario_name, seed, level, mask)
    t_un, t_unc = comfort_metrics(traj.d_obs, dt, unsafe, comfortable)
    return TrialRecord(
        seed=seed, success=traj.success, collided=traj.collided,
        steps=len(traj.rewards), t_unsafe=t_un, t_uncomfortable=t_unc,
        reward_sum=float(traj.rewards.sum()), min_d_obs=float(traj.d_obs.min()))


def run_trials(ckpt_base: str | Path, scenario_name: str, n: int,
               seeds: list[int] | None = None, level: int | None = None,
               jobs: int = 1, mask_rings: tuple[int, ...] = ()) -> EvalReport:
    """n deterministic trials; per-trial seeds vary the start jitter,
    sensor noise and agent phases."""
    _, _, _, run_cfg, _ = load_policy_from_checkpoint(ckpt_base)
    if seeds is None:
        seeds = [int(s.generate_state(1)[0]) for s in
                 np.random.SeedSequence(run_cfg.seed + 1000).spawn(n)]
    if len(seeds) != n:
        raise ValueError("need exactly one seed per trial")
    ecfg = run_cfg.env
    args = [(str(ckpt_base), scenario_name, s, level, ecfg.dt,
             ecfg.unsafe_threshold, ecfg.comfort_threshold, tuple(mask_rings))
            for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            trials = list(pool.map(_trial, args))
    else:
        trials = [_trial(a) for a in args]
    return EvalReport(
        scenario=scenario_name,
        mode=run_cfg.train.mode,
        n_trials=n,
        success_rate=float(np.mean([t.success for t in trials])),
        mean_t_unsafe=float(np.mean([t.t_unsafe for t in trials])),
        mean_t_uncomfortable=float(np.mean([t.t_uncomfortable for t in trials])),
        mean_episode_steps=float(np.mean([t.steps for t in trials])),
        trials=trials,
    )


# ---------------------------------------------------------------------------
# ablation study
# ---------------------------------------------------------------------------

ABLATION_MODES = ("ppo_reward_shaping", "p3o", "p3o_cbf")


def run_ablation(scenario_names: list[str], base_cfg: RunConfig, budget: int,
                 out_dir: str | Path, modes=ABLATION_MODES,
                 trials: int | None = None, log=print) -> dict[str, Path]:
    """Train every mode per scenario with identical budgets and seeds,
    evaluate, and emit Table II/III-shaped CSVs plus trajectory plots."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_trials = trials if trials is not None else base_cfg.eval.ablation_trials
    table2_rows = []
    table3_rows = []
    for scenario_name in scenario_names:
        for mode in modes:
            cfg = apply_mode(base_cfg, mode)
            doc = cfg.to_dict()
            doc["train"]["total_steps"] = int(budget)
            doc["run_name"] = f"{scenario_name}_{mode}"
            cfg = RunConfig.from_dict(doc)
            run_dir = out / f"{scenario_name}_{mode}"
            log(f"[ablation] training {mode} on {scenario_name} "
                f"(budget {budget} steps)")
            ckpt = train(cfg, scenario_name, run_dir, log=log)
            report = run_trials(ckpt, scenario_name, n_trials,
                                level=cfg.eval.level, jobs=cfg.eval.jobs)
            report.write_csv(out / f"trials_{scenario_name}_{mode}.csv")
            table2_rows.append([scenario_name, mode, n_trials,
                                repr(report.mean_t_unsafe),
                                repr(report.mean_t_uncomfortable)])
            table3_rows.append([scenario_name, mode, n_trials,
                                repr(report.success_rate)])
            traj = run_episode(ckpt, scenario_name,
                               seed=int(cfg.seed) + 7, level=cfg.eval.level)
            scenario = load_scenario(scenario_name)
            write_trajectory_svg(traj.positions, scenario, traj.obstacles, mode,
                                 out / f"traj_{scenario_name}_{mode}.svg")
    t2 = out / "table2.csv"
    with t2.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "mode", "n_trials", "mean_t_unsafe_s",
                    "mean_t_uncomfortable_s"])
        w.writerows(table2_rows)
    t3 = out / "table3.csv"
    with t3.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "mode", "n_trials", "success_rate"])
        w.writerows(table3_rows)
    return {"table2": t2, "table3": t3}
