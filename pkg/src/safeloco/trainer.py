"""Penalized proximal policy optimization with normalized cost advantages.

Three training modes share one code path:
  p3o_cbf             reward clip objective, hinge penalties on all three
                      cost channels (distance, actuation limits, barrier)
  p3o                 same machinery without the barrier channel and with
                      comfort reward terms zeroed
  ppo_reward_shaping  costs folded into the reward at collection time,
                      no penalty terms at all
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Graph, TrainingError, UsageError
from .checkpoint import load_arrays, save_arrays
from .config import RunConfig, apply_mode, config_hash
from .env import CmdpEnv, VectorEnv
from .networks import CriticNet, PolicyNet, n_costs_for_mode
from .nn import AdamState, adam_step, clamp_log_std
from .world import load_scenario

N_COST_CHANNELS = 3


# ---------------------------------------------------------------------------
# advantage machinery
# ---------------------------------------------------------------------------


def gae(rewards: np.ndarray, values: np.ndarray, next_values: np.ndarray,
        terminated: np.ndarray, truncated: np.ndarray,
        gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Recursive generalized advantage estimation over (T, N) arrays.

    ``next_values[t]`` must hold the value of the state that actually
    followed step t (the pre-reset final state at truncations); it is
    masked at terminations.  Returns (advantages, returns).
    """
    shape = rewards.shape
    for arr in (values, next_values, terminated, truncated):
        if arr.shape != shape:
            raise UsageError("gae: input arrays must share one (T, N) shape")
    T = shape[0]
    adv = np.zeros(shape)
    done = terminated | truncated
    last = np.zeros(shape[1]) if rewards.ndim > 1 else 0.0
    for t in reversed(range(T)):
        nonterminal = 1.0 - terminated[t]
        delta = rewards[t] + gamma * next_values[t] * nonterminal - values[t]
        last = delta + gamma * lam * (1.0 - done[t]) * last
        adv[t] = last
    return adv, adv + values


def normalize_advantages(adv: np.ndarray) -> tuple[np.ndarray, float, float]:
    """(adv - mean) / (std + 1e-8); returns the raw mean and std too."""
    flat = np.asarray(adv, dtype=np.float64).reshape(-1)
    if flat.size < 2:
        raise UsageError("normalize_advantages needs a batch of length >= 2")
    mu = float(flat.mean())
    sigma = float(flat.std())
    return (adv - mu) / (sigma + 1e-8), mu, sigma


def discounted_segment_returns(channel: np.ndarray, terminated: np.ndarray,
                               truncated: np.ndarray, gamma: float) -> float:
    """Mean over episode segments of the discounted sum of a (T, N) channel.

    Segments are the maximal runs between done flags inside the batch;
    partial segments at batch edges count as-is.
    """
    T, N = channel.shape
    done = terminated | truncated
    sums = []
    for n in range(N):
        acc = 0.0
        disc = 1.0
        for t in range(T):
            acc += disc * channel[t, n]
            disc *= gamma
            if done[t, n]:
                sums.append(acc)
                acc = 0.0
                disc = 1.0
        if disc < 1.0:           # open tail segment
            sums.append(acc)
    return float(np.mean(sums)) if sums else 0.0


# ---------------------------------------------------------------------------
# objective pieces (graph nodes)
# ---------------------------------------------------------------------------


def ppo_clip_loss(g: Graph, logp_new, logp_old: np.ndarray, adv_norm: np.ndarray,
                  clip_eps: float):
    """Clipped surrogate objective (to maximize), mean over the batch."""
    ratio = g.exp(g.sub(logp_new, g.constant(logp_old)))
    adv = g.constant(adv_norm)
    s1 = g.mul(ratio, adv)
    s2 = g.mul(g.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps), adv)
    return g.mean(g.minimum(s1, s2)), ratio


def cost_clip_term(g: Graph, ratio, adv_cost_norm: np.ndarray, clip_eps: float):
    """Pessimistic clipped surrogate of a cost advantage (elementwise max)."""
    adv = g.constant(adv_cost_norm)
    s1 = g.mul(ratio, adv)
    s2 = g.mul(g.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps), adv)
    return g.mean(g.maximum(s1, s2))


def violation_offset(j_c: float, d_j: float, gamma: float, mu: float,
                     sigma: float) -> float:
    """Constant part of the violation term: ((1-gamma)(J_C - d) + mu) / sigma.

    The denominator guard only engages for degenerate sigma, keeping the
    plain division exact otherwise.
    """
    return ((1.0 - gamma) * (j_c - d_j) + mu) / max(sigma, 1e-8)


def cost_violation_term(g: Graph, clip_loss_cost, j_c: float, d_j: float,
                        gamma: float, mu: float, sigma: float):
    """Full violation surrogate: clipped cost term plus the offset."""
    return g.add_const(clip_loss_cost, violation_offset(j_c, d_j, gamma, mu, sigma))


def p3o_loss(g: Graph, reward_clip_loss, violation_terms: list, kappas):
    """Reward objective minus hinged, weighted violation terms (to maximize)."""
    obj = reward_clip_loss
    for viol, kappa in zip(violation_terms, kappas):
        obj = g.sub(obj, g.scale(g.relu0(viol), kappa))
    return obj


# ---------------------------------------------------------------------------
# rollouts
# ---------------------------------------------------------------------------


@dataclass
class RolloutBatch:
    actor_obs: np.ndarray       # (T, N, Wa)
    critic_obs: np.ndarray      # (T, N, Wc)
    actions: np.ndarray         # (T, N, 4)
    log_probs: np.ndarray       # (T, N)
    rewards_raw: np.ndarray     # (T, N) env rewards
    rewards_train: np.ndarray   # (T, N) possibly cost-folded
    costs: np.ndarray           # (T, N, 3)
    terminated: np.ndarray      # (T, N) bool
    truncated: np.ndarray       # (T, N) bool
    values: np.ndarray          # (T, N, H)
    next_values: np.ndarray     # (T, N, H)

    @property
    def horizon(self) -> int:
        return self.actor_obs.shape[0]

    @property
    def n_envs(self) -> int:
        return self.actor_obs.shape[1]


def collect_rollouts(policy: PolicyNet, critic: CriticNet, vecenv: VectorEnv,
                     obs: tuple[np.ndarray, np.ndarray], horizon: int,
                     rng: np.random.Generator,
                     fold_weight: float | None = None):
    """Run the frozen policy for ``horizon`` vector steps.

    Returns (batch, next_obs).  When ``fold_weight`` is set the summed
    costs are folded into the training reward at collection time.
    """
    obs_a, obs_c = obs
    T, N = horizon, vecenv.n
    spec = vecenv.spec
    batch = RolloutBatch(
        actor_obs=np.empty((T, N, spec.actor_width)),
        critic_obs=np.empty((T, N, spec.critic_width)),
        actions=np.empty((T, N, 4)),
        log_probs=np.empty((T, N)),
        rewards_raw=np.empty((T, N)),
        rewards_train=np.empty((T, N)),
        costs=np.empty((T, N, 3)),
        terminated=np.zeros((T, N), dtype=bool),
        truncated=np.zeros((T, N), dtype=bool),
        values=np.empty((T, N, critic.n_heads)),
        next_values=np.empty((T, N, critic.n_heads)),
    )
    finals: dict[tuple[int, int], np.ndarray] = {}
    for t in range(T):
        actions, logps, _ = policy.act(obs_a, rng)
        batch.actor_obs[t] = obs_a
        batch.critic_obs[t] = obs_c
        batch.actions[t] = actions
        batch.log_probs[t] = logps
        obs_a, obs_c, rewards, costs, term, trunc, final_c = vecenv.step(actions)
        batch.rewards_raw[t] = rewards
        batch.costs[t] = costs
        batch.terminated[t] = term
        batch.truncated[t] = trunc
        if fold_weight is not None:
            batch.rewards_train[t] = rewards - fold_weight * costs.sum(axis=1)
        else:
            batch.rewards_train[t] = rewards
        for i, fo in final_c.items():
            finals[(t, i)] = fo

    H = critic.n_heads
    flat_values = critic.values_numpy(batch.critic_obs.reshape(T * N, -1))
    batch.values = flat_values.reshape(T, N, H)
    tail_values = critic.values_numpy(obs_c)                    # V(s_{T})
    batch.next_values[:-1] = batch.values[1:]
    batch.next_values[-1] = tail_values
    if finals:
        keys = sorted(finals)
        fv = critic.values_numpy(np.stack([finals[k] for k in keys]))
        for (t, i), v in zip(keys, fv):
            batch.next_values[t, i] = v
    return batch, (obs_a, obs_c)


# ---------------------------------------------------------------------------
# update
# ---------------------------------------------------------------------------


def _batch_diagnostics(batch: RolloutBatch) -> str:
    parts = []
    for name in ("rewards_train", "log_probs", "values"):
        arr = getattr(batch, name)
        parts.append(f"{name}: mean={np.nanmean(arr):.4g} min={np.nanmin(arr):.4g} "
                     f"max={np.nanmax(arr):.4g} nan={int(np.isnan(arr).sum())}")
    return "; ".join(parts)


def update(batch: RolloutBatch, policy: PolicyNet, critic: CriticNet,
           cfg, actor_opt: AdamState, critic_opt: AdamState,
           rng: np.random.Generator, entropy_coef: float) -> dict:
    """One P3O update over the batch: epochs x minibatches, actor by the
    penalized objective, every critic head by squared error."""
    T, N = batch.horizon, batch.n_envs
    B = T * N
    n_costs = critic.n_costs
    gamma, lam = cfg.gamma, cfg.gae_lambda

    adv_r, ret_r = gae(batch.rewards_train, batch.values[:, :, 0],
                       batch.next_values[:, :, 0], batch.terminated,
                       batch.truncated, gamma, lam)
    adv_r_norm, _, _ = normalize_advantages(adv_r)

    adv_c_norm = np.zeros((n_costs, T, N))
    ret_c = np.zeros((n_costs, T, N))
    offsets = np.zeros(n_costs)
    for j in range(n_costs):
        adv_j, ret_j = gae(batch.costs[:, :, j], batch.values[:, :, 1 + j],
                           batch.next_values[:, :, 1 + j], batch.terminated,
                           batch.truncated, gamma, lam)
        norm_j, mu_j, sigma_j = normalize_advantages(adv_j)
        j_c = discounted_segment_returns(batch.costs[:, :, j], batch.terminated,
                                         batch.truncated, gamma)
        adv_c_norm[j] = norm_j
        ret_c[j] = ret_j
        offsets[j] = violation_offset(j_c, cfg.d_thresholds[j], gamma, mu_j, sigma_j)

    obs_a = batch.actor_obs.reshape(B, -1)
    obs_c = batch.critic_obs.reshape(B, -1)
    actions = batch.actions.reshape(B, -1)
    logp_old = batch.log_probs.reshape(B)
    adv_rf = adv_r_norm.reshape(B)
    adv_cf = adv_c_norm.reshape(n_costs, B)
    ret_rf = ret_r.reshape(B, 1)
    ret_cf = ret_c.reshape(n_costs, B, 1)

    mb_size = B // cfg.minibatches
    actor_obj = critic_loss_val = entropy_val = 0.0
    n_passes = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(B)
        for k in range(cfg.minibatches):
            mb = perm[k * mb_size:(k + 1) * mb_size]

            g = Graph()
            head = policy.forward(g, g.constant(obs_a[mb]))
            logp_new = head.log_prob(g.constant(actions[mb]))
            clip_obj, ratio = ppo_clip_loss(g, logp_new, logp_old[mb],
                                            adv_rf[mb], cfg.clip_eps)
            viols = []
            for j in range(n_costs):
                cc = cost_clip_term(g, ratio, adv_cf[j][mb], cfg.clip_eps)
                viols.append(g.add_const(cc, offsets[j]))
            obj = p3o_loss(g, clip_obj, viols, cfg.kappa[:n_costs])
            ent = head.entropy()
            total = g.add(obj, g.scale(ent, entropy_coef))
            loss = g.neg(total)
            if not np.isfinite(loss.data):
                raise TrainingError(
                    f"non-finite actor loss; {_batch_diagnostics(batch)}")
            grads = g.backward(loss, policy.store)
            adam_step(policy.store, grads, actor_opt, lr=cfg.lr)
            clamp_log_std(policy.store, "log_std")

            g2 = Graph()
            values = critic.forward(g2, g2.constant(obs_c[mb]))
            v_losses = [g2.mean(g2.square(g2.sub(values[0], g2.constant(ret_rf[mb]))))]
            for j in range(n_costs):
                v_losses.append(g2.mean(g2.square(
                    g2.sub(values[1 + j], g2.constant(ret_cf[j][mb])))))
            v_total = v_losses[0]
            for vl in v_losses[1:]:
                v_total = g2.add(v_total, vl)
            if not np.isfinite(v_total.data):
                raise TrainingError(
                    f"non-finite critic loss; {_batch_diagnostics(batch)}")
            v_grads = g2.backward(v_total, critic.store)
            adam_step(critic.store, v_grads, critic_opt, lr=cfg.lr)

            actor_obj += float(obj.data)
            critic_loss_val += float(v_total.data)
            entropy_val += float(ent.data)
            n_passes += 1

    j_all = [discounted_segment_returns(batch.costs[:, :, j], batch.terminated,
                                        batch.truncated, gamma)
             for j in range(N_COST_CHANNELS)]
    return {
        "reward_mean": float(batch.rewards_raw.mean()),
        "J_C": j_all,
        "actor_objective": actor_obj / n_passes,
        "critic_loss": critic_loss_val / n_passes,
        "entropy": entropy_val / n_passes,
        "violation_offsets": offsets.tolist(),
    }


# ---------------------------------------------------------------------------
# full training runs
# ---------------------------------------------------------------------------


METRICS_COLUMNS = ["step", "reward", "J_C1", "J_C2", "J_C3", "success_rate", "level"]


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def build_nets(run_cfg: RunConfig, spec, seed_seq: np.random.SeedSequence
               ) -> tuple[PolicyNet, CriticNet]:
    rng_p, rng_c = (np.random.default_rng(c) for c in seed_seq.spawn(2))
    policy = PolicyNet(spec, init_log_std=run_cfg.train.init_log_std).init(rng_p)
    critic = CriticNet(spec, n_costs_for_mode(run_cfg.train.mode)).init(rng_c)
    return policy, critic


def checkpoint_arrays(policy: PolicyNet, critic: CriticNet, vecenv: VectorEnv
                      ) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    for name, arr in policy.store.items():
        arrays[f"actor/{name}"] = arr
    for name, arr in critic.store.items():
        arrays[f"critic/{name}"] = arr
    for key, arr in vecenv.actor_norm.state_arrays().items():
        arrays[f"norm_actor/{key}"] = arr
    for key, arr in vecenv.critic_norm.state_arrays().items():
        arrays[f"norm_critic/{key}"] = arr
    arrays["env/level"] = np.array([float(vecenv.level)])
    return arrays


def train(run_cfg: RunConfig, scenario_name: str, out_dir: str | Path,
          log=print) -> Path:
    """Full training run; writes config.json, metrics.csv and checkpoints
    into ``out_dir`` and returns the final checkpoint base path."""
    run_cfg = apply_mode(run_cfg, run_cfg.train.mode)
    tc = run_cfg.train
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(run_cfg.resolved_json())
    cfg_hash = config_hash(run_cfg)

    root = np.random.SeedSequence(run_cfg.seed)
    ss_nets, ss_rollout, ss_update, ss_envs = root.spawn(4)
    env_seeds = [int(s.generate_state(1)[0]) for s in ss_envs.spawn(tc.n_envs)]

    scenario = load_scenario(scenario_name)
    envs = [CmdpEnv(scenario, run_cfg.env, run_cfg.cbf, seed=s) for s in env_seeds]
    vecenv = VectorEnv(envs, normalize=run_cfg.env.normalize_obs, training=True)
    policy, critic = build_nets(run_cfg, vecenv.spec, ss_nets)
    log(f"[{run_cfg.run_name}] mode={tc.mode} scenario={scenario.name} "
        f"actor params={policy.n_params()} critic params={critic.n_params()}")

    rollout_rng = np.random.default_rng(ss_rollout)
    update_rng = np.random.default_rng(ss_update)
    actor_opt, critic_opt = AdamState(), AdamState()
    fold = tc.cost_fold_weight if tc.mode == "ppo_reward_shaping" else None

    steps_per_update = tc.n_envs * tc.horizon
    n_updates = max(1, math.ceil(tc.total_steps / steps_per_update))
    metrics_path = out / "metrics.csv"
    obs = vecenv.reset_all()
    t_start = time.monotonic()
    with metrics_path.open("w") as fh:
        fh.write(",".join(METRICS_COLUMNS) + "\n")
        for u in range(n_updates):
            batch, obs = collect_rollouts(policy, critic, vecenv, obs,
                                          tc.horizon, rollout_rng, fold)
            frac = u / n_updates
            ent = tc.entropy_coef * (1.0 - frac) if tc.entropy_anneal else tc.entropy_coef
            m = update(batch, policy, critic, tc, actor_opt, critic_opt,
                       update_rng, ent)
            step = (u + 1) * steps_per_update
            row = [step, m["reward_mean"], m["J_C"][0], m["J_C"][1], m["J_C"][2],
                   vecenv.recent_success_rate(), vecenv.level]
            fh.write(",".join(_fmt(x) for x in row) + "\n")
            fh.flush()
            if tc.checkpoint_every and (u + 1) % tc.checkpoint_every == 0:
                save_arrays(checkpoint_arrays(policy, critic, vecenv), step,
                            cfg_hash, out / f"ckpt_{step}")
            if (u + 1) % 5 == 0 or u == n_updates - 1:
                log(f"  update {u + 1}/{n_updates} step={step} "
                    f"reward={m['reward_mean']:.3f} J_C={[f'{j:.3f}' for j in m['J_C']]} "
                    f"success={vecenv.recent_success_rate():.2f} level={vecenv.level} "
                    f"entropy={m['entropy']:.2f} "
                    f"({time.monotonic() - t_start:.0f}s)")
    final_step = n_updates * steps_per_update
    base = out / f"ckpt_{final_step}"
    save_arrays(checkpoint_arrays(policy, critic, vecenv), final_step, cfg_hash, base)
    return base


def load_policy_from_checkpoint(ckpt_base: str | Path
                                ) -> tuple[PolicyNet, CriticNet, dict, RunConfig, int]:
    """Rebuild nets and normalizer state from a run checkpoint.

    The run directory's config.json (sibling of the checkpoint) supplies
    the architecture; a config-hash mismatch only warns.
    """
    base = Path(ckpt_base)
    cfg_path = base.parent / "config.json"
    if not cfg_path.exists():
        raise FileNotFoundError(f"missing {cfg_path} next to checkpoint")
    run_cfg = RunConfig.load(cfg_path)
    arrays, manifest = load_arrays(base, expect_config_hash=config_hash(run_cfg))

    from .env import ObsSpec
    spec = ObsSpec(run_cfg.env.history_len, run_cfg.env.lidar.scan_size)
    policy = PolicyNet(spec, init_log_std=run_cfg.train.init_log_std)
    critic = CriticNet(spec, n_costs_for_mode(run_cfg.train.mode))
    for full, arr in arrays.items():
        if full.startswith("actor/"):
            policy.store.create(full[len("actor/"):], arr)
        elif full.startswith("critic/"):
            critic.store.create(full[len("critic/"):], arr)
    norms = {k: v for k, v in arrays.items()
             if k.startswith("norm_actor/") or k.startswith("norm_critic/")}
    level = int(arrays.get("env/level", np.zeros(1))[0])
    return policy, critic, norms, run_cfg, level
