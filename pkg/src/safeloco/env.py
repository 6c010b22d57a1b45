"""CMDP wrapper over the world: observation histories, reward/cost
assembly, episode management, command generation, and curriculum.

The actor sees a 10-step history of proprioception, previous action and
command, plus the raw scan history; critics additionally receive
privileged ground truth (exact sector distances/closing speeds,
collision flag, the barrier value and actuation-limit indicators) that
only exists in simulation.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import world as W
from .autodiff import UsageError
from .cbf import BarrierEval, CbfConfig, cbf_cost, double_integrator, nearest_obstacle
from .config import EnvConfig
from .lidar import raycast
from .rewards import RewardFrame, compute_costs, compute_reward

STATE_RECORD_WIDTH = 13   # v_body(2) omega(1) tilt(2) height(1) prev_action(4) cmd(3)
N_PRIVILEGED = 16         # 8 sectors x (distance, closing speed)
N_EXTRAS = N_PRIVILEGED + 1 + 1 + 4   # + collision flag, h_D, limit indicators


@dataclass
class ObsSpec:
    """Widths and slice offsets shared by the env and the networks."""

    history_len: int
    scan_width: int

    @property
    def state_block(self) -> int:
        return self.history_len * STATE_RECORD_WIDTH

    @property
    def actor_width(self) -> int:
        return self.state_block + self.history_len * self.scan_width

    @property
    def critic_width(self) -> int:
        return self.actor_width + N_EXTRAS

    def scan_slice(self, t: int) -> tuple[int, int]:
        start = self.state_block + t * self.scan_width
        return start, start + self.scan_width


@dataclass
class StepResult:
    actor_obs: np.ndarray
    critic_obs: np.ndarray
    reward: float
    costs: np.ndarray             # (C_safe, C_limit, C_D)
    terminated: bool
    truncated: bool
    info: dict = field(default_factory=dict)


class CommandSampler:
    """Uniform command resampling within the configured ranges."""

    def __init__(self, cfg, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self._current = np.zeros(3)
        self._age = 0
        self.resample()

    def resample(self) -> None:
        c = self.cfg
        self._current = np.array([
            self.rng.uniform(*c.vx),
            self.rng.uniform(*c.vy),
            self.rng.uniform(*c.wz),
        ])
        self._age = 0

    def step(self) -> np.ndarray:
        self._age += 1
        if self._age >= self.cfg.resample_period:
            self.resample()
        return self._current.copy()

    def current(self) -> np.ndarray:
        return self._current.copy()


class CmdpEnv:
    """Single-instance environment; owns its full state and RNG streams."""

    def __init__(self, scenario: W.Scenario, env_cfg: EnvConfig, cbf_cfg: CbfConfig,
                 seed: int = 0, mask_rings: tuple[int, ...] = ()):
        self.scenario = scenario
        self.cfg = env_cfg
        self.cbf_cfg = cbf_cfg
        self.rcfg = env_cfg.reward_config()
        self.model = double_integrator(env_cfg.dt)
        self.spec = ObsSpec(env_cfg.history_len, env_cfg.lidar.scan_size)
        self.mask_rings = tuple(mask_rings)
        self.level = 0
        self._root_seed = int(seed)
        self._episode = -1
        self._done = True
        self._steps = 0

    # -- episode control ---------------------------------------------------

    def reset(self, seed: int | None = None, level: int | None = None) -> StepResult:
        if seed is not None:
            self._root_seed = int(seed)
            self._episode = -1
        if level is not None:
            self.level = int(level)
        self._episode += 1
        ss = np.random.SeedSequence([self._root_seed, self._episode])
        world_rng, noise_rng, cmd_rng = (np.random.default_rng(c) for c in ss.spawn(3))
        self._noise_rng = noise_rng

        for _ in range(20):
            self.obstacles, self.robot = W.instantiate(self.scenario, self.level, world_rng)
            if not W.collision_check(self.obstacles, self.robot):
                break
        else:
            raise W.ScenarioError(
                f"could not place a collision-free start in {self.scenario.name!r}")

        jit = self.cfg.lidar.yaw_jitter_deg
        self._yaw_offset = math.radians(world_rng.uniform(-jit, jit)) if jit > 0 else 0.0
        self._sampler = (CommandSampler(self.cfg.command, cmd_rng)
                         if self.scenario.goal.type == "commands" else None)
        self._steps = 0
        self._done = False
        self._collided = False
        self._faulted = False
        self._goal_latched = False
        self._track_err_sum = 0.0
        self._prev_action = np.zeros(4)
        self._prev_prev_action = np.zeros(4)
        self._limit_mask = np.zeros(4)
        self._command = self._next_command()

        self._sense()
        record = self._state_record()
        n = self.cfg.history_len
        self._records = deque([record.copy() for _ in range(n)], maxlen=n)
        self._scans = deque([self._actor_scan_vec().copy() for _ in range(n)], maxlen=n)
        return self._result(0.0, np.zeros(3), False, False, {})

    def step(self, action: np.ndarray) -> StepResult:
        if self._done:
            raise UsageError("step() after episode end; call reset() first")
        action = np.asarray(action, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(action)):
            self._done = True
            self._faulted = True
            info = {"fault": True, "success": False}
            return self._result(0.0, np.zeros(3), True, False, info)

        raw = action[:4]
        limit_mask = (np.abs(raw) > W.ACTION_BOUNDS + 1e-12).astype(np.float64)
        limit_violations = int(limit_mask.sum())
        clamped = W.clamp_action(raw)

        pre_state = np.concatenate([self.robot.p, self.robot.v])
        pre_barrier = self._barrier

        W.advance_agents(self.obstacles, self.cfg.dt)
        prev_height = self.robot.height
        self.robot = W.step_dynamics(self.robot, clamped, self.cfg.dt)
        u_world = self.robot.accel_cmd
        c_d = cbf_cost(self.model, self.cbf_cfg, pre_barrier, pre_state, u_world)

        self._limit_mask = limit_mask
        self._sense()

        v_z = (self.robot.height - prev_height) / self.cfg.dt
        frame = RewardFrame(
            v_body=self._v_body(),
            omega_z=self.robot.omega_z,
            command=self._command,
            v_world=self.robot.v.copy(),
            accel_world=u_world.copy(),
            v_z=v_z,
            action=clamped,
            prev_action=self._prev_action,
            prev_prev_action=self._prev_prev_action,
            eta=self._barrier.eta if self._barrier.active else None,
            d_human=self._d_human,
        )
        reward, terms = compute_reward(self.rcfg, frame)
        costs = compute_costs(self.rcfg, self._d_obs, limit_violations, c_d)

        self._steps += 1
        terminated = self._collision
        truncated = (not terminated) and self._steps >= self.scenario.episode_length
        self._collided = self._collided or self._collision

        if self.scenario.goal.type == "region":
            goal = self.scenario.goal
            if np.hypot(*(self.robot.p - goal.center)) <= goal.radius:
                self._goal_latched = True
        self._track_err_sum += float(np.hypot(*(self._v_body() - self._command[:2])))

        self._prev_prev_action = self._prev_action
        self._prev_action = clamped
        self._command = self._next_command()
        self._records.append(self._state_record())
        self._scans.append(self._actor_scan_vec())

        self._done = terminated or truncated
        info = {
            "d_obs": self._d_obs,
            "h": self._barrier.h,
            "collision": self._collision,
            "fault": False,
            "reward_terms": terms,
            "level": self.level,
        }
        if self._done:
            info["success"] = self._success(terminated)
            info["episode_steps"] = self._steps
        return self._result(reward, costs, terminated, truncated, info)

    def curriculum_update(self, recent_success_rate: float) -> int:
        """Promote/demote the difficulty level; applied at the next reset."""
        if recent_success_rate >= self.cfg.curriculum.promote_rate:
            self.level = min(self.level + 1, 2)
        elif recent_success_rate < self.cfg.curriculum.demote_rate:
            self.level = max(self.level - 1, 0)
        return self.level

    # -- internals ----------------------------------------------------------

    def _success(self, terminated: bool) -> bool:
        if self._collided or self._faulted or terminated:
            return False
        if self.scenario.success_rule == "reach_goal":
            return self._goal_latched
        mean_err = self._track_err_sum / max(self._steps, 1)
        return mean_err < 0.3

    def _sense(self) -> None:
        lc = self.cfg.lidar
        self.scan = raycast(self.obstacles, self.robot, lc, self._noise_rng,
                            self._yaw_offset)
        self._barrier: BarrierEval = nearest_obstacle(self.scan, self.robot, self.cbf_cfg)
        self._privileged = W.privileged_obstacle_info(self.obstacles, self.robot,
                                                      lc.max_range)
        self._d_obs = W.exact_obstacle_distance(self.obstacles, self.robot, lc.max_range)
        if any(ob.kind == "agent" for ob in self.obstacles):
            self._d_human = W.exact_obstacle_distance(self.obstacles, self.robot,
                                                      lc.max_range, kinds=("agent",))
        else:
            self._d_human = None
        self._collision = W.collision_check(self.obstacles, self.robot)

    def _v_body(self) -> np.ndarray:
        return W.rot(-self.robot.yaw) @ self.robot.v

    def _tilt_proxy(self) -> np.ndarray:
        # kinematic lean: last applied acceleration in the body frame, scaled
        return (W.rot(-self.robot.yaw) @ self.robot.accel_cmd) / W.ACTION_BOUNDS[0]

    def _state_record(self) -> np.ndarray:
        r = np.empty(STATE_RECORD_WIDTH)
        r[0:2] = self._v_body()
        r[2] = self.robot.omega_z
        r[3:5] = self._tilt_proxy()
        r[5] = self.robot.height
        r[6:10] = self._prev_action
        r[10:13] = self._command
        return r

    def _actor_scan_vec(self) -> np.ndarray:
        ranges = self.scan.ranges
        if self.mask_rings:
            ranges = ranges.copy()
            for ri in self.mask_rings:
                ranges[ri, :] = self.scan.cfg.max_range
        return ranges.reshape(-1)

    def _next_command(self) -> np.ndarray:
        if self._sampler is not None:
            return self._sampler.step() if self._steps > 0 else self._sampler.current()
        goal = self.scenario.goal
        delta = goal.center - self.robot.p
        dist = float(np.hypot(*delta))
        if dist <= goal.radius:
            return np.zeros(3)
        bearing = W.geo.wrap_angle(math.atan2(delta[1], delta[0]) - self.robot.yaw)
        speed = min(self.cfg.command.vx[1], 1.2 * (dist - 0.5 * goal.radius))
        speed = max(speed, 0.0)
        c = self.cfg.command
        return np.array([
            min(max(speed * math.cos(bearing), c.vx[0]), c.vx[1]),
            min(max(speed * math.sin(bearing), c.vy[0]), c.vy[1]),
            min(max(1.5 * bearing, c.wz[0]), c.wz[1]),
        ])

    def actor_obs(self) -> np.ndarray:
        return np.concatenate([np.concatenate(list(self._records)),
                               np.concatenate(list(self._scans))])

    def critic_obs(self) -> np.ndarray:
        extras = np.empty(N_EXTRAS)
        extras[0:16] = self._privileged.reshape(-1)
        extras[16] = 1.0 if self._collision else 0.0
        extras[17] = self._barrier.h
        extras[18:22] = self._limit_mask
        return np.concatenate([self.actor_obs(), extras])

    def _result(self, reward, costs, terminated, truncated, info) -> StepResult:
        return StepResult(self.actor_obs(), self.critic_obs(), float(reward),
                          np.asarray(costs, dtype=np.float64), terminated,
                          truncated, info)


# ---------------------------------------------------------------------------
# observation normalization + vectorization
# ---------------------------------------------------------------------------


class RunningNorm:
    """Per-dimension running mean/variance (parallel Welford combine)."""

    def __init__(self, width: int):
        self.mean = np.zeros(width)
        self.var = np.ones(width)
        self.count = 1e-4

    def update(self, batch: np.ndarray) -> None:
        batch = np.atleast_2d(batch)
        n = batch.shape[0]
        b_mean = batch.mean(axis=0)
        b_var = batch.var(axis=0)
        delta = b_mean - self.mean
        tot = self.count + n
        self.mean = self.mean + delta * (n / tot)
        m_a = self.var * self.count
        m_b = b_var * n
        self.var = (m_a + m_b + delta * delta * (self.count * n / tot)) / tot
        self.count = tot

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return np.clip((x - self.mean) / np.sqrt(self.var + 1e-8), -10.0, 10.0)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {"mean": self.mean, "var": self.var,
                "count": np.array([self.count])}

    def load_state(self, mean: np.ndarray, var: np.ndarray, count: np.ndarray) -> None:
        self.mean = np.asarray(mean, dtype=np.float64)
        self.var = np.asarray(var, dtype=np.float64)
        self.count = float(count[0])


@dataclass
class EpisodeStats:
    success: bool
    steps: int
    reward_sum: float
    cost_sums: np.ndarray


class VectorEnv:
    """N independent env instances with shared normalizers and curriculum."""

    def __init__(self, envs: list[CmdpEnv], normalize: bool = True,
                 training: bool = True):
        self.envs = envs
        self.spec = envs[0].spec
        self.normalize = normalize
        self.training = training
        self.actor_norm = RunningNorm(self.spec.actor_width)
        self.critic_norm = RunningNorm(self.spec.critic_width)
        rule = envs[0].cfg.curriculum
        self._successes = deque(maxlen=rule.window)
        self._episodes_at_level = 0
        self._reward_accum = np.zeros(len(envs))
        self._cost_accum = np.zeros((len(envs), 3))
        self.completed: list[EpisodeStats] = []

    @property
    def n(self) -> int:
        return len(self.envs)

    @property
    def level(self) -> int:
        return self.envs[0].level

    def reset_all(self) -> tuple[np.ndarray, np.ndarray]:
        actor = np.stack([e.reset().actor_obs for e in self.envs])
        critic = np.stack([e.critic_obs() for e in self.envs])
        if self.normalize and self.training:
            self.actor_norm.update(actor)
            self.critic_norm.update(critic)
        return self._norm_a(actor), self._norm_c(critic)

    def step(self, actions: np.ndarray):
        """Steps every env, auto-resets finished ones.

        Returns normalized (actor, critic) observations of the state the
        next action will be chosen in, plus per-step arrays and, for
        envs that ended this step, the normalized critic observation of
        the final state (for bootstrapping) keyed by env index.
        """
        n = self.n
        rewards = np.zeros(n)
        costs = np.zeros((n, 3))
        terminated = np.zeros(n, dtype=bool)
        truncated = np.zeros(n, dtype=bool)
        actor = np.empty((n, self.spec.actor_width))
        critic = np.empty((n, self.spec.critic_width))
        final_critic: dict[int, np.ndarray] = {}
        for i, env in enumerate(self.envs):
            res = env.step(actions[i])
            rewards[i] = res.reward
            costs[i] = res.costs
            terminated[i] = res.terminated
            truncated[i] = res.truncated
            self._reward_accum[i] += res.reward
            self._cost_accum[i] += res.costs
            if res.terminated or res.truncated:
                final_critic[i] = res.critic_obs
                self._finish_episode(i, res)
                fresh = env.reset()
                actor[i] = fresh.actor_obs
                critic[i] = fresh.critic_obs
            else:
                actor[i] = res.actor_obs
                critic[i] = res.critic_obs
        if self.normalize and self.training:
            self.actor_norm.update(actor)
            self.critic_norm.update(critic)
        for i in final_critic:
            final_critic[i] = self._norm_c(final_critic[i])
        return (self._norm_a(actor), self._norm_c(critic), rewards, costs,
                terminated, truncated, final_critic)

    def _finish_episode(self, i: int, res: StepResult) -> None:
        success = bool(res.info.get("success", False))
        self.completed.append(EpisodeStats(
            success=success,
            steps=int(res.info.get("episode_steps", 0)),
            reward_sum=float(self._reward_accum[i]),
            cost_sums=self._cost_accum[i].copy(),
        ))
        self._reward_accum[i] = 0.0
        self._cost_accum[i] = 0.0
        self._successes.append(1.0 if success else 0.0)
        self._episodes_at_level += 1
        rule = self.envs[0].cfg.curriculum
        if self._episodes_at_level >= rule.min_episodes and self._successes:
            rate = float(np.mean(self._successes))
            old = self.level
            new = self.envs[0].curriculum_update(rate)
            for env in self.envs[1:]:
                env.level = new
            if new != old:
                self._successes.clear()
                self._episodes_at_level = 0

    def recent_success_rate(self) -> float:
        if not self._successes:
            return 0.0
        return float(np.mean(self._successes))

    def _norm_a(self, x: np.ndarray) -> np.ndarray:
        return self.actor_norm.normalize(x) if self.normalize else x

    def _norm_c(self, x: np.ndarray) -> np.ndarray:
        return self.critic_norm.normalize(x) if self.normalize else x
