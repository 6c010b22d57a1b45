"""Reward and cost terms for the navigation CMDP.

Task tracking terms use body-frame velocities against the commanded
ones; comfort terms use world-frame kinematics against the scanned
nearest-obstacle normal.  Joint-space penalties of the original platform
map onto the planar proxy as action magnitude / smoothing penalties.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class RewardConfig:
    weights: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    alpha_v: float = 4.0
    alpha_w: float = 4.0
    alpha_p: float = 2.0
    d_social: float = 1.2
    d_safe: float = 0.8


DEFAULT_WEIGHTS = {
    "velocity_tracking": 2.0,
    "yaw_tracking": 0.5,
    "z_velocity": -3e-4,
    "action_magnitude": -1e-6,
    "action_smoothing": -5e-3,
    "action_smoothing_rate": -1e-5,
    "proxemic": 1.5,
    "approach_velocity": -1.0,
    "approach_accel": -1.0,
    "tangential": 1.0,
}

COMFORT_TERMS = ("proxemic", "approach_velocity", "approach_accel", "tangential")


@dataclass
class RewardFrame:
    """Everything one step's reward/cost evaluation needs."""

    v_body: np.ndarray            # planar velocity, body frame
    omega_z: float
    command: np.ndarray           # (vx_cmd, vy_cmd, wz_cmd), body frame
    v_world: np.ndarray
    accel_world: np.ndarray       # applied planar acceleration
    v_z: float                    # realized height rate
    action: np.ndarray            # clamped action, 4 dims
    prev_action: np.ndarray
    prev_prev_action: np.ndarray
    eta: np.ndarray | None        # unit normal obstacle->robot; None if no return
    d_human: float | None         # surface distance to nearest agent; None if none


def compute_reward(cfg: RewardConfig, frame: RewardFrame) -> tuple[float, dict[str, float]]:
    """Weighted sum of every in-scope reward row, plus the per-term map.

    With no obstacle in view the approach terms are 0 and the tangential
    term sits at its maximum; with no agents the proxemic term is 0.
    """
    w = cfg.weights
    terms: dict[str, float] = {}

    v_err = frame.v_body - frame.command[:2]
    terms["velocity_tracking"] = w["velocity_tracking"] * math.exp(
        -cfg.alpha_v * float(v_err @ v_err))
    terms["yaw_tracking"] = w["yaw_tracking"] * math.exp(
        -cfg.alpha_w * (frame.omega_z - frame.command[2]) ** 2)
    terms["z_velocity"] = w["z_velocity"] * frame.v_z ** 2
    terms["action_magnitude"] = w["action_magnitude"] * float(frame.action @ frame.action)
    da = frame.prev_action - frame.action
    terms["action_smoothing"] = w["action_smoothing"] * float(da @ da)
    dda = frame.prev_prev_action - 2.0 * frame.prev_action + frame.action
    terms["action_smoothing_rate"] = w["action_smoothing_rate"] * float(dda @ dda)

    if frame.d_human is None:
        terms["proxemic"] = 0.0
    else:
        terms["proxemic"] = w["proxemic"] * math.exp(
            -cfg.alpha_p * (frame.d_human - cfg.d_social) ** 2)

    if frame.eta is None:
        terms["approach_velocity"] = 0.0
        terms["approach_accel"] = 0.0
        terms["tangential"] = w["tangential"] * 1.0
    else:
        eta = frame.eta
        terms["approach_velocity"] = w["approach_velocity"] * max(
            0.0, -float(frame.v_world @ eta))
        terms["approach_accel"] = w["approach_accel"] * max(
            0.0, -float(frame.accel_world @ eta))
        speed = float(np.hypot(*frame.v_world))
        if speed < 1e-9:
            terms["tangential"] = w["tangential"] * 1.0
        else:
            v_hat = frame.v_world / speed
            # d_hat points from the obstacle toward the robot, i.e. eta
            terms["tangential"] = w["tangential"] * (
                1.0 - max(0.0, float(v_hat @ (-eta))))

    return sum(terms.values()), terms


def compute_costs(cfg: RewardConfig, d_obs: float, limit_violations: int,
                  cbf_cost_value: float) -> np.ndarray:
    """(C_safe, C_limit, C_D): distance indicator, actuation-bound
    violation count, and the one-step barrier violation hinge."""
    c_safe = 1.0 if d_obs < cfg.d_safe else 0.0
    return np.array([c_safe, float(limit_violations), cbf_cost_value])
