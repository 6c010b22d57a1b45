"""Discrete control-barrier safety layer.

The barrier is the signed distance from the robot's planar position to a
hyperplane tangent to the nearest scanned obstacle point, minus a hard
margin.  Holding that hyperplane fixed over one predicted step of a
linear model makes the one-step safety condition affine in the control,
which is what lets its violation become a plain scalar cost.  The
closed-form projection onto the safe half-space exists purely as a test
oracle; the learned policy is never filtered.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lidar import LidarScan, scan_endpoints
from .world import RobotBody


@dataclass
class CbfConfig:
    gamma_cbf: float = 0.6
    d_min: float = 0.8
    normal_estimation: str = "nearest"   # "nearest" | "plane_fit_k"
    plane_fit_k: int = 5

    def __post_init__(self):
        if not 0.0 < self.gamma_cbf <= 1.0:
            raise ValueError("gamma_cbf must lie in (0, 1]")
        if self.d_min < 0.0:
            raise ValueError("d_min must be nonnegative")
        if self.normal_estimation not in ("nearest", "plane_fit_k"):
            raise ValueError(f"unknown normal_estimation {self.normal_estimation!r}")


@dataclass
class LinearModel:
    """s' = A s + B u with a selector extracting the planar position."""

    a_mat: np.ndarray
    b_mat: np.ndarray
    position_selector: np.ndarray
    dt: float

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        n = self.a_mat.shape[0]
        assert self.a_mat.shape == (n, n)
        assert self.b_mat.shape[0] == n
        assert self.position_selector.shape == (2, n)


def double_integrator(dt: float) -> LinearModel:
    """Planar double integrator matching the simulator's semi-implicit
    Euler update: v' = v + u dt, p' = p + v' dt."""
    a = np.array([
        [1.0, 0.0, dt, 0.0],
        [0.0, 1.0, 0.0, dt],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])
    b = np.array([
        [dt * dt, 0.0],
        [0.0, dt * dt],
        [dt, 0.0],
        [0.0, dt],
    ])
    sel = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
    return LinearModel(a, b, sel, dt)


@dataclass
class BarrierEval:
    """One barrier evaluation: h = eta . (p - o) - d_min.

    ``o`` is the nearest obstacle point, ``eta`` the unit normal pointing
    from the obstacle toward the robot.  ``active`` is False for the
    no-return sentinel, where h equals the sensor max range.
    """

    h: float
    o: np.ndarray
    eta: np.ndarray
    d_min: float
    active: bool = True


def _sentinel(robot: RobotBody, d_min: float, max_range: float) -> BarrierEval:
    eta = -robot.heading()
    o = robot.p - (max_range + d_min) * eta
    return BarrierEval(h=max_range, o=o, eta=eta, d_min=d_min, active=False)


def nearest_obstacle(scan: LidarScan, robot: RobotBody, cfg: CbfConfig) -> BarrierEval:
    """Barrier evaluation from the minimum-distance scan return.

    Only rings whose height falls inside the robot's vertical band
    [0, height] participate.  Ties resolve to the lowest azimuth index,
    then the lowest ring index.  With no finite return the sentinel
    (h = max_range, inactive) is returned.
    """
    lc = scan.cfg
    rings = [i for i, z in enumerate(lc.elevation_rings) if 0.0 <= z <= robot.height]
    if not rings:
        return _sentinel(robot, cfg.d_min, lc.max_range)
    sub = scan.ranges[rings]                      # (k, n_az)
    finite = sub < lc.max_range - 1e-9
    if not finite.any():
        return _sentinel(robot, cfg.d_min, lc.max_range)
    masked = np.where(finite, sub, np.inf)
    # transpose so argmin's first-match order is (azimuth, ring)
    flat = masked.T.reshape(-1)
    idx = int(np.argmin(flat))
    az = idx // len(rings)
    ring_local = idx % len(rings)
    ring = rings[ring_local]
    r = float(scan.ranges[ring, az])
    angle = robot.yaw + 2.0 * math.pi * az / lc.n_azimuth
    o = robot.p + r * np.array([math.cos(angle), math.sin(angle)])
    if r < 1e-9:
        # robot coincident with the return: deterministic fallback
        eta = -robot.heading()
        return BarrierEval(h=-cfg.d_min, o=robot.p.copy(), eta=eta,
                           d_min=cfg.d_min, active=True)
    if cfg.normal_estimation == "plane_fit_k":
        eta = _plane_fit_normal(scan, robot, ring, az, cfg.plane_fit_k)
    else:
        eta = (robot.p - o) / r
    h = float(eta @ (robot.p - o) - cfg.d_min)
    return BarrierEval(h=h, o=o, eta=eta, d_min=cfg.d_min, active=True)


def _plane_fit_normal(scan: LidarScan, robot: RobotBody, ring: int, az: int,
                      k: int) -> np.ndarray:
    """Normal from a total-least-squares line fit over the k nearest
    same-ring neighbors of the minimum return, oriented toward the robot."""
    lc = scan.cfg
    half = max(k // 2, 1)
    idxs = [(az + d) % lc.n_azimuth for d in range(-half, half + 1)]
    pts = []
    ends = scan_endpoints(scan, robot)
    for j in idxs:
        if scan.ranges[ring, j] < lc.max_range - 1e-9:
            pts.append(ends[ring, j])
    pts = np.asarray(pts)
    anchor = ends[ring, az]
    if len(pts) < 2:
        d = robot.p - anchor
        return d / np.hypot(*d)
    centered = pts - pts.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    normal = vt[-1]
    if normal @ (robot.p - anchor) < 0:
        normal = -normal
    return normal / np.hypot(*normal)


def barrier_h(barrier: BarrierEval, p: np.ndarray):
    """h at arbitrary planar position(s) under the frozen hyperplane.

    Accepts a single point (2,) or a batch (B, 2).
    """
    out = (np.asarray(p, dtype=np.float64) - barrier.o) @ barrier.eta - barrier.d_min
    return float(out) if out.ndim == 0 else out


def g_d(model: LinearModel, cfg: CbfConfig, barrier: BarrierEval,
        state: np.ndarray, control: np.ndarray):
    """One-step safety surrogate, affine in the control.

    Evaluates h at the model-predicted next position with the obstacle
    point and normal held fixed, minus (1 - gamma) times the current h.
    States/controls may be single vectors or (B, n)/(B, m) batches.
    """
    state = np.asarray(state, dtype=np.float64)
    control = np.asarray(control, dtype=np.float64)
    p_now = state @ model.position_selector.T
    nxt = state @ model.a_mat.T + control @ model.b_mat.T
    p_next = nxt @ model.position_selector.T
    out = (barrier_h(barrier, p_next)
           - (1.0 - cfg.gamma_cbf) * barrier_h(barrier, p_now))
    return float(out) if np.ndim(out) == 0 else out


def cbf_cost(model: LinearModel, cfg: CbfConfig, barrier: BarrierEval,
             state: np.ndarray, control: np.ndarray):
    """Hinge on the violated one-step condition; zero exactly when g_d >= 0."""
    out = np.maximum(0.0, -np.asarray(g_d(model, cfg, barrier, state, control)))
    return float(out) if out.ndim == 0 else out


def dcbf_check(h_next: float, h_curr: float, gamma_cbf: float) -> bool:
    """Discrete-time forward-invariance inequality."""
    return h_next + (gamma_cbf - 1.0) * h_curr >= 0.0


@dataclass
class ProjectionResult:
    control: np.ndarray
    projected: bool
    unconstrainable: bool


def safe_projection(model: LinearModel, cfg: CbfConfig, barrier: BarrierEval,
                    state: np.ndarray, desired_control: np.ndarray) -> ProjectionResult:
    """Minimal-norm correction of the control onto the half-space g_d >= 0.

    Test oracle only.  If the control cannot influence g_d (zero
    sensitivity) the desired control comes back flagged unconstrainable.
    A 1e-12 interior slack keeps the corrected control strictly feasible
    under floating-point roundoff.  Batched (B, m) controls with (B, n)
    states project each row independently.
    """
    desired_control = np.asarray(desired_control, dtype=np.float64)
    sens = barrier.eta @ model.position_selector @ model.b_mat   # (m,)
    g_des = g_d(model, cfg, barrier, state, desired_control)
    denom = float(sens @ sens)
    if desired_control.ndim == 2:
        viol = np.asarray(g_des) < 0.0
        out = desired_control.copy()
        if not viol.any():
            return ProjectionResult(out, viol, False)
        if denom < 1e-14:
            return ProjectionResult(out, np.zeros_like(viol), True)
        corr = (np.asarray(g_des) - 1e-12) / denom
        out[viol] -= corr[viol, None] * sens
        return ProjectionResult(out, viol, False)
    if g_des >= 0.0:
        return ProjectionResult(desired_control.copy(), False, False)
    if denom < 1e-14:
        return ProjectionResult(desired_control.copy(), False, True)
    u = desired_control - ((g_des - 1e-12) / denom) * sens
    return ProjectionResult(u, True, False)
