"""Multi-ring raycast LiDAR over the 2.5-D world.

Rays fan out at fixed azimuths in the robot's yaw-aligned frame, one fan
per elevation ring.  Ring heights are absolute above the ground plane,
so a ring only sees obstacles whose vertical extent contains its height.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .world import Obstacle, RobotBody


@dataclass
class LidarConfig:
    n_azimuth: int = 64
    elevation_rings: tuple[float, ...] = (0.15, 0.45, 0.75)
    max_range: float = 10.0
    range_noise_std: float = 0.01
    yaw_jitter_deg: float = 2.0     # per-episode mounting-offset randomization

    def __post_init__(self):
        if self.n_azimuth < 8:
            raise ValueError("n_azimuth must be at least 8")
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")
        self.elevation_rings = tuple(float(z) for z in self.elevation_rings)

    @property
    def n_rings(self) -> int:
        return len(self.elevation_rings)

    @property
    def scan_size(self) -> int:
        return self.n_rings * self.n_azimuth

    def azimuths(self) -> np.ndarray:
        return np.arange(self.n_azimuth) * (2.0 * math.pi / self.n_azimuth)


@dataclass
class LidarScan:
    """ranges[ring, azimuth] in meters, max_range where nothing was hit."""

    ranges: np.ndarray
    cfg: LidarConfig

    def flat(self) -> np.ndarray:
        return self.ranges.reshape(-1)


def raycast(obstacles: list[Obstacle], robot: RobotBody, cfg: LidarConfig,
            rng: np.random.Generator | None = None,
            yaw_offset: float = 0.0) -> LidarScan:
    """Cast every ring's fan and return noisy ranges.

    ``yaw_offset`` models a mounting error: the physical rays rotate by
    it, while consumers keep interpreting the scan in the assumed frame.
    Noise is added to hits only, then clamped into (0, max_range]; rays
    that hit nothing read exactly max_range.
    """
    angles = robot.yaw + yaw_offset + cfg.azimuths()
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    ranges = np.full((cfg.n_rings, cfg.n_azimuth), np.inf)
    for ob in obstacles:
        hits = None          # all rings share directions: cast once per obstacle
        for ri, z in enumerate(cfg.elevation_rings):
            if not ob.contains_z(z):
                continue
            if hits is None:
                hits = ob.ray_hits(robot.p, dirs)
            np.minimum(ranges[ri], hits, out=ranges[ri])
    hit = np.isfinite(ranges) & (ranges < cfg.max_range)
    if rng is not None and cfg.range_noise_std > 0.0:
        noise = rng.normal(0.0, cfg.range_noise_std, size=ranges.shape)
        ranges = np.where(hit, ranges + noise, ranges)
    ranges = np.where(hit, np.clip(ranges, 1e-6, cfg.max_range), cfg.max_range)
    return LidarScan(ranges=ranges, cfg=cfg)


def scan_endpoints(scan: LidarScan, robot: RobotBody) -> np.ndarray:
    """World-frame endpoints (n_rings, n_azimuth, 2) in the assumed frame."""
    angles = robot.yaw + scan.cfg.azimuths()
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return robot.p[None, None, :] + scan.ranges[:, :, None] * dirs[None, :, :]
