"""Deterministic 2.5-D world: disc robot with commandable body height,
obstacles with vertical extents, moving agents, and scenario fixtures.

The robot proxy is a planar disc of radius ``R_ROBOT`` whose body
occupies the vertical band ``[0, height]``; obstacles occupy
``[z_lo, z_hi]``.  Everything navigation-relevant (distances, normals,
approach velocities, overhead clearance) survives the reduction.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geometry as geo

H_MIN, H_MAX = 0.4, 0.8
V_MAX = 1.5
R_ROBOT = 0.3
# a_x, a_y [m/s^2], alpha_z [rad/s^2], height_rate [m/s]
ACTION_BOUNDS = np.array([2.0, 2.0, 2.0, 0.5])
WALL_Z = (0.0, 2.5)
WALL_THICKNESS = 0.2


class EpisodeFault(RuntimeError):
    """Raised when a non-finite action reaches the dynamics."""


class ScenarioError(ValueError):
    """Malformed scenario description."""


@dataclass
class RobotBody:
    """Planar base state; positions/velocities in the world frame."""

    p: np.ndarray
    v: np.ndarray
    yaw: float
    omega_z: float
    height: float
    accel_cmd: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def copy(self) -> "RobotBody":
        return RobotBody(self.p.copy(), self.v.copy(), self.yaw, self.omega_z,
                         self.height, self.accel_cmd.copy())

    def heading(self) -> np.ndarray:
        return np.array([math.cos(self.yaw), math.sin(self.yaw)])


def rot(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s], [s, c]])


def clamp_action(action: np.ndarray) -> np.ndarray:
    """Clamp the 4 controlled dims; a 5th reserved dim is dropped."""
    a = np.asarray(action, dtype=np.float64)[:4]
    return np.clip(a, -ACTION_BOUNDS, ACTION_BOUNDS)


def step_dynamics(robot: RobotBody, action: np.ndarray, dt: float) -> RobotBody:
    """Semi-implicit Euler step.

    ``action`` is (a_x, a_y, alpha_z, height_rate[, reserved]) with the
    planar acceleration expressed in the body frame; clamps on speed and
    height apply after integration.
    """
    action = np.asarray(action, dtype=np.float64)
    if not np.all(np.isfinite(action)):
        raise EpisodeFault("non-finite action")
    a = clamp_action(action)
    a_world = rot(robot.yaw) @ a[:2]
    v = robot.v + a_world * dt
    p = robot.p + v * dt
    omega = robot.omega_z + a[2] * dt
    yaw = robot.yaw + omega * dt
    height = robot.height + a[3] * dt
    speed = float(np.hypot(*v))
    if speed > V_MAX:
        v = v * (V_MAX / speed)
    height = min(max(height, H_MIN), H_MAX)
    return RobotBody(p, v, yaw, omega, height, a_world)


# ---------------------------------------------------------------------------
# obstacles
# ---------------------------------------------------------------------------


@dataclass
class Obstacle:
    """Static or moving prism over a circle or axis-aligned rectangle."""

    kind: str                       # pillar | slab | wall | agent
    z_range: tuple[float, float]
    center: np.ndarray | None = None
    radius: float = 0.0
    rect: tuple[float, float, float, float] | None = None
    speed: float = 0.0
    waypoints: np.ndarray | None = None
    path_s: float = 0.0             # arc position along the waypoint loop

    def __post_init__(self):
        if self.z_range[0] >= self.z_range[1]:
            raise ScenarioError("obstacle z_lo must be below z_hi")
        if (self.center is None) == (self.rect is None):
            raise ScenarioError("obstacle needs exactly one of circle or rect footprint")
        if self.kind == "agent":
            if self.center is None or self.speed <= 0.0 or self.waypoints is None:
                raise ScenarioError("agents are moving circles with a waypoint path")
            self.waypoints = np.asarray(self.waypoints, dtype=np.float64)
            if len(self.waypoints) < 2:
                raise ScenarioError("agent path needs at least two waypoints")
        if self.center is not None:
            self.center = np.asarray(self.center, dtype=np.float64)

    # geometry -----------------------------------------------------------

    def z_overlaps(self, z_lo: float, z_hi: float) -> bool:
        return self.z_range[0] <= z_hi and self.z_range[1] >= z_lo

    def contains_z(self, z: float) -> bool:
        return self.z_range[0] <= z <= self.z_range[1]

    def signed_distance(self, p: np.ndarray) -> float:
        if self.center is not None:
            return geo.circle_signed_distance(p, self.center, self.radius)
        return geo.rect_signed_distance(p, self.rect)

    def closest_point(self, p: np.ndarray) -> np.ndarray:
        if self.center is not None:
            return geo.circle_closest_point(p, self.center, self.radius)
        return geo.rect_closest_point(p, self.rect)

    def ray_hits(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        if self.center is not None:
            return geo.rays_circle(origin, dirs, self.center, self.radius)
        return geo.rays_rect(origin, dirs, self.rect)

    # motion -------------------------------------------------------------

    def _loop(self) -> tuple[np.ndarray, np.ndarray]:
        pts = np.vstack([self.waypoints, self.waypoints[:1]])
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        return pts, seg

    def loop_length(self) -> float:
        _, seg = self._loop()
        return float(seg.sum())

    def point_at(self, s: float) -> tuple[np.ndarray, np.ndarray]:
        """Position and unit direction at arc position ``s`` on the loop."""
        pts, seg = self._loop()
        total = seg.sum()
        s = s % total
        for i, length in enumerate(seg):
            if s <= length or i == len(seg) - 1:
                d = (pts[i + 1] - pts[i]) / length if length > 0 else np.zeros(2)
                return pts[i] + d * s, d
            s -= length
        raise AssertionError("unreachable")

    def velocity(self) -> np.ndarray:
        if self.kind != "agent":
            return np.zeros(2)
        _, d = self.point_at(self.path_s)
        return d * self.speed


def advance_agents(obstacles: list[Obstacle], dt: float) -> None:
    """Move every agent along its waypoint loop at constant speed."""
    for ob in obstacles:
        if ob.kind != "agent":
            continue
        ob.path_s = (ob.path_s + ob.speed * dt) % ob.loop_length()
        ob.center, _ = ob.point_at(ob.path_s)


# ---------------------------------------------------------------------------
# robot/world queries
# ---------------------------------------------------------------------------


def collision_check(obstacles: list[Obstacle], robot: RobotBody) -> bool:
    """True iff the robot disc overlaps an obstacle sharing its vertical band."""
    for ob in obstacles:
        if not ob.z_overlaps(0.0, robot.height):
            continue
        if ob.signed_distance(robot.p) <= R_ROBOT:
            return True
    return False


def exact_obstacle_distance(obstacles: list[Obstacle], robot: RobotBody,
                            max_range: float, kinds: tuple[str, ...] | None = None) -> float:
    """Surface-to-surface distance to the nearest obstacle in the robot's
    vertical band, capped at ``max_range``."""
    best = max_range
    for ob in obstacles:
        if kinds is not None and ob.kind not in kinds:
            continue
        if not ob.z_overlaps(0.0, robot.height):
            continue
        best = min(best, ob.signed_distance(robot.p) - R_ROBOT)
    return best


def privileged_obstacle_info(obstacles: list[Obstacle], robot: RobotBody,
                             max_range: float) -> np.ndarray:
    """(8, 2) array of per-sector (surface distance, closing speed).

    Sectors are 45 degrees wide, yaw-aligned, sector 0 centered on the
    heading.  Closing speed is the obstacle's own velocity projected onto
    the robot-to-obstacle direction, sign-flipped so approach is positive.
    """
    out = np.zeros((8, 2))
    out[:, 0] = max_range
    for ob in obstacles:
        if not ob.z_overlaps(0.0, robot.height):
            continue
        cp = ob.closest_point(robot.p)
        delta = cp - robot.p
        dist = ob.signed_distance(robot.p) - R_ROBOT
        if dist >= max_range:
            continue
        norm = float(np.hypot(*delta))
        if norm < 1e-9:
            if ob.center is not None:
                delta = ob.center - robot.p
                norm = float(np.hypot(*delta))
            if norm < 1e-9:
                continue
        d_hat = delta / norm
        bearing = geo.wrap_angle(math.atan2(delta[1], delta[0]) - robot.yaw)
        sector = int(round(bearing / (math.pi / 4.0))) % 8
        if dist < out[sector, 0]:
            closing = float(-ob.velocity() @ d_hat)
            out[sector, 0] = dist
            out[sector, 1] = closing
    return out


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------


@dataclass
class Goal:
    """Either a target region to reach or a command-following profile."""

    type: str                        # "region" | "commands"
    center: np.ndarray | None = None
    radius: float = 0.0
    resample_period: int = 100

    def to_dict(self) -> dict:
        if self.type == "region":
            return {"type": "region", "center": list(map(float, self.center)),
                    "radius": self.radius}
        return {"type": "commands", "resample_period": self.resample_period}

    @staticmethod
    def from_dict(d: dict) -> "Goal":
        d = dict(d)
        typ = d.pop("type")
        if typ == "region":
            g = Goal("region", center=np.asarray(d.pop("center"), dtype=np.float64),
                     radius=float(d.pop("radius")))
        elif typ == "commands":
            g = Goal("commands", resample_period=int(d.pop("resample_period", 100)))
        else:
            raise ScenarioError(f"unknown goal type {typ!r}")
        if d:
            raise ScenarioError(f"unknown goal keys {sorted(d)}")
        return g


@dataclass
class CurriculumSpec:
    """How the world hardens with curriculum level 0..2."""

    extra_pillars: tuple[int, int, int] = (0, 0, 0)
    pillar_radius: tuple[float, float] = (0.3, 0.5)
    agent_speed_scale: tuple[float, float, float] = (1.0, 1.0, 1.0)
    spawn_region: tuple[float, float, float, float] | None = None
    keepout: float = 1.5

    def to_dict(self) -> dict:
        return {"extra_pillars": list(self.extra_pillars),
                "pillar_radius": list(self.pillar_radius),
                "agent_speed_scale": list(self.agent_speed_scale),
                "spawn_region": list(self.spawn_region) if self.spawn_region else None,
                "keepout": self.keepout}

    @staticmethod
    def from_dict(d: dict) -> "CurriculumSpec":
        d = dict(d)
        region = d.pop("spawn_region", None)
        spec = CurriculumSpec(
            extra_pillars=tuple(d.pop("extra_pillars", (0, 0, 0))),
            pillar_radius=tuple(d.pop("pillar_radius", (0.3, 0.5))),
            agent_speed_scale=tuple(d.pop("agent_speed_scale", (1.0, 1.0, 1.0))),
            spawn_region=tuple(region) if region else None,
            keepout=float(d.pop("keepout", 1.5)),
        )
        if d:
            raise ScenarioError(f"unknown curriculum keys {sorted(d)}")
        return spec


def _obstacle_to_dict(ob: Obstacle) -> dict:
    d: dict = {"kind": ob.kind, "z_range": list(ob.z_range)}
    if ob.center is not None:
        d["center"] = list(map(float, ob.center))
        d["radius"] = ob.radius
    else:
        d["rect"] = list(ob.rect)
    if ob.kind == "agent":
        d["speed"] = ob.speed
        d["waypoints"] = [list(map(float, w)) for w in ob.waypoints]
    return d


def _obstacle_from_dict(d: dict) -> Obstacle:
    d = dict(d)
    kind = d.pop("kind")
    z_range = tuple(d.pop("z_range"))
    kwargs = {}
    if "center" in d:
        kwargs["center"] = np.asarray(d.pop("center"), dtype=np.float64)
        kwargs["radius"] = float(d.pop("radius"))
    if "rect" in d:
        kwargs["rect"] = tuple(d.pop("rect"))
    if "speed" in d:
        kwargs["speed"] = float(d.pop("speed"))
    if "waypoints" in d:
        kwargs["waypoints"] = np.asarray(d.pop("waypoints"), dtype=np.float64)
    if d:
        raise ScenarioError(f"unknown obstacle keys {sorted(d)}")
    return Obstacle(kind=kind, z_range=z_range, **kwargs)


@dataclass
class Scenario:
    """A world fixture: geometry, start, goal, and curriculum recipe."""

    name: str
    bounds: tuple[float, float, float, float]
    obstacles: list[Obstacle]
    start_pose: tuple[float, float, float]     # x, y, yaw
    start_height: float
    goal: Goal
    episode_length: int
    success_rule: str                          # "reach_goal" | "track_commands"
    curriculum: CurriculumSpec = field(default_factory=CurriculumSpec)

    def __post_init__(self):
        if self.success_rule not in ("reach_goal", "track_commands"):
            raise ScenarioError(f"unknown success rule {self.success_rule!r}")
        if self.episode_length <= 0:
            raise ScenarioError("episode_length must be positive")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "bounds": list(self.bounds),
            "obstacles": [_obstacle_to_dict(o) for o in self.obstacles],
            "start_pose": list(self.start_pose),
            "start_height": self.start_height,
            "goal": self.goal.to_dict(),
            "episode_length": self.episode_length,
            "success_rule": self.success_rule,
            "curriculum": self.curriculum.to_dict(),
        }

    @staticmethod
    def from_dict(d: dict) -> "Scenario":
        d = dict(d)
        try:
            sc = Scenario(
                name=d.pop("name"),
                bounds=tuple(d.pop("bounds")),
                obstacles=[_obstacle_from_dict(o) for o in d.pop("obstacles")],
                start_pose=tuple(d.pop("start_pose")),
                start_height=float(d.pop("start_height")),
                goal=Goal.from_dict(d.pop("goal")),
                episode_length=int(d.pop("episode_length")),
                success_rule=d.pop("success_rule"),
                curriculum=CurriculumSpec.from_dict(d.pop("curriculum", {})),
            )
        except KeyError as exc:
            raise ScenarioError(f"scenario missing key {exc}") from exc
        if d:
            raise ScenarioError(f"unknown scenario keys {sorted(d)}")
        return sc


def boundary_walls(bounds: tuple[float, float, float, float]) -> list[Obstacle]:
    """Four thin wall obstacles hugging the world bounds from outside."""
    xmin, ymin, xmax, ymax = bounds
    t = WALL_THICKNESS
    rects = [
        (xmin - t, ymin - t, xmax + t, ymin),    # south
        (xmin - t, ymax, xmax + t, ymax + t),    # north
        (xmin - t, ymin - t, xmin, ymax + t),    # west
        (xmax, ymin - t, xmax + t, ymax + t),    # east
    ]
    return [Obstacle(kind="wall", z_range=WALL_Z, rect=r) for r in rects]


def instantiate(scenario: Scenario, level: int, rng: np.random.Generator,
                jitter_start: bool = True) -> tuple[list[Obstacle], RobotBody]:
    """Concrete world for one episode: boundary walls, base obstacles,
    curriculum extras, agent speed scaling, jittered start pose."""
    level = int(min(max(level, 0), 2))
    obstacles = boundary_walls(scenario.bounds)
    for ob in scenario.obstacles:
        ob = copy.deepcopy(ob)
        if ob.kind == "agent":
            ob.speed = ob.speed * scenario.curriculum.agent_speed_scale[level]
            # randomize phase along the loop so trials differ
            ob.path_s = float(rng.uniform(0.0, ob.loop_length()))
            ob.center, _ = ob.point_at(ob.path_s)
        obstacles.append(ob)

    sx, sy, syaw = scenario.start_pose
    if jitter_start:
        sx += float(rng.uniform(-0.2, 0.2))
        sy += float(rng.uniform(-0.2, 0.2))
        syaw += float(rng.uniform(-math.radians(10), math.radians(10)))

    n_extra = scenario.curriculum.extra_pillars[level]
    region = scenario.curriculum.spawn_region
    if region is None:
        m = 1.0
        region = (scenario.bounds[0] + m, scenario.bounds[1] + m,
                  scenario.bounds[2] - m, scenario.bounds[3] - m)
    keep = scenario.curriculum.keepout
    goal_c = scenario.goal.center if scenario.goal.type == "region" else None
    r_lo, r_hi = scenario.curriculum.pillar_radius
    placed = 0
    attempts = 0
    while placed < n_extra and attempts < 200 * max(n_extra, 1):
        attempts += 1
        c = np.array([rng.uniform(region[0], region[2]),
                      rng.uniform(region[1], region[3])])
        r = float(rng.uniform(r_lo, r_hi))
        if np.hypot(*(c - np.array([sx, sy]))) < keep + r:
            continue
        if goal_c is not None and np.hypot(*(c - goal_c)) < keep + r:
            continue
        if any(ob.signed_distance(c) < r + 0.8 for ob in obstacles if ob.kind != "wall"):
            continue
        obstacles.append(Obstacle(kind="pillar", z_range=(0.0, 2.0), center=c, radius=r))
        placed += 1

    robot = RobotBody(p=np.array([sx, sy]), v=np.zeros(2), yaw=syaw,
                      omega_z=0.0, height=scenario.start_height)
    return obstacles, robot


# ---------------------------------------------------------------------------
# built-in scenario fixtures (also shipped as JSON under scenarios/)
# ---------------------------------------------------------------------------


def _suspended_obstacle() -> Scenario:
    slab = Obstacle(kind="slab", z_range=(0.6, 2.0), rect=(3.2, -2.0, 4.2, 2.0))
    return Scenario(
        name="suspended_obstacle",
        bounds=(-2.0, -2.0, 10.0, 2.0),
        obstacles=[slab],
        start_pose=(0.0, 0.0, 0.0),
        start_height=0.7,
        goal=Goal("region", center=np.array([7.5, 0.0]), radius=0.8),
        episode_length=360,
        success_rule="reach_goal",
        curriculum=CurriculumSpec(extra_pillars=(0, 0, 0)),
    )


def _narrow_passage() -> Scenario:
    gap = 2.2
    wall_lo = Obstacle(kind="wall", z_range=(0.0, 2.0), rect=(3.4, -4.0, 4.0, -gap / 2))
    wall_hi = Obstacle(kind="wall", z_range=(0.0, 2.0), rect=(3.4, gap / 2, 4.0, 4.0))
    return Scenario(
        name="narrow_passage",
        bounds=(-2.0, -4.0, 10.0, 4.0),
        obstacles=[wall_lo, wall_hi],
        start_pose=(0.0, 0.0, 0.0),
        start_height=0.7,
        goal=Goal("region", center=np.array([7.5, 0.0]), radius=0.8),
        episode_length=360,
        success_rule="reach_goal",
    )


def _cluttered_static() -> Scenario:
    # level 0 is an empty corridor (tracking is learned first); the course
    # fills with randomly placed pillars from level 1 on
    return Scenario(
        name="cluttered_static",
        bounds=(-2.0, -3.5, 11.0, 3.5),
        obstacles=[],
        start_pose=(0.0, 0.0, 0.0),
        start_height=0.7,
        goal=Goal("region", center=np.array([8.5, 0.0]), radius=0.8),
        episode_length=400,
        success_rule="reach_goal",
        curriculum=CurriculumSpec(extra_pillars=(0, 4, 7),
                                  pillar_radius=(0.35, 0.5),
                                  spawn_region=(1.8, -2.4, 7.0, 2.4)),
    )


def _dynamic_agents() -> Scenario:
    agents = [
        Obstacle(kind="agent", z_range=(0.0, 1.8), center=np.array([3.0, 1.5]),
                 radius=0.3, speed=0.6,
                 waypoints=np.array([[3.0, 1.5], [3.0, -1.5]])),
        Obstacle(kind="agent", z_range=(0.0, 1.8), center=np.array([5.5, -1.5]),
                 radius=0.3, speed=0.6,
                 waypoints=np.array([[5.5, -1.5], [5.5, 1.5]])),
        Obstacle(kind="agent", z_range=(0.0, 1.8), center=np.array([7.0, 0.0]),
                 radius=0.3, speed=0.5,
                 waypoints=np.array([[7.0, 0.0], [4.5, 0.0]])),
    ]
    return Scenario(
        name="dynamic_agents",
        bounds=(-2.0, -3.5, 11.0, 3.5),
        obstacles=agents,
        start_pose=(0.0, 0.0, 0.0),
        start_height=0.7,
        goal=Goal("region", center=np.array([8.5, 0.0]), radius=0.8),
        episode_length=400,
        success_rule="reach_goal",
        curriculum=CurriculumSpec(agent_speed_scale=(0.7, 1.0, 1.4)),
    )


_BUILTINS = {
    "suspended_obstacle": _suspended_obstacle,
    "narrow_passage": _narrow_passage,
    "cluttered_static": _cluttered_static,
    "dynamic_agents": _dynamic_agents,
}

SCENARIO_NAMES = tuple(sorted(_BUILTINS))
_DATA_DIR = Path(__file__).parent / "scenarios"


def builtin_scenario(name: str) -> Scenario:
    if name not in _BUILTINS:
        raise ScenarioError(f"unknown scenario {name!r}; known: {sorted(_BUILTINS)}")
    return _BUILTINS[name]()


def load_scenario(name_or_path: str) -> Scenario:
    """Resolve a scenario: an explicit JSON path, a packaged JSON file,
    or the built-in fixture of that name."""
    p = Path(name_or_path)
    if p.suffix == ".json" and p.exists():
        return Scenario.from_dict(json.loads(p.read_text()))
    packaged = _DATA_DIR / f"{name_or_path}.json"
    if packaged.exists():
        return Scenario.from_dict(json.loads(packaged.read_text()))
    return builtin_scenario(str(name_or_path))


def write_scenario_files(out_dir: str | Path) -> list[Path]:
    """Dump every built-in scenario as a JSON document."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in SCENARIO_NAMES:
        path = out / f"{name}.json"
        path.write_text(json.dumps(builtin_scenario(name).to_dict(), indent=2,
                                   sort_keys=True) + "\n")
        paths.append(path)
    return paths
