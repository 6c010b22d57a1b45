"""Barrier function, one-step condition, cost hinge, projection oracle."""

import math

import numpy as np
import pytest

from safeloco.cbf import (BarrierEval, CbfConfig, LinearModel, barrier_h,
                          cbf_cost, dcbf_check, double_integrator, g_d,
                          nearest_obstacle, safe_projection)
from safeloco.lidar import LidarConfig, LidarScan, raycast
from safeloco.world import Obstacle, RobotBody


def make_robot(p=(0.0, 0.0), v=(0.0, 0.0), yaw=0.0, height=0.7):
    return RobotBody(p=np.array(p, dtype=float), v=np.array(v, dtype=float),
                     yaw=yaw, omega_z=0.0, height=height)


def scan_with(cfg: LidarConfig, entries: dict[tuple[int, int], float]) -> LidarScan:
    ranges = np.full((cfg.n_rings, cfg.n_azimuth), cfg.max_range)
    for (ring, az), r in entries.items():
        ranges[ring, az] = r
    return LidarScan(ranges=ranges, cfg=cfg)


# ---------------------------------------------------------------------------
# nearest_obstacle / barrier arithmetic
# ---------------------------------------------------------------------------


def test_single_return_direct_arithmetic():
    # robot at (2,0) facing the origin; one return 2 m dead ahead at (0,0)
    lc = LidarConfig(n_azimuth=8, elevation_rings=(0.15,), range_noise_std=0.0)
    scan = scan_with(lc, {(0, 0): 2.0})
    robot = make_robot(p=(2.0, 0.0), yaw=math.pi)
    be = nearest_obstacle(scan, robot, CbfConfig(d_min=0.8))
    assert np.allclose(be.o, [0.0, 0.0], atol=1e-12)
    assert np.allclose(be.eta, [1.0, 0.0], atol=1e-12)
    assert abs(be.h - 1.2) < 1e-12
    assert be.active


def test_barrier_invariant_h_equals_eta_dot():
    lc = LidarConfig(n_azimuth=16, elevation_rings=(0.15, 0.45), range_noise_std=0.0)
    rng = np.random.default_rng(2)
    for _ in range(50):
        entries = {(int(rng.integers(0, 2)), int(rng.integers(0, 16))):
                   float(rng.uniform(0.5, 9.0)) for _ in range(4)}
        scan = scan_with(lc, entries)
        robot = make_robot(p=rng.uniform(-3, 3, 2), yaw=float(rng.uniform(0, 6)))
        be = nearest_obstacle(scan, robot, CbfConfig())
        assert abs(np.linalg.norm(be.eta) - 1.0) < 1e-9
        assert abs(be.h - (be.eta @ (robot.p - be.o) - be.d_min)) < 1e-12


def test_coincident_return_degenerate_rule():
    lc = LidarConfig(n_azimuth=8, elevation_rings=(0.15,), range_noise_std=0.0)
    scan = scan_with(lc, {(0, 3): 0.0})
    robot = make_robot(p=(1.0, 1.0), yaw=0.3)
    be = nearest_obstacle(scan, robot, CbfConfig(d_min=0.8))
    assert abs(be.h - (-0.8)) < 1e-12
    assert np.allclose(be.eta, -robot.heading())
    assert abs(np.linalg.norm(be.eta) - 1.0) < 1e-9


def test_no_finite_return_gives_inactive_sentinel():
    lc = LidarConfig(n_azimuth=8, elevation_rings=(0.15,), range_noise_std=0.0)
    scan = scan_with(lc, {})
    robot = make_robot()
    be = nearest_obstacle(scan, robot, CbfConfig())
    assert not be.active
    assert be.h == lc.max_range
    assert abs(be.h - (be.eta @ (robot.p - be.o) - be.d_min)) < 1e-9


def test_ring_above_body_band_is_ignored():
    lc = LidarConfig(n_azimuth=8, elevation_rings=(0.15, 0.45, 0.75),
                     range_noise_std=0.0)
    scan = scan_with(lc, {(2, 0): 1.0})      # only the top ring sees something
    be = nearest_obstacle(scan, make_robot(height=0.7), CbfConfig())
    assert not be.active                      # 0.75 > 0.7: no overlap
    be2 = nearest_obstacle(scan, make_robot(height=0.8), CbfConfig())
    assert be2.active and abs(be2.h - (1.0 - 0.8)) < 1e-12


def test_tie_break_lowest_azimuth_then_ring():
    lc = LidarConfig(n_azimuth=8, elevation_rings=(0.15, 0.45), range_noise_std=0.0)
    scan = scan_with(lc, {(1, 2): 3.0, (0, 5): 3.0, (1, 5): 3.0})
    be = nearest_obstacle(scan, make_robot(), CbfConfig())
    ang = 2 * math.pi * 2 / 8                 # azimuth 2 wins over azimuth 5
    assert np.allclose(be.o, [3.0 * math.cos(ang), 3.0 * math.sin(ang)], atol=1e-12)
    scan2 = scan_with(lc, {(1, 5): 3.0, (0, 5): 3.0})
    be2 = nearest_obstacle(scan2, make_robot(), CbfConfig())
    assert np.allclose(be2.o, be2.o)          # ring 0 wins: same azimuth either way
    # both candidate rings share azimuth 5; the chosen one is ring 0 by rule,
    # indistinguishable in o but deterministic: run twice
    be3 = nearest_obstacle(scan2, make_robot(), CbfConfig())
    assert np.array_equal(be2.o, be3.o) and np.array_equal(be2.eta, be3.eta)


def test_cluttered_scene_matches_exact_geometry_oracle():
    lc = LidarConfig(n_azimuth=64, elevation_rings=(0.15, 0.45), max_range=10.0,
                     range_noise_std=0.0)
    pillars = [
        Obstacle(kind="pillar", z_range=(0.0, 2.0), center=np.array([2.5, 0.6]), radius=0.5),
        Obstacle(kind="pillar", z_range=(0.0, 2.0), center=np.array([-1.8, 1.2]), radius=0.6),
        Obstacle(kind="pillar", z_range=(0.0, 2.0), center=np.array([0.5, -2.4]), radius=0.5),
        Obstacle(kind="pillar", z_range=(0.0, 2.0), center=np.array([-2.2, -1.7]), radius=0.7),
        Obstacle(kind="pillar", z_range=(0.0, 2.0), center=np.array([1.9, 2.8]), radius=0.6),
    ]
    robot = make_robot(p=(0.0, 0.0), yaw=0.37)
    scan = raycast(pillars, robot, lc, rng=None)
    be = nearest_obstacle(scan, robot, CbfConfig(d_min=0.8))
    exact = min(ob.signed_distance(robot.p) for ob in pillars)
    bound = lc.max_range * (1.0 - math.cos(math.pi / lc.n_azimuth))
    assert abs(be.h - (exact - 0.8)) <= bound


def test_h_decreases_moving_along_negative_eta():
    be = BarrierEval(h=1.0, o=np.array([2.0, 1.0]),
                     eta=np.array([0.6, 0.8]), d_min=0.5)
    p = np.array([3.0, 2.0])
    h_prev = barrier_h(be, p)
    for step in range(1, 6):
        h_now = barrier_h(be, p - 0.3 * step * be.eta)
        assert h_now < h_prev
        h_prev = h_now


def test_plane_fit_normal_on_flat_wall():
    lc = LidarConfig(n_azimuth=128, elevation_rings=(0.15,), range_noise_std=0.0)
    wall = Obstacle(kind="wall", z_range=(0.0, 2.0), rect=(2.0, -5.0, 2.4, 5.0))
    robot = make_robot(p=(0.0, 0.3), yaw=0.1)
    scan = raycast([wall], robot, lc, rng=None)
    be = nearest_obstacle(scan, robot, CbfConfig(normal_estimation="plane_fit_k"))
    # wall face normal points back toward the robot: (-1, 0)
    assert be.active
    assert abs(be.eta[0] - (-1.0)) < 0.02 and abs(be.eta[1]) < 0.05


# ---------------------------------------------------------------------------
# g_d / cbf_cost / dcbf_check
# ---------------------------------------------------------------------------


def _fixture_barrier():
    return BarrierEval(h=1.2, o=np.array([2.0, 0.0]), eta=np.array([-1.0, 0.0]),
                       d_min=0.8)


def test_g_d_double_integrator_hand_fixture():
    model = double_integrator(0.1)
    be = _fixture_barrier()
    state = np.array([0.0, 0.0, 1.0, 0.0])
    val = g_d(model, CbfConfig(gamma_cbf=0.5), be, state, np.zeros(2))
    assert abs(val - 0.5) < 1e-12              # h(s')=1.1 minus 0.5*1.2


def test_g_d_gamma_one_reduces_to_next_h():
    model = double_integrator(0.05)
    be = _fixture_barrier()
    rng = np.random.default_rng(4)
    for _ in range(20):
        s = rng.uniform(-1, 1, 4)
        u = rng.uniform(-2, 2, 2)
        nxt = model.a_mat @ s + model.b_mat @ u
        h_next = barrier_h(be, model.position_selector @ nxt)
        assert abs(g_d(model, CbfConfig(gamma_cbf=1.0), be, s, u) - h_next) < 1e-12


def test_g_d_affine_in_control():
    model = double_integrator(0.05)
    be = BarrierEval(h=0.3, o=np.array([1.0, 1.0]),
                     eta=np.array([0.6, -0.8]), d_min=0.4)
    rng = np.random.default_rng(9)
    cfg = CbfConfig(gamma_cbf=0.6)
    for _ in range(50):
        s = rng.uniform(-2, 2, 4)
        u1 = rng.uniform(-2, 2, 2)
        u2 = rng.uniform(-2, 2, 2)
        mid = g_d(model, cfg, be, s, (u1 + u2) / 2)
        ends = (g_d(model, cfg, be, s, u1) + g_d(model, cfg, be, s, u2)) / 2
        assert abs(mid - ends) < 1e-12


def test_g_d_three_point_collinearity_along_axis():
    model = double_integrator(0.05)
    be = _fixture_barrier()
    cfg = CbfConfig(gamma_cbf=0.3)
    s = np.array([0.5, -0.2, 0.3, 0.1])
    u0 = np.array([-1.0, 0.4])
    d = np.array([0.7, 0.0])
    g0 = g_d(model, cfg, be, s, u0)
    g1 = g_d(model, cfg, be, s, u0 + d)
    g2 = g_d(model, cfg, be, s, u0 + 2 * d)
    assert abs((g1 - g0) - (g2 - g1)) < 1e-12


def test_cbf_cost_hinge_values():
    model = double_integrator(0.1)
    be = _fixture_barrier()
    cfg = CbfConfig(gamma_cbf=0.5)
    state = np.array([0.0, 0.0, 1.0, 0.0])
    # g_d = 0.5 at u = 0 (hand fixture): cost 0
    assert cbf_cost(model, cfg, be, state, np.zeros(2)) == 0.0
    # push hard toward the obstacle until g_d = -0.3, cost = 0.3
    sens = be.eta @ model.position_selector @ model.b_mat
    u_bad = (-(0.5 + 0.3) / (sens @ sens)) * sens
    assert abs(cbf_cost(model, cfg, be, state, u_bad) - 0.3) < 1e-9


def test_cbf_cost_zero_exactly_on_halfspace_grid():
    model = double_integrator(0.05)
    be = BarrierEval(h=0.1, o=np.array([1.5, -0.5]),
                     eta=np.array([-0.8, 0.6]), d_min=0.3)
    cfg = CbfConfig(gamma_cbf=0.6)
    state = np.array([0.4, 0.1, 0.9, -0.4])
    for ux in np.linspace(-2, 2, 21):
        for uy in np.linspace(-2, 2, 21):
            u = np.array([ux, uy])
            g = g_d(model, cfg, be, state, u)
            c = cbf_cost(model, cfg, be, state, u)
            assert (c == 0.0) == (g >= 0.0)
            if g < 0:
                assert abs(c + g) < 1e-15


def test_dcbf_check_thresholds():
    assert dcbf_check(0.0, 0.0, 0.5)
    assert dcbf_check(0.5, 1.0, 0.5)
    assert not dcbf_check(0.49, 1.0, 0.5)


# ---------------------------------------------------------------------------
# safe projection oracle
# ---------------------------------------------------------------------------


def test_projection_keeps_satisfying_control():
    model = double_integrator(0.1)
    be = _fixture_barrier()
    res = safe_projection(model, CbfConfig(gamma_cbf=0.5), be,
                          np.array([0.0, 0.0, 1.0, 0.0]), np.zeros(2))
    assert not res.projected and not res.unconstrainable
    assert np.array_equal(res.control, np.zeros(2))


def test_projection_halfspace_textbook_case():
    # g(u) = u_x - 1 via identity dynamics, gamma = 1, h(p) = -1
    model = LinearModel(np.eye(2), np.eye(2), np.eye(2), dt=1.0)
    be = BarrierEval(h=-1.0, o=np.array([0.5, 0.0]),
                     eta=np.array([1.0, 0.0]), d_min=0.5)
    res = safe_projection(model, CbfConfig(gamma_cbf=1.0), be,
                          np.zeros(2), np.zeros(2))
    assert res.projected
    assert np.allclose(res.control, [1.0, 0.0], atol=1e-12)


def test_projection_unconstrainable_flag():
    # B maps control only onto velocity rows: position unaffected in one step
    a = np.eye(4)
    b = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    sel = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
    model = LinearModel(a, b, sel, dt=0.1)
    be = BarrierEval(h=-0.5, o=np.array([1.0, 0.0]),
                     eta=np.array([-1.0, 0.0]), d_min=0.2)
    desired = np.array([0.3, -0.7])
    res = safe_projection(model, CbfConfig(gamma_cbf=0.5), be,
                          np.array([2.0, 0.0, 0.0, 0.0]), desired)
    assert res.unconstrainable
    assert np.array_equal(res.control, desired)


@pytest.mark.parametrize("gamma", [0.3, 0.6, 1.0])
def test_projection_rollout_keeps_barrier_nonnegative(gamma):
    model = double_integrator(0.05)
    cfg = CbfConfig(gamma_cbf=gamma)
    be = BarrierEval(h=0.0, o=np.array([3.0, 0.0]),
                     eta=np.array([-1.0, 0.0]), d_min=0.8)
    rng = np.random.default_rng(17)
    s = np.array([0.0, 0.0, 0.5, 0.2])
    assert barrier_h(be, model.position_selector @ s) > 0
    h_prev = barrier_h(be, model.position_selector @ s)
    for _ in range(1000):
        desired = rng.uniform(-2.0, 2.0, 2) + np.array([1.5, 0.0])  # push at wall
        res = safe_projection(model, cfg, be, s, desired)
        s = model.a_mat @ s + model.b_mat @ res.control
        h = barrier_h(be, model.position_selector @ s)
        assert h >= -1e-9
        assert dcbf_check(h, h_prev, gamma)
        h_prev = h
