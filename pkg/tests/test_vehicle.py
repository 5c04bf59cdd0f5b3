import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segdrive.classes import ClassId
from segdrive.vehicle import (
    ACCEL_MAX,
    FOOTPRINT_RADIUS,
    PAST_TRAJ_LEN,
    SPEED_MAX,
    STEER_MAX,
    WHEELBASE,
    RolloutConfig,
    VehicleState,
    clamp_action,
    ego_to_world,
    egocentric_transform,
    get_traj,
    initial_past_trajectory,
    load_trajectories_jsonl,
    pid_track,
    save_trajectories_jsonl,
    step_dynamics,
    wrap_angle,
)
from segdrive.world import Obstacle, flat_world


# --- angle wrapping ----------------------------------------------------------------

def test_wrap_angle_half_open_interval():
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)
    assert wrap_angle(2 * math.pi) == pytest.approx(0.0)
    assert wrap_angle(0.0) == 0.0


@settings(max_examples=100, deadline=None)
@given(a=st.floats(-50, 50), k=st.integers(-3, 3))
def test_wrap_angle_periodic(a, k):
    assert wrap_angle(a + 2 * math.pi * k) == pytest.approx(wrap_angle(a), abs=1e-9)
    w = wrap_angle(a)
    assert -math.pi < w <= math.pi + 1e-15


# --- rollout ----------------------------------------------------------------

def _straight_history(spacing=1.0):
    pts = np.zeros((2, 3))
    pts[0, 0] = -spacing
    return pts


def test_get_traj_hand_stepped_case():
    # l=3, initial spacing 1, actions [(0.2, 0.5), (0.3, 0.25)]:
    #   i=0: s=1.5, h=min(0+0.1, 0.2)=0.1, p1 = 1.5*(cos .1, sin .1)
    #   i=1: s=1.75, h=min(0.1+0.1, 0.3)=0.2, p2 = p1 + 1.75*(cos .2, sin .2)
    traj = get_traj(3, _straight_history(1.0), [(0.2, 0.5), (0.3, 0.25)])
    p1 = np.array([1.5 * math.cos(0.1), 1.5 * math.sin(0.1), 0.1])
    p2 = p1 + np.array([1.75 * math.cos(0.2), 1.75 * math.sin(0.2), 0.1])
    np.testing.assert_allclose(traj[0], [0, 0, 0], atol=0)
    np.testing.assert_allclose(traj[1], p1, atol=1e-12)
    np.testing.assert_allclose(traj[2], p2, atol=1e-12)


def test_get_traj_zero_steer_goes_straight():
    actions = np.zeros((5, 2))
    actions[:, 1] = 0.7
    traj = get_traj(6, _straight_history(0.4), actions)
    np.testing.assert_allclose(traj[:, 1], 0.0, atol=0)
    np.testing.assert_allclose(traj[:, 2], 0.0, atol=0)
    # Spacing grows by alpha each step: 1.1, 1.8, 2.5, ...
    seg = np.diff(traj[:, 0])
    np.testing.assert_allclose(seg, 0.4 + 0.7 * np.arange(1, 6), atol=1e-12)


def test_get_traj_zero_steer_snaps_heading_back():
    # A zero steer after a positive one clamps the heading to zero instantly.
    traj = get_traj(3, _straight_history(), [(0.5, 0.1), (0.0, 0.1)])
    assert traj[1, 2] == pytest.approx(0.1)
    assert traj[2, 2] == 0.0


def test_get_traj_heading_approaches_steer_gradually():
    actions = [(0.35, 0.0)] * 6
    traj = get_traj(7, _straight_history(), actions)
    np.testing.assert_allclose(traj[1:, 2], [0.1, 0.2, 0.3, 0.35, 0.35, 0.35],
                               atol=1e-12)


def test_get_traj_validation():
    with pytest.raises(ValueError):
        get_traj(0, _straight_history(), [])
    with pytest.raises(ValueError):
        get_traj(2, np.zeros((1, 3)), [(0.0, 0.0)])
    with pytest.raises(ValueError):
        get_traj(3, _straight_history(), [(0.0, 0.0)])  # one action short
    with pytest.raises(ValueError):
        RolloutConfig(delta_theta=0.0)


def _get_traj_scalar(l, tau_p, actions, delta_theta):
    """Independent plain-Python transcription used as the rollout oracle."""
    out = [(0.0, 0.0, 0.0)]
    h = 0.0
    s = math.hypot(tau_p[-1][0] - tau_p[-2][0], tau_p[-1][1] - tau_p[-2][1])
    for i in range(l - 1):
        theta, alpha = actions[i]
        s += alpha
        sign = 0.0 if theta == 0 else math.copysign(1.0, theta)
        h += delta_theta * sign
        h = min(max(h, -abs(theta)), abs(theta))
        x, y, _ = out[-1]
        out.append((x + s * math.cos(h), y + s * math.sin(h), h))
    return np.array(out)


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_get_traj_matches_scalar_oracle(data):
    l = data.draw(st.integers(2, 11))
    dtheta = data.draw(st.floats(0.01, 0.5))
    rng = np.random.default_rng(data.draw(st.integers(0, 2**31)))
    tau_p = rng.uniform(-5, 5, size=(PAST_TRAJ_LEN, 3))
    actions = np.column_stack([
        rng.uniform(-STEER_MAX, STEER_MAX, size=l - 1),
        rng.uniform(0.0, 1.0, size=l - 1),
    ])
    got = get_traj(l, tau_p, actions, RolloutConfig(delta_theta=dtheta))
    want = _get_traj_scalar(l, tau_p.tolist(), actions.tolist(), dtheta)
    np.testing.assert_allclose(got, want, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_get_traj_invariants(seed):
    rng = np.random.default_rng(seed)
    l = int(rng.integers(2, 12))
    actions = np.column_stack([
        rng.uniform(-STEER_MAX, STEER_MAX, size=l - 1),
        rng.uniform(0.0, 1.0, size=l - 1),
    ])
    traj = get_traj(l, rng.uniform(-3, 3, size=(4, 2)), actions)
    # Heading never exceeds the largest commanded steer magnitude so far.
    for i in range(1, l):
        assert abs(traj[i, 2]) <= np.max(np.abs(actions[:i, 0])) + 1e-12
    # Point spacing is non-decreasing (alpha >= 0 accumulates).
    seg = np.hypot(np.diff(traj[:, 0]), np.diff(traj[:, 1]))
    assert np.all(np.diff(seg) >= -1e-12)


def test_initial_past_trajectory_spacing():
    pts = initial_past_trajectory(speed=2.0, dt=0.05)
    assert pts.shape == (PAST_TRAJ_LEN, 3)
    np.testing.assert_allclose(pts[-1], [0, 0, 0], atol=0)
    np.testing.assert_allclose(np.diff(pts[:, 0]), 0.1, atol=1e-12)
    assert not initial_past_trajectory(0.0, 0.05).any()


# --- dynamics ----------------------------------------------------------------

def test_step_semi_implicit_hand_case():
    # From rest, full throttle, no steer: speed updates before position.
    s1, hit = step_dynamics(VehicleState(), steer=0.0, throttle=1.0, dt=0.05)
    assert not hit
    assert s1.speed == pytest.approx(0.15)
    assert s1.x == pytest.approx(0.15 * 0.05)
    assert s1.y == 0.0 and s1.yaw == 0.0


def test_step_yaw_uses_updated_speed():
    s1, _ = step_dynamics(VehicleState(speed=1.0), steer=0.3, throttle=1.0, dt=0.1)
    v = 1.0 + 3.0 * 0.1
    yaw = (v / WHEELBASE) * math.tan(0.3) * 0.1
    assert s1.yaw == pytest.approx(yaw, abs=1e-12)
    assert s1.x == pytest.approx(v * math.cos(yaw) * 0.1, abs=1e-12)
    assert s1.y == pytest.approx(v * math.sin(yaw) * 0.1, abs=1e-12)


def test_speed_saturates_and_never_reverses():
    s = VehicleState(speed=SPEED_MAX - 0.01)
    s, _ = step_dynamics(s, 0.0, 1.0, 0.5)
    assert s.speed == SPEED_MAX
    s = VehicleState(speed=0.05)
    s, _ = step_dynamics(s, 0.0, -1.0, 0.5)
    assert s.speed == 0.0


def test_constant_steer_traces_circle():
    # Kinematic bicycle at constant speed and steer follows a circle of
    # radius L / tan(steer).
    steer = 0.3
    radius = WHEELBASE / math.tan(steer)
    state = VehicleState(speed=4.0)
    center = np.array([0.0, radius])  # left of the start for CCW motion
    for _ in range(2000):
        state, _ = step_dynamics(state, steer, 0.0, 0.005)
        r = math.hypot(state.x - center[0], state.y - center[1])
        assert r == pytest.approx(radius, rel=0.02)
    assert state.speed == 4.0


def test_positive_steer_turns_left():
    state = VehicleState(speed=5.0)
    for _ in range(20):
        state, _ = step_dynamics(state, 0.5, 0.0, 0.05)
    assert state.y > 0 and state.yaw > 0


def test_collision_detected_against_world():
    w = flat_world(obstacles=[Obstacle(ClassId.ROCKS, 3.0, 0.0, 1.0, 1.0)])
    state = VehicleState(x=0.0, y=0.0, speed=5.0)
    hit = False
    for _ in range(40):
        state, c = step_dynamics(state, 0.0, 0.5, 0.05, world=w)
        hit = hit or c
    assert hit


def test_state_validation():
    with pytest.raises(ValueError):
        VehicleState(speed=-1.0)
    assert VehicleState(yaw=3 * math.pi).yaw == pytest.approx(math.pi)
    with pytest.raises(ValueError):
        step_dynamics(VehicleState(), 0.0, 0.0, 0.0)


def test_clamp_action_bounds():
    assert clamp_action(5.0, 5.0) == (STEER_MAX, 1.0)
    assert clamp_action(-5.0, -5.0) == (-STEER_MAX, 0.0)


# --- tracking ----------------------------------------------------------------

def test_pursuit_steers_toward_lateral_offset():
    traj = np.column_stack([np.linspace(0, 5, 11), np.full(11, 2.0)])
    steer, _ = pid_track(VehicleState(speed=2.0), traj)
    assert steer > 0  # target to the left -> left turn
    steer, _ = pid_track(VehicleState(speed=2.0), -traj * [1, -1] * -1 + [0, -4])
    assert steer < 0


def test_pursuit_throttle_tracks_spacing_speed():
    # Spacing 0.5 m at point_dt 0.25 s implies a 2 m/s target.
    traj = np.column_stack([np.arange(8) * 0.5, np.zeros(8)])
    _, throttle = pid_track(VehicleState(speed=0.0), traj)
    assert throttle == 1.0  # error 2 m/s, kp 1 -> clipped at full throttle
    _, throttle = pid_track(VehicleState(speed=2.0), traj)
    assert throttle == pytest.approx(0.0, abs=1e-12)
    _, throttle = pid_track(VehicleState(speed=2.5), traj)
    assert throttle == pytest.approx(-0.5)


def test_pursuit_brakes_past_trajectory_end():
    traj = np.column_stack([np.arange(5) * 0.5, np.zeros(5)])
    _, throttle = pid_track(VehicleState(x=3.0, speed=3.0), traj)
    assert throttle == -1.0


def test_tracking_converges_to_straight_line():
    traj = np.column_stack([np.linspace(0, 30, 61), np.zeros(61)])
    state = VehicleState(x=0.0, y=1.5, yaw=0.0, speed=2.0)
    for _ in range(300):
        steer, throttle = pid_track(state, traj, {"point_dt": 0.25})
        state, _ = step_dynamics(state, steer, throttle, 0.05)
    assert abs(state.y) < 0.15
    assert abs(wrap_angle(state.yaw)) < 0.1


def test_pid_track_rejects_empty():
    with pytest.raises(ValueError):
        pid_track(VehicleState(), np.zeros((0, 2)))


# --- frames ----------------------------------------------------------------

def test_egocentric_known_case():
    ref = (1.0, 2.0, math.pi / 2)
    pt = egocentric_transform(np.array([1.0, 5.0, math.pi]), ref)
    np.testing.assert_allclose(pt, [3.0, 0.0, math.pi / 2], atol=1e-12)


def test_ego_of_reference_is_origin():
    ref = (3.0, -2.0, 0.7)
    np.testing.assert_allclose(egocentric_transform(np.array([ref]), ref),
                               [[0, 0, 0]], atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_ego_world_roundtrip(seed):
    rng = np.random.default_rng(seed)
    ref = rng.uniform(-10, 10, size=3)
    pts = rng.uniform(-20, 20, size=(6, 3))
    back = ego_to_world(egocentric_transform(pts, ref), ref)
    np.testing.assert_allclose(back[:, :2], pts[:, :2], atol=1e-9)
    np.testing.assert_allclose(np.cos(back[:, 2] - pts[:, 2]), 1.0, atol=1e-9)


def test_transform_preserves_distances():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-5, 5, size=(4, 2))
    ego = egocentric_transform(pts, (2.0, -1.0, 1.1))
    for i in range(3):
        d0 = np.hypot(*(pts[i + 1] - pts[i]))
        d1 = np.hypot(*(ego[i + 1] - ego[i]))
        assert d1 == pytest.approx(d0, abs=1e-12)


def test_single_point_transform_shape():
    out = egocentric_transform(np.array([1.0, 1.0]), (0.0, 0.0, 0.0))
    assert out.shape == (2,)


# --- trajectory files ----------------------------------------------------------------

def test_trajectory_jsonl_roundtrip(tmp_path):
    trajs = [np.random.default_rng(1).uniform(size=(5, 3)), np.zeros((3, 3))]
    p = tmp_path / "t.jsonl"
    save_trajectories_jsonl(p, trajs, frame="ego", ids=["a", "b"])
    back = load_trajectories_jsonl(p)
    assert [r["id"] for r in back] == ["a", "b"]
    assert all(r["frame"] == "ego" for r in back)
    np.testing.assert_allclose(back[0]["points"], trajs[0], atol=0)


def test_trajectory_jsonl_rejects_bad_frame(tmp_path):
    with pytest.raises(ValueError):
        save_trajectories_jsonl(tmp_path / "t.jsonl", [np.zeros((2, 3))], frame="map")
