import math

import numpy as np
import pytest

from segdrive.env import (
    GOAL_BONUS,
    DriveEnv,
    EnvConfig,
    MessageBuffer,
    RewardWeights,
    TimedMessage,
    reward,
)
from segdrive.render import CameraModel
from segdrive.classes import ClassId
from segdrive.vehicle import PAST_TRAJ_LEN, RolloutConfig, get_traj
from segdrive.world import Obstacle, flat_world

from .conftest import EMPTY_DENSITIES, tiny_env

UNIT = RewardWeights(goal=1.0, upright=1.0, steer=1.0, collision=1.0)


# --- reward ----------------------------------------------------------------

def test_reward_at_goal_case():
    r = reward(s_g=(1.0, 0.0), s_a=(0.0, 0.0), a=np.zeros((1, 2)),
               collision=False, roll=0.0, pitch=0.0, w=UNIT)
    assert r == pytest.approx(100.0, abs=1e-12)


def test_reward_pitch_case():
    r = reward(s_g=(50.0, 0.0), s_a=(0.0, 0.0), a=np.zeros((1, 2)),
               collision=False, roll=0.0, pitch=18.0, w=UNIT)
    assert r == pytest.approx(-1.1, abs=1e-12)


def test_reward_steer_collision_case():
    r = reward(s_g=(50.0, 0.0), s_a=(0.0, 0.0), a=np.array([[0.5, 0.3]]),
               collision=True, roll=0.0, pitch=0.0, w=UNIT)
    assert r == pytest.approx(-2.5, abs=1e-12)


def test_reward_goal_radius_is_strict():
    at_edge = reward((2.0, 0.0), (0.0, 0.0), np.zeros((1, 2)), False, 0, 0, UNIT)
    inside = reward((2.0 - 1e-9, 0.0), (0.0, 0.0), np.zeros((1, 2)), False, 0, 0, UNIT)
    assert at_edge == -1.0 and inside == 100.0


def test_reward_steer_norm_over_tuples():
    a = np.array([[0.3, 0.5], [0.4, 0.1]])
    r = reward((50.0, 0.0), (0.0, 0.0), a, False, 0.0, 0.0, UNIT)
    assert r == pytest.approx(-1.0 - 0.5, abs=1e-12)


def test_reward_uses_worst_attitude_axis():
    r = reward((50.0, 0.0), (0.0, 0.0), np.zeros((1, 2)), False, -36.0, 9.0, UNIT)
    assert r == pytest.approx(-1.0 - 0.2, abs=1e-12)


def test_reward_weights_scale_components():
    w = RewardWeights(goal=1.0, upright=1.0, steer=0.1, collision=1.0)
    r = reward((50.0, 0.0), (0.0, 0.0), np.array([[0.5, 0.0]]), True, 0.0, 0.0, w)
    assert r == pytest.approx(-1.0 - 0.05 - 1.0, abs=1e-12)


def test_reward_rejects_non_finite():
    with pytest.raises(ValueError):
        reward((np.inf, 0.0), (0.0, 0.0), np.zeros((1, 2)), False, 0, 0, UNIT)
    with pytest.raises(ValueError):
        RewardWeights(goal=-1.0)


# --- reset ----------------------------------------------------------------

def test_reset_deterministic():
    a = tiny_env().reset(11)
    b = tiny_env().reset(11)
    assert np.array_equal(a.class_map, b.class_map)
    np.testing.assert_allclose(a.tau_p, b.tau_p, atol=0)
    np.testing.assert_allclose(a.s_g, b.s_g, atol=0)


def test_reset_observation_shapes():
    obs = tiny_env().reset(0)
    assert obs.class_map.shape == (16, 16) and obs.class_map.dtype == np.uint8
    assert obs.tau_p.shape == (PAST_TRAJ_LEN, 3)
    assert obs.s_a.shape == (2,) and not obs.s_a.any()
    assert obs.s_g.shape == (2,)
    assert obs.rgb is None


def test_reset_goal_within_annulus():
    env = tiny_env()
    for seed in range(20):
        obs = env.reset(seed)
        d = float(np.hypot(*obs.s_g))
        assert 2.0 <= d <= 15.0 + 1e-9


def test_reset_goals_vary_with_seed():
    env = tiny_env()
    goals = {tuple(np.round(env.reset(s).s_g, 6)) for s in range(8)}
    assert len(goals) > 4


def test_rgb_rendering_toggle():
    obs = tiny_env(render_rgb=True).reset(0)
    assert obs.rgb is not None and obs.rgb.shape == (16, 16, 3)


def test_config_validation():
    with pytest.raises(ValueError):
        EnvConfig(action_count=3)
    with pytest.raises(ValueError):
        EnvConfig(goal_radius=0.0)
    with pytest.raises(ValueError):
        EnvConfig(presets=("swamp",))
    assert EnvConfig(substeps=20, dt=0.05).decision_period == pytest.approx(1.0)


# --- stepping ----------------------------------------------------------------

def _fixed_env(goal, start=(30.0, 30.0, 0.0), world=None, **overrides):
    kw = dict(
        camera=CameraModel(resolution=16, max_range=60.0),
        fixed_world=world or flat_world(),
        fixed_start=start,
        fixed_goal=goal,
        max_decisions=10,
    )
    kw.update(overrides)
    return DriveEnv(EnvConfig(**kw))


def test_step_requires_reset_and_correct_shape():
    env = tiny_env()
    with pytest.raises(RuntimeError):
        env.step(np.zeros((5, 2)))
    env.reset(0)
    with pytest.raises(ValueError):
        env.step(np.zeros((3, 2)))


def test_starting_on_goal_terminates_with_pure_bonus():
    env = _fixed_env(goal=(31.0, 30.0))
    env.reset(0)
    actions = np.tile([0.3, 1.0], (5, 1))
    obs, r, done, info = env.step(actions)
    assert done and info["goal_hit"]
    assert r == pytest.approx(GOAL_BONUS, abs=0)
    assert info["components"] == {"r_g": GOAL_BONUS, "r_u": 0.0, "r_s": 0.0, "r_c": 0.0}
    assert info["substep_poses"].shape == (0, 3)
    with pytest.raises(RuntimeError):
        env.step(actions)


def test_straight_goal_reached_on_flat_world():
    env = _fixed_env(goal=(40.0, 30.0))
    env.reset(0)
    actions = np.tile([0.0, 1.0], (5, 1))
    done = False
    decisions = 0
    while not done:
        _, r, done, info = env.step(actions)
        decisions += 1
    assert info["goal_hit"] and decisions <= 4
    assert r > 0  # the goal bonus dominates the step costs


def test_decision_reward_matches_weighted_components():
    env = tiny_env(max_decisions=4)
    env.reset(3)
    w = env.config.weights
    rng = np.random.default_rng(0)
    done = False
    while not done:
        a = np.column_stack([rng.uniform(-0.7, 0.7, 5), rng.uniform(0, 1, 5)])
        _, r, done, info = env.step(a)
        c = info["components"]
        want = w.goal * c["r_g"] + w.upright * c["r_u"] + w.steer * c["r_s"] \
            + w.collision * c["r_c"]
        assert r == pytest.approx(want, abs=1e-12)


def test_steer_cost_uses_clamped_actions():
    env = _fixed_env(goal=(55.0, 30.0))
    env.reset(0)
    big = np.tile([10.0, 0.5], (5, 1))  # clamps to pi/4 each
    _, _, _, info = env.step(big)
    assert info["components"]["r_s"] == pytest.approx(-math.sqrt(5) * math.pi / 4, abs=1e-12)


def test_rollout_trajectory_matches_get_traj():
    env = tiny_env()
    obs = env.reset(5)
    actions = np.tile([0.2, 0.6], (5, 1))
    _, _, _, info = env.step(actions)
    want = get_traj(6, obs.tau_p, actions, RolloutConfig(0.1))
    np.testing.assert_allclose(info["trajectory_ego"], want, atol=1e-9)


def test_substep_bookkeeping():
    env = _fixed_env(goal=(55.0, 30.0))
    env.reset(0)
    _, _, _, info = env.step(np.tile([0.0, 0.2], (5, 1)))
    assert info["substep_poses"].shape == (20, 3)
    np.testing.assert_allclose(np.diff(info["substep_times"]), 0.05, atol=1e-12)
    np.testing.assert_allclose(info["achieved_world"], info["substep_poses"][-1, :2], atol=0)
    np.testing.assert_allclose(info["reference_pose"], [30.0, 30.0, 0.0], atol=0)


def test_collision_accumulates_per_substep_and_is_nonterminal():
    # Goal far off the driving line so the episode runs its full budget.
    world = flat_world(obstacles=[Obstacle(ClassId.ROCKS, 36.0, 30.0, 1.0, 1.5)])
    env = _fixed_env(goal=(30.0, 55.0), world=world)
    env.reset(0)
    done = False
    saw_collision = False
    while not done:
        _, r, done, info = env.step(np.tile([0.0, 1.0], (5, 1)))
        if info["collision"]:
            saw_collision = True
            assert info["components"]["r_c"] <= -1.0
    assert saw_collision
    assert env._decisions == 10  # ran to the decision budget


def test_terminal_collision_ends_episode():
    world = flat_world(obstacles=[Obstacle(ClassId.ROCKS, 36.0, 30.0, 1.0, 1.5)])
    env = _fixed_env(goal=(55.0, 30.0), world=world, terminal_collision=True)
    env.reset(0)
    done = False
    decisions = 0
    while not done:
        _, _, done, info = env.step(np.tile([0.0, 1.0], (5, 1)))
        decisions += 1
    assert info["collision"] and decisions < 10


def test_upright_cost_negative_on_slopes():
    env = DriveEnv(EnvConfig(
        presets=("canyon",), obstacle_density=dict(EMPTY_DENSITIES),
        camera=CameraModel(resolution=16, max_range=60.0), max_decisions=2))
    env.reset(4)
    _, _, _, info = env.step(np.tile([0.0, 0.8], (5, 1)))
    assert info["components"]["r_u"] < 0.0


def test_budget_termination_without_goal():
    env = _fixed_env(goal=(55.0, 30.0), max_decisions=3)
    env.reset(0)
    still = np.tile([0.0, 0.0], (5, 1))
    total = 0
    done = False
    while not done:
        _, _, done, info = env.step(still)
        total += 1
    assert total == 3 and not info["goal_hit"]


def test_episode_fully_seed_deterministic():
    def run():
        env = tiny_env()
        env.reset(9)
        rng = np.random.default_rng(1)
        rewards, poses = [], []
        done = False
        while not done:
            a = np.column_stack([rng.uniform(-0.7, 0.7, 5), rng.uniform(0, 1, 5)])
            _, r, done, info = env.step(a)
            rewards.append(r)
            poses.append(info["achieved_world"])
        return np.array(rewards), np.array(poses)

    r1, p1 = run()
    r2, p2 = run()
    np.testing.assert_allclose(r1, r2, atol=0)
    np.testing.assert_allclose(p1, p2, atol=0)


def test_action_count_variants_step():
    for a_count in (1, 5, 10):
        env = tiny_env(action_count=a_count, max_decisions=2)
        env.reset(0)
        obs, r, done, info = env.step(np.tile([0.1, 0.5], (a_count, 1)))
        assert info["trajectory_ego"].shape == (a_count + 1, 3)


def test_nongoal_step_reward_is_nonpositive():
    env = tiny_env(max_decisions=3)
    env.reset(2)
    _, r, _, info = env.step(np.tile([0.4, 0.9], (5, 1)))
    if not info["goal_hit"]:
        assert r <= 0.0


# --- message synchronization ------------------------------------------------

def _post_all(buf, stamps):
    for kind, t in zip(("image", "odometry", "goal"), stamps):
        buf.post(TimedMessage(kind, t))


def test_sync_within_window_bundles():
    buf = MessageBuffer()
    _post_all(buf, (1.00, 1.05, 1.09))
    bundle = buf.sync_step()
    assert bundle is not None
    assert {m.kind for m in bundle.values()} == {"image", "odometry", "goal"}


def test_sync_gap_over_window_rejected():
    buf = MessageBuffer()
    _post_all(buf, (1.00, 1.05, 1.11))
    assert buf.sync_step() is None


def test_sync_boundary_inclusive():
    buf = MessageBuffer()
    _post_all(buf, (0.0, 0.05, 0.1))  # spread equals the window exactly
    assert buf.sync_step() is not None


def test_sync_requires_all_kinds():
    buf = MessageBuffer()
    buf.post(TimedMessage("image", 1.0))
    buf.post(TimedMessage("goal", 1.01))
    assert buf.sync_step() is None


def test_sync_consumes_bundle():
    buf = MessageBuffer()
    _post_all(buf, (1.0, 1.0, 1.0))
    assert buf.sync_step() is not None
    assert buf.sync_step() is None  # stale until a fresh post arrives
    buf.post(TimedMessage("image", 1.2))
    assert buf.sync_step() is None  # odometry/goal still consumed


def test_sync_ignores_future_messages():
    buf = MessageBuffer()
    _post_all(buf, (1.0, 1.0, 1.05))
    assert buf.sync_step(now=1.02) is None
    assert buf.sync_step(now=1.05) is not None


def test_timed_message_validation():
    with pytest.raises(ValueError):
        TimedMessage("lidar", 1.0)
    with pytest.raises(ValueError):
        TimedMessage("image", float("nan"))
