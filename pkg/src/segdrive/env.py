"""Goal-conditioned driving episodes over procedural worlds.

One decision = a short sequence of (steer, accel) tuples, unrolled into an
egocentric trajectory and tracked by the low-level controller for a fixed
number of physics substeps. Rewards follow a four-term shaping: sparse goal
bonus, attitude penalty, steering cost, collision penalty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .render import CameraModel, RandomizationConfig, RenderOutput, render
from .vehicle import (
    PAST_TRAJ_LEN,
    RolloutConfig,
    VehicleState,
    clamp_action,
    ego_to_world,
    egocentric_transform,
    get_traj,
    initial_past_trajectory,
    pid_track,
)
from .world import PRESETS, START_CLEARANCE, World, WorldSpec, generate_world, point_in_obstacle, surface_attitude

GOAL_BONUS = 100.0
ACTION_COUNTS = (1, 5, 10)


@dataclass
class RewardWeights:
    goal: float = 1.0       # lambda_g
    upright: float = 1.0    # lambda_u
    steer: float = 0.1      # lambda_s
    collision: float = 1.0  # lambda_c

    def __post_init__(self):
        for name in ("goal", "upright", "steer", "collision"):
            if getattr(self, name) < 0:
                raise ValueError(f"reward weight {name} must be >= 0")


def reward(s_g, s_a, a, collision: bool, roll: float, pitch: float,
           w: Optional[RewardWeights] = None, goal_radius: float = 2.0) -> float:
    """Single-evaluation shaped reward.

    r_g = 100 inside the goal radius else -1; r_u = -max(|roll|,|pitch|)/180
    (degrees); r_s = -||steer components||_2; r_c = -1 on collision.
    Returns the weighted sum.
    """
    w = w or RewardWeights()
    s_g = np.asarray(s_g, dtype=np.float64)
    s_a = np.asarray(s_a, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64).reshape(-1, 2)
    if not (np.all(np.isfinite(s_g)) and np.all(np.isfinite(s_a)) and np.all(np.isfinite(a))):
        raise ValueError("reward inputs must be finite")
    r_g = GOAL_BONUS if float(np.hypot(*(s_g - s_a))) < goal_radius else -1.0
    r_u = -max(abs(roll), abs(pitch)) / 180.0
    r_s = -float(np.linalg.norm(a[:, 0]))
    r_c = -1.0 if collision else 0.0
    return w.goal * r_g + w.upright * r_u + w.steer * r_s + w.collision * r_c


@dataclass
class Observation:
    class_map: np.ndarray       # (H, W) uint8 ClassId
    tau_p: np.ndarray           # (10, 3) egocentric past trajectory
    s_a: np.ndarray             # (2,) egocentric position of self: always the origin
    s_g: np.ndarray             # (2,) egocentric goal
    rgb: Optional[np.ndarray] = None  # (H, W, 3) uint8 when RGB rendering is on

    def one_hot(self) -> np.ndarray:
        from .classes import NUM_CLASSES

        return np.eye(NUM_CLASSES, dtype=np.float32)[self.class_map].transpose(2, 0, 1)


@dataclass
class EnvConfig:
    presets: tuple[str, ...] = PRESETS   # sampled uniformly per episode
    extent: float = 60.0
    grid_resolution: float = 0.5
    obstacle_density: Optional[dict] = None   # per-class override, None = preset defaults
    road_probability: float = 0.0
    action_count: int = 5                # A
    substeps: int = 20
    dt: float = 0.05
    max_decisions: int = 20
    goal_range: float = 20.0
    goal_radius: float = 2.0
    initial_speed: float = 0.0
    weights: RewardWeights = field(default_factory=RewardWeights)
    camera: Optional[CameraModel] = None
    randomization: Optional[RandomizationConfig] = None  # None = canonical rendering
    render_rgb: bool = False
    terminal_collision: bool = False
    delta_theta: float = 0.1
    # Fixed-scene hooks for constructed scenarios; bypass procedural sampling.
    fixed_world: Optional[World] = None
    fixed_start: Optional[tuple[float, float, float]] = None
    fixed_goal: Optional[tuple[float, float]] = None

    def __post_init__(self):
        if self.action_count not in ACTION_COUNTS:
            raise ValueError(f"action_count must be one of {ACTION_COUNTS}, got {self.action_count}")
        if not self.goal_radius > 0:
            raise ValueError("goal_radius must be > 0")
        if self.substeps < 1 or self.dt <= 0:
            raise ValueError("substeps must be >= 1 and dt > 0")
        for p in self.presets:
            if p not in PRESETS:
                raise ValueError(f"unknown preset {p!r}")

    @property
    def decision_period(self) -> float:
        return self.substeps * self.dt


class DriveEnv:
    """Episodic goal-reaching environment; one instance owns one episode at a time."""

    def __init__(self, config: Optional[EnvConfig] = None):
        self.config = config or EnvConfig()
        self.world: Optional[World] = None
        self.state: Optional[VehicleState] = None
        self.goal_world: Optional[np.ndarray] = None
        self._done = True
        self._decisions = 0
        self._pose_history: list[np.ndarray] = []
        self._time = 0.0
        self._render_rng: Optional[np.random.Generator] = None
        self._camera = self.config.camera or CameraModel()
        self._rand = self.config.randomization or RandomizationConfig.canonical()
        self._gains = {"point_dt": self.config.decision_period / self.config.action_count}

    # -- episode lifecycle ------------------------------------------------

    def reset(self, seed: int = 0) -> Observation:
        cfg = self.config
        rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, 100]))
        self._render_rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, 101]))

        if cfg.fixed_world is not None:
            self.world = cfg.fixed_world
        else:
            preset = cfg.presets[int(rng.integers(len(cfg.presets)))]
            road = None
            if cfg.road_probability > 0 and rng.random() < cfg.road_probability:
                from .world import RoadSpec

                road = RoadSpec()
            self.world = generate_world(WorldSpec(
                seed=seed, preset=preset, extent=cfg.extent,
                grid_resolution=cfg.grid_resolution,
                obstacle_density=cfg.obstacle_density, road=road))

        center = self.world.extent / 2.0
        if cfg.fixed_start is not None:
            start = np.asarray(cfg.fixed_start, dtype=np.float64)
        else:
            from .world import query_collision
            from .vehicle import FOOTPRINT_RADIUS

            start = None
            jitter = max(0.0, START_CLEARANCE - 1.5 - 0.5)
            for _ in range(100):
                cand = np.array([
                    center + rng.uniform(-jitter, jitter),
                    center + rng.uniform(-jitter, jitter),
                    rng.uniform(-math.pi, math.pi),
                ])
                if not query_collision(self.world, cand[0], cand[1], FOOTPRINT_RADIUS):
                    start = cand
                    break
            if start is None:
                raise RuntimeError("no collision-free start placement after 100 tries")

        if cfg.fixed_goal is not None:
            self.goal_world = np.asarray(cfg.fixed_goal, dtype=np.float64)
        else:
            goal = None
            for _ in range(100):
                ang = rng.uniform(-math.pi, math.pi)
                # sqrt for uniform density over the disc; the trivially-satisfied
                # core inside the goal radius is excluded.
                r = cfg.goal_range * math.sqrt(rng.uniform())
                if r < cfg.goal_radius:
                    continue
                cand = start[:2] + r * np.array([math.cos(ang), math.sin(ang)])
                if not (0.0 <= cand[0] <= self.world.extent and 0.0 <= cand[1] <= self.world.extent):
                    continue
                if bool(point_in_obstacle(self.world, cand[0], cand[1])[0]):
                    continue
                goal = cand
                break
            if goal is None:
                raise RuntimeError("no obstacle-free goal placement after 100 tries")
            self.goal_world = goal

        self.state = VehicleState(x=float(start[0]), y=float(start[1]),
                                  yaw=float(start[2]), speed=cfg.initial_speed)
        tau_p_ego = initial_past_trajectory(cfg.initial_speed, cfg.dt)
        self._pose_history = list(ego_to_world(tau_p_ego, self.state.pose))
        self._done = False
        self._decisions = 0
        self._time = 0.0
        return self._observe()

    def _observe(self) -> Observation:
        pose = self.state.pose
        out = self._render(pose)
        tau_p = egocentric_transform(np.asarray(self._pose_history[-PAST_TRAJ_LEN:]), pose)
        s_g = egocentric_transform(np.append(self.goal_world, 0.0), pose)[:2]
        return Observation(
            class_map=out.class_map,
            tau_p=tau_p,
            s_a=np.zeros(2),
            s_g=s_g,
            rgb=out.rgb if self.config.render_rgb else None,
        )

    def _render(self, pose) -> RenderOutput:
        seed = int(self._render_rng.integers(2 ** 31))
        return render(self.world, pose, self._camera, self._rand, rng_seed=seed)

    # -- stepping ---------------------------------------------------------

    def step(self, actions) -> tuple[Observation, float, bool, dict]:
        if self._done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        cfg = self.config
        actions = np.asarray(actions, dtype=np.float64).reshape(-1, 2)
        if actions.shape[0] != cfg.action_count:
            raise ValueError(f"expected {cfg.action_count} action tuples, got {actions.shape[0]}")
        actions = np.array([clamp_action(t, a) for t, a in actions])

        w = cfg.weights
        start_pose = self.state.pose
        info: dict = {"decision": self._decisions, "reference_pose": start_pose.copy()}

        dist0 = float(np.hypot(*(self.goal_world - self.state.position)))
        if dist0 < cfg.goal_radius:
            # Already at the goal when the decision is requested: terminal
            # success without motion or action cost.
            components = {"r_g": GOAL_BONUS, "r_u": 0.0, "r_s": 0.0, "r_c": 0.0}
            self._done = True
            self._decisions += 1
            obs = self._observe()
            info.update(goal_hit=True, collision=False, components=components,
                        achieved_world=self.state.position.copy(),
                        substep_poses=np.empty((0, 3)), substep_times=np.empty(0),
                        speed=self.state.speed)
            return obs, w.goal * GOAL_BONUS, True, info

        traj_ego = get_traj(cfg.action_count + 1,
                            egocentric_transform(np.asarray(self._pose_history[-PAST_TRAJ_LEN:]), start_pose),
                            actions, RolloutConfig(cfg.delta_theta))
        traj_world = ego_to_world(traj_ego, start_pose)

        from .vehicle import step_dynamics

        r_u_sum = 0.0
        r_c_sum = 0.0
        goal_hit = False
        collision_any = False
        poses = []
        times = []
        for _ in range(cfg.substeps):
            steer, throttle = pid_track(self.state, traj_world, self._gains)
            self.state, collided = step_dynamics(self.state, steer, throttle, cfg.dt, self.world)
            self._time += cfg.dt
            roll, pitch = surface_attitude(self.world, self.state.x, self.state.y, self.state.yaw)
            r_u_sum += -max(abs(roll), abs(pitch)) / 180.0
            if collided:
                r_c_sum += -1.0
                collision_any = True
            poses.append(self.state.pose)
            times.append(self._time)
            self._pose_history.append(self.state.pose)
            if float(np.hypot(*(self.goal_world - self.state.position))) < cfg.goal_radius:
                goal_hit = True
                break
            if collided and cfg.terminal_collision:
                break

        r_g = GOAL_BONUS if goal_hit else -1.0
        r_s = -float(np.linalg.norm(actions[:, 0]))
        total = w.goal * r_g + w.upright * r_u_sum + w.steer * r_s + w.collision * r_c_sum

        self._decisions += 1
        self._done = goal_hit or self._decisions >= cfg.max_decisions \
            or (cfg.terminal_collision and collision_any)

        obs = self._observe()
        info.update(
            goal_hit=goal_hit,
            collision=collision_any,
            components={"r_g": r_g, "r_u": r_u_sum, "r_s": r_s, "r_c": r_c_sum},
            achieved_world=self.state.position.copy(),
            substep_poses=np.asarray(poses),
            substep_times=np.asarray(times),
            speed=self.state.speed,
            trajectory_ego=traj_ego,
        )
        return obs, total, self._done, info

    @property
    def done(self) -> bool:
        return self._done


# -- closed-loop message synchronization -----------------------------------

SYNC_WINDOW = 0.100  # s
MESSAGE_KINDS = ("image", "odometry", "goal")


@dataclass
class TimedMessage:
    kind: str
    timestamp: float
    payload: object = None

    def __post_init__(self):
        if self.kind not in MESSAGE_KINDS:
            raise ValueError(f"unknown message kind {self.kind!r}")
        if not math.isfinite(self.timestamp):
            raise ValueError("timestamp must be finite")


class MessageBuffer:
    """Latest-message-per-kind buffer with consume-on-bundle semantics."""

    def __init__(self):
        self._latest: dict[str, TimedMessage] = {}
        self._consumed: dict[str, bool] = {}

    def post(self, msg: TimedMessage) -> None:
        self._latest[msg.kind] = msg
        self._consumed[msg.kind] = False

    def sync_step(self, now: Optional[float] = None) -> Optional[dict[str, TimedMessage]]:
        """A {kind: message} bundle iff all three kinds are fresh and their
        timestamps span at most 100 ms; consumed messages go stale."""
        msgs = {}
        for kind in MESSAGE_KINDS:
            msg = self._latest.get(kind)
            if msg is None or self._consumed.get(kind, True):
                return None
            if now is not None and msg.timestamp > now:
                return None
            msgs[kind] = msg
        stamps = [m.timestamp for m in msgs.values()]
        if max(stamps) - min(stamps) > SYNC_WINDOW:
            return None
        for kind in MESSAGE_KINDS:
            self._consumed[kind] = True
        return msgs
