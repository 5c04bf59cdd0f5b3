"""Vehicle kinematics, trajectory rollout, tracking, and frame transforms.

The policy acts in trajectory space: a short sequence of (steer, accel)
tuples is unrolled into an egocentric waypoint trajectory (`get_traj`),
which a pure-pursuit tracker then follows with low-level wheel commands
through a kinematic bicycle model.

Sign convention used throughout: positive steering / heading turns
counter-clockwise (left), matching the standard 2D rotation matrix.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .world import World, query_collision

WHEELBASE = 2.9     # m
ACCEL_MAX = 3.0     # m/s^2 at full throttle
SPEED_MAX = 10.0    # m/s
STEER_MAX = math.pi / 4
FOOTPRINT_RADIUS = 1.5  # m, collision disc

PAST_TRAJ_LEN = 10


def wrap_angle(a):
    """Normalize angle(s) to (-pi, pi]."""
    wrapped = np.mod(-np.asarray(a) + np.pi, 2 * np.pi)
    out = -(wrapped - np.pi)
    if np.isscalar(a) or isinstance(a, (int, float)):
        return float(out)
    return out


@dataclass
class VehicleState:
    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0
    speed: float = 0.0

    def __post_init__(self):
        self.yaw = wrap_angle(self.yaw)
        if self.speed < 0:
            raise ValueError(f"speed must be >= 0, got {self.speed}")

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def pose(self) -> np.ndarray:
        return np.array([self.x, self.y, self.yaw])


def clamp_action(steer: float, accel: float) -> tuple[float, float]:
    """Hard clamps for the (steer, accel) action tuple."""
    return (
        float(np.clip(steer, -STEER_MAX, STEER_MAX)),
        float(np.clip(accel, 0.0, 1.0)),
    )


@dataclass
class RolloutConfig:
    delta_theta: float = 0.1  # rad of heading change accrued per rollout step

    def __post_init__(self):
        if not self.delta_theta > 0:
            raise ValueError(f"delta_theta must be > 0, got {self.delta_theta}")


def get_traj(l: int, tau_p: np.ndarray, actions: np.ndarray,
             cfg: Optional[RolloutConfig] = None) -> np.ndarray:
    """Unroll (steer, accel) tuples into an egocentric (x, y, yaw) trajectory.

    Point 0 is the origin with zero heading. The step size starts at the
    spacing of the last two past-trajectory points and grows by each accel
    term; the heading moves toward each steer angle at a fixed rate per step
    and is clamped to its magnitude, so a small steer after a large one
    snaps the heading inward immediately.

    accel here is a per-step spacing increment in meters, not a physical
    acceleration.
    """
    if l < 1:
        raise ValueError(f"trajectory length must be >= 1, got {l}")
    tau_p = np.asarray(tau_p, dtype=np.float64)
    if tau_p.ndim != 2 or tau_p.shape[0] < 2:
        raise ValueError("past trajectory needs at least 2 points")
    actions = np.asarray(actions, dtype=np.float64).reshape(-1, 2)
    if actions.shape[0] < l - 1:
        raise ValueError(f"need at least {l - 1} actions, got {actions.shape[0]}")
    cfg = cfg or RolloutConfig()

    traj = np.zeros((l, 3), dtype=np.float64)
    h = 0.0
    s = float(np.hypot(tau_p[-1, 0] - tau_p[-2, 0], tau_p[-1, 1] - tau_p[-2, 1]))
    for i in range(l - 1):
        theta, alpha = actions[i]
        s += alpha
        h = float(np.clip(h + cfg.delta_theta * np.sign(theta), -abs(theta), abs(theta)))
        traj[i + 1, 0] = traj[i, 0] + s * math.cos(h)
        traj[i + 1, 1] = traj[i, 1] + s * math.sin(h)
        traj[i + 1, 2] = h
    return traj


def initial_past_trajectory(speed: float, dt: float) -> np.ndarray:
    """Straight-behind history used at episode start: spacing = speed * dt."""
    spacing = speed * dt
    xs = -spacing * np.arange(PAST_TRAJ_LEN - 1, -1, -1, dtype=np.float64)
    out = np.zeros((PAST_TRAJ_LEN, 3))
    out[:, 0] = xs
    return out


def step_dynamics(state: VehicleState, steer: float, throttle: float, dt: float,
                  world: Optional[World] = None) -> tuple[VehicleState, bool]:
    """One kinematic bicycle step; returns (new state, collided).

    Sequential update: speed first, then yaw from the new speed, then
    position along the new heading (semi-implicit Euler).
    """
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    steer = float(np.clip(steer, -STEER_MAX, STEER_MAX))
    throttle = float(np.clip(throttle, -1.0, 1.0))
    speed = float(np.clip(state.speed + throttle * ACCEL_MAX * dt, 0.0, SPEED_MAX))
    yaw = wrap_angle(state.yaw + (speed / WHEELBASE) * math.tan(steer) * dt)
    x = state.x + speed * math.cos(yaw) * dt
    y = state.y + speed * math.sin(yaw) * dt
    new = replace(state, x=x, y=y, yaw=yaw, speed=speed)
    collided = query_collision(world, x, y, FOOTPRINT_RADIUS) if world is not None else False
    return new, collided


DEFAULT_GAINS = {
    "min_lookahead": 1.0,    # m
    "lookahead_time": 0.4,   # s; lookahead distance = max(min, time * speed)
    "speed_kp": 1.0,         # throttle per m/s of speed error
    "point_dt": 0.25,        # s between consecutive trajectory points
}


def pid_track(state: VehicleState, traj: np.ndarray,
              gains: Optional[dict] = None) -> tuple[float, float]:
    """Wheel command (steer, throttle) pursuing a waypoint trajectory.

    Lateral: pure-pursuit curvature toward a speed-scaled lookahead point —
    a proportional law on the egocentric lateral error. Longitudinal:
    proportional control toward the speed implied by local point spacing.
    Trajectory points must be in the same frame as the state.
    """
    g = dict(DEFAULT_GAINS)
    if gains:
        g.update(gains)
    pts = np.asarray(traj, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("trajectory must be a non-empty (N, >=2) array")
    xy = pts[:, :2]
    pos = state.position
    dists = np.hypot(xy[:, 0] - pos[0], xy[:, 1] - pos[1])
    j = int(np.argmin(dists))

    lookahead = max(g["min_lookahead"], g["lookahead_time"] * state.speed)
    target = xy[-1]
    for k in range(j, xy.shape[0]):
        if dists[k] >= lookahead:
            target = xy[k]
            break

    dx = target[0] - pos[0]
    dy = target[1] - pos[1]
    d2 = dx * dx + dy * dy
    c, s = math.cos(state.yaw), math.sin(state.yaw)
    lateral = -s * dx + c * dy
    if d2 < 1e-12:
        steer = 0.0
    else:
        steer = math.atan(WHEELBASE * 2.0 * lateral / d2)
    steer = float(np.clip(steer, -STEER_MAX, STEER_MAX))

    if xy.shape[0] < 2:
        target_speed = 0.0
    else:
        seg = min(j, xy.shape[0] - 2)
        spacing = float(np.hypot(*(xy[seg + 1] - xy[seg])))
        target_speed = spacing / g["point_dt"]
        if j == xy.shape[0] - 1:
            # Past the final point: brake in proportion to remaining distance.
            forward = c * dx + s * dy
            if forward <= 0:
                target_speed = 0.0
    throttle = float(np.clip(g["speed_kp"] * (target_speed - state.speed), -1.0, 1.0))
    return steer, throttle


def egocentric_transform(world_points: np.ndarray, reference_pose) -> np.ndarray:
    """Rigid transform of (x, y[, yaw]) rows into the frame of reference_pose.

    The reference pose maps to the origin with zero heading.
    """
    ref = np.asarray(reference_pose, dtype=np.float64)
    if not np.all(np.isfinite(ref)):
        raise ValueError("reference pose must be finite")
    pts = np.asarray(world_points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    c, s = math.cos(-ref[2]), math.sin(-ref[2])
    dx = pts[:, 0] - ref[0]
    dy = pts[:, 1] - ref[1]
    out = pts.copy()
    out[:, 0] = c * dx - s * dy
    out[:, 1] = s * dx + c * dy
    if pts.shape[1] >= 3:
        out[:, 2] = wrap_angle(pts[:, 2] - ref[2])
    return out[0] if single else out


def ego_to_world(ego_points: np.ndarray, reference_pose) -> np.ndarray:
    """Inverse of egocentric_transform."""
    ref = np.asarray(reference_pose, dtype=np.float64)
    pts = np.asarray(ego_points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    c, s = math.cos(ref[2]), math.sin(ref[2])
    out = pts.copy()
    out[:, 0] = ref[0] + c * pts[:, 0] - s * pts[:, 1]
    out[:, 1] = ref[1] + s * pts[:, 0] + c * pts[:, 1]
    if pts.shape[1] >= 3:
        out[:, 2] = wrap_angle(pts[:, 2] + ref[2])
    return out[0] if single else out


def save_trajectories_jsonl(path, trajectories, frame: str = "ego", ids=None) -> None:
    """One JSON record per trajectory: {id, frame, points: [[x, y, yaw], ...]}."""
    if frame not in ("ego", "world"):
        raise ValueError(f"frame must be 'ego' or 'world', got {frame!r}")
    with open(path, "w") as f:
        for i, traj in enumerate(trajectories):
            rec = {
                "id": ids[i] if ids is not None else i,
                "frame": frame,
                "points": np.asarray(traj, dtype=np.float64).tolist(),
            }
            f.write(json.dumps(rec) + "\n")


def load_trajectories_jsonl(path) -> list[dict]:
    """Records with 'points' decoded to float arrays."""
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            rec["points"] = np.asarray(rec["points"], dtype=np.float64)
            out.append(rec)
    return out
