"""Desk-scale off-road driving simulation, policy training, and evaluation.

Pipeline: procedural worlds render to paired (randomized RGB, canonical
segmentation, depth) observations; a goal-conditioned policy acts in
trajectory space over the segmentation view; offline metrics score proposed
trajectories against logged reference paths.
"""

from .classes import NUM_CLASSES, OBSTACLE_CLASSES, PALETTE, ClassId
from .env import DriveEnv, EnvConfig, Observation, RewardWeights, reward
from .learner import CEMConfig, EvalReport, Policy, RandomPolicy, evaluate, featurize, train_cem
from .metrics import (
    OfflineRecord,
    ate_metric,
    build_offline_dataset,
    evaluate_offline,
    gt_goal_metric,
    gt_metric,
    l2_metric,
    resample,
)
from .render import CameraModel, RandomizationConfig, RenderOutput, colorize_segmentation, render
from .replay import HERConfig, ReplayBuffer, Transition
from .vehicle import VehicleState, egocentric_transform, get_traj, pid_track, step_dynamics
from .world import World, WorldSpec, generate_world, load_world, save_world

__version__ = "0.1.0"

__all__ = [
    "CEMConfig", "CameraModel", "ClassId", "DriveEnv", "EnvConfig", "EvalReport",
    "HERConfig", "NUM_CLASSES", "OBSTACLE_CLASSES", "Observation", "OfflineRecord",
    "PALETTE", "Policy", "RandomPolicy", "RandomizationConfig", "RenderOutput",
    "ReplayBuffer", "RewardWeights", "Transition", "VehicleState", "World",
    "WorldSpec", "ate_metric", "build_offline_dataset", "colorize_segmentation",
    "egocentric_transform", "evaluate", "evaluate_offline", "featurize",
    "generate_world", "get_traj", "gt_goal_metric", "gt_metric", "l2_metric",
    "load_world", "pid_track", "render", "resample", "reward", "save_world",
    "step_dynamics", "train_cem",
]
