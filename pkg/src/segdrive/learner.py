"""Policies over pooled segmentation features, trained by population search.

The TD3-scale backbone is replaced by a cross-entropy-method optimizer over
a small two-layer policy; every interface it touches (observations, action
sequences, rewards, the hindsight replay buffer) is the same one a gradient
learner would use.
"""

from __future__ import annotations

import csv
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .classes import NUM_CLASSES
from .env import ACTION_COUNTS, DriveEnv, Observation
from .replay import HERConfig, ReplayBuffer, Transition, transition_from_step
from .vehicle import SPEED_MAX, STEER_MAX

DEFAULT_POOL = 16
FEATURE_SCALE_DISTANCE = 20.0  # meters mapped to ~1 inside the policy


def featurize(obs: Observation, pool: int = DEFAULT_POOL) -> np.ndarray:
    """Mean-pooled per-cell class fractions + flattened past trajectory + s_a + s_g.

    Pooling partitions the class map into pool x pool equal cells; each cell
    yields the fraction of its pixels in each of the 6 classes (summing to 1).
    Default pool of 16 gives 16*16*6 + 30 + 2 + 2 = 1570 features.
    """
    cm = obs.class_map
    h, w = cm.shape
    if h % pool or w % pool:
        raise ValueError(f"class map {h}x{w} not divisible into {pool}x{pool} cells")
    ch, cw = h // pool, w // pool
    one_hot = np.eye(NUM_CLASSES, dtype=np.float64)[cm]  # (H, W, C)
    cells = one_hot.reshape(pool, ch, pool, cw, NUM_CLASSES).mean(axis=(1, 3))
    return np.concatenate([
        cells.ravel(),
        np.asarray(obs.tau_p, dtype=np.float64).ravel(),
        np.asarray(obs.s_a, dtype=np.float64),
        np.asarray(obs.s_g, dtype=np.float64),
    ])


def feature_length(pool: int = DEFAULT_POOL) -> int:
    return pool * pool * NUM_CLASSES + 30 + 2 + 2


@dataclass
class Policy:
    """Two-layer tanh network emitting A (steer, accel) tuples.

    The input is the feature vector plus two fixed derived entries (goal
    bearing and distance from s_g) — a basis expansion that linearizes the
    steering problem without touching the feature contract. shared=True ties
    the output head to a single tuple tiled across all A slots, keeping the
    rollout reference coherent and shrinking the search space for population
    methods. Distance-like entries are scaled down internally; outputs are
    squashed (scaled tanh for steer, sigmoid for accel) and clamped, so zero
    parameters give (0, 0.5) for every tuple.
    """

    action_count: int = 5
    pool: int = DEFAULT_POOL
    hidden: int = 16
    params: np.ndarray = None
    shared: bool = False

    def __post_init__(self):
        if self.action_count not in ACTION_COUNTS:
            raise ValueError(f"action_count must be one of {ACTION_COUNTS}")
        if self.hidden < 1:
            raise ValueError("hidden must be >= 1")
        if self.params is None:
            self.params = np.zeros(self.param_count)
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (self.param_count,):
            raise ValueError(f"expected {self.param_count} parameters, got {self.params.shape}")
        if not np.all(np.isfinite(self.params)):
            raise ValueError("policy parameters must be finite")

    @property
    def feature_dim(self) -> int:
        return feature_length(self.pool)

    @property
    def in_dim(self) -> int:
        return self.feature_dim + 2  # + goal bearing, goal distance

    @property
    def out_dim(self) -> int:
        return 2 if self.shared else 2 * self.action_count

    @property
    def param_count(self) -> int:
        f, h, o = self.in_dim, self.hidden, self.out_dim
        return f * h + h + h * o + o

    def _scale(self) -> np.ndarray:
        s = np.ones(self.in_dim)
        s[self.pool * self.pool * NUM_CLASSES:] = 1.0 / FEATURE_SCALE_DISTANCE
        # Past-trajectory yaw entries and the bearing are already order one.
        base = self.pool * self.pool * NUM_CLASSES
        s[base + 2:base + 30:3] = 1.0
        s[-2] = 1.0
        return s

    def act(self, features: np.ndarray) -> np.ndarray:
        """(A, 2) action tuples within bounds; deterministic."""
        x = np.asarray(features, dtype=np.float64)
        if x.shape != (self.feature_dim,):
            raise ValueError(f"expected {self.feature_dim} features, got {x.shape}")
        x = np.concatenate([x, [math.atan2(x[-1], x[-2]), math.hypot(x[-2], x[-1])]])
        f, h, o = self.in_dim, self.hidden, self.out_dim
        p = self.params
        w1 = p[:f * h].reshape(h, f)
        b1 = p[f * h:f * h + h]
        w2 = p[f * h + h:f * h + h + h * o].reshape(o, h)
        b2 = p[f * h + h + h * o:]
        hid = np.tanh(w1 @ (x * self._scale()) / math.sqrt(f) + b1)
        y = w2 @ hid / math.sqrt(h) + b2
        if self.shared:
            y = np.concatenate([np.full(self.action_count, y[0]),
                                np.full(self.action_count, y[1])])
        steer = STEER_MAX * np.tanh(y[:self.action_count])
        accel = 1.0 / (1.0 + np.exp(-y[self.action_count:]))
        out = np.stack([steer, accel], axis=1)
        out[:, 0] = np.clip(out[:, 0], -STEER_MAX, STEER_MAX)
        out[:, 1] = np.clip(out[:, 1], 0.0, 1.0)
        return out

    def actions(self, obs: Observation, rng=None) -> np.ndarray:
        return self.act(featurize(obs, self.pool))


class RandomPolicy:
    """Uniform actions within bounds; the untrained baseline."""

    def __init__(self, action_count: int = 5):
        self.action_count = action_count

    def actions(self, obs: Observation, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        rng = rng or np.random.default_rng()
        steer = rng.uniform(-STEER_MAX, STEER_MAX, self.action_count)
        accel = rng.uniform(0.0, 1.0, self.action_count)
        return np.stack([steer, accel], axis=1)


class ScriptedGoalPolicy:
    """Steers along the goal bearing; slows to a tight arc when the goal is
    far off-axis (heading authority per rollout step is bounded, so turning
    radius shrinks only at low speed). No learning."""

    def __init__(self, action_count: int = 5):
        self.action_count = action_count

    def actions(self, obs: Observation, rng=None) -> np.ndarray:
        bearing = math.atan2(obs.s_g[1], obs.s_g[0])
        dist = float(np.hypot(*obs.s_g))
        if dist < 6.0 and abs(bearing) > 1.2:
            # Goal may sit inside the minimum turning circle; open distance
            # first, then turn.
            steer = 0.0
            accel = 0.3
        elif abs(bearing) > 0.35:
            # Spacing feeds the tracker's speed target, so a small alpha keeps
            # the vehicle slow enough to arc at full steering lock.
            steer = math.copysign(STEER_MAX, bearing)
            accel = 0.08
        else:
            steer = float(np.clip(bearing, -STEER_MAX, STEER_MAX))
            accel = float(np.clip(dist / 12.0, 0.15, 1.0))
        out = np.zeros((self.action_count, 2))
        out[:, 0] = steer
        out[:, 1] = accel
        return out


# -- evaluation -------------------------------------------------------------


@dataclass
class EvalReport:
    episodes: int
    success_rate: float
    mean_return: float
    mean_decisions_to_goal: float  # over successful episodes; nan if none
    collision_rate: float

    def __post_init__(self):
        for name in ("success_rate", "collision_rate"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {v}")


def run_episode(env: DriveEnv, policy, seed: int,
                rng: Optional[np.random.Generator] = None) -> dict:
    """One full episode; returns return/success/collision plus step records."""
    rng = rng or np.random.default_rng(seed)
    obs = env.reset(seed)
    total = 0.0
    success = False
    collided = False
    decisions = 0
    steps = []
    while not env.done:
        a = policy.actions(obs, rng)
        next_obs, rew, done, info = env.step(a)
        total += rew
        decisions += 1
        collided = collided or info["collision"]
        if info["goal_hit"]:
            success = True
        steps.append({"obs": obs, "actions": a, "reward": rew, "done": done, "info": info})
        obs = next_obs
    return {
        "return": total,
        "success": success,
        "collision": collided,
        "decisions": decisions,
        "steps": steps,
        "final_obs": obs,
    }


def evaluate(policy, env_factory: Callable[[], DriveEnv], n_episodes: int,
             seed: int = 0) -> EvalReport:
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    successes = 0
    collisions = 0
    returns = []
    to_goal = []
    for i in range(n_episodes):
        env = env_factory()
        ep_seed = seed * 100003 + i
        res = run_episode(env, policy, ep_seed,
                          np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, i, 7])))
        returns.append(res["return"])
        if res["success"]:
            successes += 1
            to_goal.append(res["decisions"])
        if res["collision"]:
            collisions += 1
    return EvalReport(
        episodes=n_episodes,
        success_rate=successes / n_episodes,
        mean_return=float(np.mean(returns)),
        mean_decisions_to_goal=float(np.mean(to_goal)) if to_goal else float("nan"),
        collision_rate=collisions / n_episodes,
    )


# -- cross-entropy-method training -------------------------------------------


@dataclass
class CEMConfig:
    population: int = 32
    elite_frac: float = 0.2
    iterations: int = 20
    init_std: float = 0.5
    min_std: float = 0.05
    episodes_per_candidate: int = 2
    parallel_envs: int = 1
    action_count: int = 5
    pool: int = 4
    hidden: int = 16
    shared: bool = False
    fixed_eval_seeds: bool = True  # common random numbers across iterations

    def __post_init__(self):
        if not (0.0 < self.elite_frac < 1.0):
            raise ValueError("elite_frac must be in (0, 1)")
        if self.population < 1 or self.iterations < 1:
            raise ValueError("population and iterations must be >= 1")
        if self.parallel_envs < 1:
            raise ValueError("parallel_envs must be >= 1")


def train_cem(env_factory: Callable[[], DriveEnv], cfg: CEMConfig,
              rng: Optional[np.random.Generator] = None,
              progress: Optional[Callable[[dict], None]] = None) -> tuple[Policy, list[dict]]:
    """Diagonal-Gaussian CEM over policy parameters.

    Surviving elites keep their cached returns (evaluation seeds are shared
    across iterations by default), so the elite-mean curve is non-decreasing.
    Returns the best-seen policy and per-iteration curve rows.
    """
    rng = rng or np.random.default_rng()
    proto = Policy(action_count=cfg.action_count, pool=cfg.pool,
                   hidden=cfg.hidden, shared=cfg.shared)
    dim = proto.param_count
    mean = np.zeros(dim)
    std = np.full(dim, cfg.init_std)
    n_elite = max(1, round(cfg.population * cfg.elite_frac))
    n_carry = min(n_elite, cfg.population - 1)

    base_seeds = [int(s) for s in rng.integers(0, 2 ** 31, cfg.episodes_per_candidate)]

    def mean_return(params: np.ndarray, seeds) -> float:
        pol = Policy(action_count=cfg.action_count, pool=cfg.pool,
                     hidden=cfg.hidden, shared=cfg.shared, params=params)
        total = 0.0
        for s in seeds:
            env = env_factory()
            total += run_episode(env, pol, s, np.random.default_rng(s))["return"]
        return total / len(seeds)

    def score_all(cands: list[np.ndarray], seeds) -> list[float]:
        # Candidate evaluations are independent; the distribution update below
        # is the single-threaded barrier.
        if cfg.parallel_envs > 1:
            with ThreadPoolExecutor(max_workers=cfg.parallel_envs) as pool:
                return list(pool.map(lambda c: mean_return(c, seeds), cands))
        return [mean_return(c, seeds) for c in cands]

    elites: list[tuple[float, np.ndarray]] = []  # (return, params), cached
    curve: list[dict] = []
    best_params = mean.copy()
    best_return = -np.inf

    for it in range(cfg.iterations):
        seeds = base_seeds if cfg.fixed_eval_seeds \
            else [int(s) for s in rng.integers(0, 2 ** 31, cfg.episodes_per_candidate)]
        carried = elites[:n_carry]
        n_fresh = cfg.population - len(carried)
        fresh = list(mean[None, :] + std[None, :] * rng.standard_normal((n_fresh, dim)))
        if cfg.fixed_eval_seeds:
            scored = list(carried)  # cached returns stay comparable
        else:
            # Fresh seeds each iteration: re-score survivors on the new
            # episodes so elitism selects on a fair comparison.
            scored = list(zip(score_all([p for _, p in carried], seeds),
                              (p for _, p in carried)))
        scored.extend(zip(score_all(fresh, seeds), fresh))
        scored.sort(key=lambda kv: kv[0], reverse=True)
        elites = scored[:n_elite]

        elite_params = np.stack([p for _, p in elites])
        mean = elite_params.mean(axis=0)
        std = np.maximum(elite_params.std(axis=0), cfg.min_std)
        if elites[0][0] > best_return:
            best_return, best_params = elites[0][0], elites[0][1].copy()
        row = {
            "iteration": it,
            "elite_mean": float(np.mean([r for r, _ in elites])),
            "population_mean": float(np.mean([r for r, _ in scored])),
            "best_return": float(best_return),
        }
        curve.append(row)
        if progress:
            progress(row)

    return Policy(action_count=cfg.action_count, pool=cfg.pool,
                  hidden=cfg.hidden, shared=cfg.shared, params=best_params), curve


def save_curve(path, curve: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["iteration", "elite_mean",
                                               "population_mean", "best_return"])
        writer.writeheader()
        writer.writerows(curve)


# -- policy checkpoints -------------------------------------------------------

_POLICY_MAGIC = b"S2SP"
_POLICY_VERSION = 1


def save_policy(path, policy: Policy) -> None:
    with open(path, "wb") as f:
        f.write(_POLICY_MAGIC)
        f.write(struct.pack("<HIIIBQ", _POLICY_VERSION, policy.action_count,
                            policy.pool, policy.hidden, int(policy.shared),
                            policy.params.size))
        f.write(policy.params.astype("<f8").tobytes())


def load_policy(path) -> Policy:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != _POLICY_MAGIC:
        raise ValueError(f"{path}: not a policy checkpoint")
    version, action_count, pool, hidden, shared, n = struct.unpack_from("<HIIIBQ", buf, 4)
    if version != _POLICY_VERSION:
        raise ValueError(f"unsupported policy checkpoint version {version}")
    params = np.frombuffer(buf, "<f8", n, 4 + struct.calcsize("<HIIIBQ")).copy()
    return Policy(action_count=action_count, pool=pool, hidden=hidden,
                  shared=bool(shared), params=params)


# -- replay integration smoke --------------------------------------------------


def replay_fill_and_sample_smoke(env: DriveEnv, buffer: ReplayBuffer, her: HERConfig,
                                 episodes: int = 5, batch_size: int = 64,
                                 seed: int = 0, pool: int = 4) -> list[Transition]:
    """Fill the buffer from random-policy episodes, then draw one HER batch.

    Exists to integration-test relabeling against live env data: relabeled
    rewards must match the env's own reward arithmetic exactly.
    """
    policy = RandomPolicy(env.config.action_count)
    rng = np.random.default_rng(seed)
    for ep in range(episodes):
        obs = env.reset(seed * 1000 + ep)
        feats = featurize(obs, pool)
        step = 0
        while not env.done:
            a = policy.actions(obs, rng)
            next_obs, rew, done, info = env.step(a)
            next_feats = featurize(next_obs, pool)
            buffer.push(transition_from_step(feats, a, rew, next_feats, obs.s_g,
                                             info, done, episode=ep, step=step))
            obs, feats = next_obs, next_feats
            step += 1
    return buffer.sample(batch_size, her, rng)
