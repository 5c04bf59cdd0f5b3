"""Transition storage with hindsight goal relabeling.

Each transition keeps its unweighted reward components and its world-frame
anchor pose, so relabeling a goal only swaps the sparse goal term —
recomputed exactly, never re-simulated — and leaves every other component
bit-identical.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .env import GOAL_BONUS, RewardWeights
from .vehicle import egocentric_transform


@dataclass
class HERConfig:
    relabel_ratio: float = 0.8
    strategy: str = "future"  # goal <- achieved state of a strictly later step

    def __post_init__(self):
        if not 0.0 <= self.relabel_ratio <= 1.0:
            raise ValueError(f"relabel_ratio must be in [0, 1], got {self.relabel_ratio}")
        if self.strategy != "future":
            raise ValueError(f"unsupported strategy {self.strategy!r}")


@dataclass
class Transition:
    features: np.ndarray
    action: np.ndarray
    reward: float
    next_features: np.ndarray
    goal: np.ndarray           # (2,) egocentric, in the decision-start frame
    achieved: np.ndarray       # (2,) egocentric end-of-decision position, same frame
    done: bool
    episode: int
    step: int
    goal_hit: bool
    components: dict = field(default_factory=dict)  # unweighted r_g, r_u, r_s, r_c
    reference_pose: np.ndarray = None   # (3,) world pose at decision start
    achieved_world: np.ndarray = None   # (2,) world end-of-decision position
    relabeled: bool = False


class ReplayBuffer:
    """FIFO transition store with future-strategy hindsight relabeling."""

    def __init__(self, capacity: int, weights: Optional[RewardWeights] = None,
                 goal_radius: float = 2.0):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.weights = weights or RewardWeights()
        self.goal_radius = goal_radius
        self._data: list[Transition] = []
        self._episodes: "OrderedDict[int, list[Transition]]" = OrderedDict()

    def __len__(self) -> int:
        return len(self._data)

    def push(self, tr: Transition) -> None:
        ep = self._episodes.setdefault(tr.episode, [])
        if ep and tr.step <= ep[-1].step:
            raise ValueError(f"non-increasing step {tr.step} for episode {tr.episode}")
        if len(self._data) >= self.capacity:
            evicted = self._data.pop(0)
            ev_list = self._episodes[evicted.episode]
            ev_list.pop(0)  # pushes are chronological, so the oldest is at the front
            if not ev_list:
                del self._episodes[evicted.episode]
        self._data.append(tr)
        ep.append(tr)

    # -- relabeling --------------------------------------------------------

    def _recompute(self, tr: Transition, new_goal: np.ndarray) -> Transition:
        w = self.weights
        r_g_new = GOAL_BONUS if float(np.hypot(*(new_goal - tr.achieved))) < self.goal_radius else -1.0
        comps = dict(tr.components)
        r_g_old = comps["r_g"]
        comps["r_g"] = r_g_new
        new_reward = tr.reward + w.goal * (r_g_new - r_g_old)
        non_goal_done = tr.done and not tr.goal_hit
        hit = r_g_new == GOAL_BONUS
        return replace(tr, goal=np.asarray(new_goal, dtype=np.float64),
                       reward=new_reward, done=non_goal_done or hit,
                       goal_hit=hit, components=comps, relabeled=True)

    def relabel(self, tr: Transition, future_achieved) -> Transition:
        """Relabel tr's goal with an achieved state from later in its episode.

        `future_achieved` may be a Transition (checked for same-episode,
        strictly-later provenance) or a raw egocentric (x, y) goal already in
        tr's frame.
        """
        if isinstance(future_achieved, Transition):
            if future_achieved.episode != tr.episode:
                raise ValueError("relabel source must come from the same episode")
            if future_achieved.step <= tr.step:
                raise ValueError("relabel source must be a strictly later step")
            new_goal = egocentric_transform(
                np.append(future_achieved.achieved_world, 0.0), tr.reference_pose)[:2]
        else:
            new_goal = np.asarray(future_achieved, dtype=np.float64)
        return self._recompute(tr, new_goal)

    # -- sampling ----------------------------------------------------------

    def sample(self, batch_size: int, her: Optional[HERConfig] = None,
               rng: Optional[np.random.Generator] = None) -> list[Transition]:
        if not self._data:
            raise ValueError("cannot sample from an empty buffer")
        her = her or HERConfig()
        rng = rng or np.random.default_rng()
        idx = rng.integers(0, len(self._data), size=batch_size)
        batch = []
        for i in idx:
            tr = self._data[int(i)]
            if her.relabel_ratio > 0 and rng.random() < her.relabel_ratio:
                episode = self._episodes.get(tr.episode, [])
                # Strictly later steps only; entries are step-sorted.
                lo = _first_later(episode, tr.step)
                if lo < len(episode):
                    src = episode[int(rng.integers(lo, len(episode)))]
                    tr = self.relabel(tr, src)
            batch.append(tr)
        return batch

    # -- persistence ---------------------------------------------------------

    _MAGIC = b"S2SB"
    _VERSION = 1

    def save(self, path) -> None:
        w = self.weights
        with open(path, "wb") as f:
            f.write(self._MAGIC)
            f.write(struct.pack("<HQd", self._VERSION, self.capacity, self.goal_radius))
            f.write(struct.pack("<dddd", w.goal, w.upright, w.steer, w.collision))
            f.write(struct.pack("<Q", len(self._data)))
            for tr in self._data:
                feat = np.asarray(tr.features, dtype="<f8")
                nxt = np.asarray(tr.next_features, dtype="<f8")
                act = np.asarray(tr.action, dtype="<f8").reshape(-1, 2)
                f.write(struct.pack("<qqBBQQ", tr.episode, tr.step,
                                    int(tr.done), int(tr.goal_hit),
                                    feat.size, act.shape[0]))
                f.write(struct.pack("<d", tr.reward))
                f.write(struct.pack("<dddd", tr.components["r_g"], tr.components["r_u"],
                                    tr.components["r_s"], tr.components["r_c"]))
                for arr in (tr.goal, tr.achieved, tr.reference_pose, tr.achieved_world):
                    f.write(np.asarray(arr, dtype="<f8").tobytes())
                f.write(feat.tobytes())
                f.write(nxt.tobytes())
                f.write(act.tobytes())

    @classmethod
    def load(cls, path) -> "ReplayBuffer":
        with open(path, "rb") as f:
            buf = f.read()
        if buf[:4] != cls._MAGIC:
            raise ValueError(f"{path}: not a replay buffer file")
        off = 4
        version, capacity, goal_radius = struct.unpack_from("<HQd", buf, off)
        off += 18
        if version != cls._VERSION:
            raise ValueError(f"unsupported buffer version {version}")
        wg, wu, ws, wc = struct.unpack_from("<dddd", buf, off)
        off += 32
        out = cls(capacity, RewardWeights(wg, wu, ws, wc), goal_radius)
        (count,) = struct.unpack_from("<Q", buf, off)
        off += 8
        for _ in range(count):
            episode, step, done, goal_hit, feat_n, act_n = struct.unpack_from("<qqBBQQ", buf, off)
            off += 34
            (rew,) = struct.unpack_from("<d", buf, off)
            off += 8
            r_g, r_u, r_s, r_c = struct.unpack_from("<dddd", buf, off)
            off += 32
            goal = np.frombuffer(buf, "<f8", 2, off).copy(); off += 16
            achieved = np.frombuffer(buf, "<f8", 2, off).copy(); off += 16
            ref = np.frombuffer(buf, "<f8", 3, off).copy(); off += 24
            ach_w = np.frombuffer(buf, "<f8", 2, off).copy(); off += 16
            feat = np.frombuffer(buf, "<f8", feat_n, off).copy(); off += 8 * feat_n
            nxt = np.frombuffer(buf, "<f8", feat_n, off).copy(); off += 8 * feat_n
            act = np.frombuffer(buf, "<f8", act_n * 2, off).reshape(act_n, 2).copy()
            off += 16 * act_n
            out.push(Transition(
                features=feat, action=act, reward=rew, next_features=nxt,
                goal=goal, achieved=achieved, done=bool(done), episode=episode,
                step=step, goal_hit=bool(goal_hit),
                components={"r_g": r_g, "r_u": r_u, "r_s": r_s, "r_c": r_c},
                reference_pose=ref, achieved_world=ach_w))
        return out


def _first_later(episode: list[Transition], step: int) -> int:
    """Index of the first entry with step > given, in a step-sorted list."""
    lo, hi = 0, len(episode)
    while lo < hi:
        mid = (lo + hi) // 2
        if episode[mid].step <= step:
            lo = mid + 1
        else:
            hi = mid
    return lo


def transition_from_step(features, actions, reward_total, next_features, obs_goal,
                         info: dict, done: bool, episode: int, step: int) -> Transition:
    """Assemble a Transition from one env.step() result."""
    ref = np.asarray(info["reference_pose"], dtype=np.float64)
    achieved_world = np.asarray(info["achieved_world"], dtype=np.float64)
    achieved_ego = egocentric_transform(np.append(achieved_world, 0.0), ref)[:2]
    return Transition(
        features=np.asarray(features, dtype=np.float64),
        action=np.asarray(actions, dtype=np.float64).reshape(-1, 2),
        reward=float(reward_total),
        next_features=np.asarray(next_features, dtype=np.float64),
        goal=np.asarray(obs_goal, dtype=np.float64),
        achieved=achieved_ego,
        done=done,
        episode=episode,
        step=step,
        goal_hit=bool(info["goal_hit"]),
        components=dict(info["components"]),
        reference_pose=ref,
        achieved_world=achieved_world,
    )
