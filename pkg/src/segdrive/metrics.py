"""Offline trajectory evaluation: dataset construction and the four metrics.

From logged runs we cut anchored records (observation, egocentric goal, past
trajectory, reference future path); a proposer then predicts a trajectory
per record, scored by heading error (GT), pointwise RMS distance (ATE),
heading error against the straight goal segment (GT_G), and normalized
endpoint error (L2). Lower is better on all four.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import subprocess
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .vehicle import PAST_TRAJ_LEN, egocentric_transform, get_traj, wrap_angle

RESAMPLE_POINTS = 10


@dataclass
class OfflineRecord:
    class_map: Optional[np.ndarray]   # (H, W) uint8; None for RGB-only records
    s_g: np.ndarray                   # (2,) egocentric goal = tau_star at horizon
    tau_p: np.ndarray                 # (10, 3) egocentric past trajectory
    tau_star: np.ndarray              # (M, 3) egocentric reference, starts at origin
    rgb: Optional[np.ndarray] = None  # (H, W, 3) uint8 when collected
    meta: dict = field(default_factory=dict)


@dataclass
class EpisodeTrace:
    """Raw material for offline records: one logged episode."""

    poses: np.ndarray                    # (T, 3) world poses at substep rate
    times: np.ndarray                    # (T,) seconds
    anchor_indices: Sequence[int]        # substep index of each stored observation
    class_maps: Sequence[np.ndarray]     # observation per anchor
    rgbs: Optional[Sequence[np.ndarray]] = None


def run_episode_trace(env, policy, seed: int, rng=None, keep_rgb: bool = False
                      ) -> tuple[EpisodeTrace, dict]:
    """Roll one episode and keep the odometry + per-decision observations."""
    rng = rng or np.random.default_rng(seed)
    obs = env.reset(seed)
    poses = [env.state.pose]
    times = [0.0]
    anchors = [0]
    class_maps = [obs.class_map]
    rgbs = [obs.rgb] if keep_rgb else None
    total = 0.0
    success = False
    collided = False
    decisions = 0
    while not env.done:
        actions = policy.actions(obs, rng)
        obs, rew, done, info = env.step(actions)
        total += rew
        decisions += 1
        collided = collided or info["collision"]
        success = success or info["goal_hit"]
        poses.extend(info["substep_poses"])
        times.extend(info["substep_times"])
        if not done:
            anchors.append(len(poses) - 1)
            class_maps.append(obs.class_map)
            if keep_rgb:
                rgbs.append(obs.rgb)
    trace = EpisodeTrace(
        poses=np.asarray(poses, dtype=np.float64),
        times=np.asarray(times, dtype=np.float64),
        anchor_indices=anchors,
        class_maps=class_maps,
        rgbs=rgbs,
    )
    stats = {"return": total, "success": success, "collision": collided,
             "decisions": decisions}
    return trace, stats


def build_offline_dataset(traces: Sequence[EpisodeTrace], horizon_s: float = 3.0
                          ) -> tuple[list[OfflineRecord], dict]:
    """Cut anchored records from episode traces.

    Each anchor needs 10 past poses and a full horizon of future odometry;
    the goal is the interpolated position exactly horizon_s later, and the
    reference trajectory runs from the anchor to that point. Anchors without
    enough history/future, or with degenerate (stationary) futures, are
    skipped and counted.
    """
    records: list[OfflineRecord] = []
    skipped = {"history": 0, "future": 0, "degenerate": 0}
    for trace in traces:
        poses = np.asarray(trace.poses, dtype=np.float64)
        times = np.asarray(trace.times, dtype=np.float64)
        for k, anchor in enumerate(trace.anchor_indices):
            if anchor + 1 < PAST_TRAJ_LEN:
                skipped["history"] += 1
                continue
            t0 = times[anchor]
            t_end = t0 + horizon_s
            if times[-1] < t_end - 1e-9:
                skipped["future"] += 1
                continue
            ref_pose = poses[anchor]
            past = poses[anchor - PAST_TRAJ_LEN + 1:anchor + 1]
            future_mask = (times > t0) & (times < t_end - 1e-12)
            future = poses[future_mask]
            # Interpolate the exact horizon point.
            j = int(np.searchsorted(times, t_end, side="left"))
            j = min(max(j, anchor + 1), len(times) - 1)
            if times[j] <= t_end + 1e-12 and abs(times[j] - t_end) < 1e-9:
                end_pose = poses[j]
            else:
                a, b = poses[j - 1], poses[j]
                frac = (t_end - times[j - 1]) / (times[j] - times[j - 1])
                end_pose = a + frac * (b - a)
                end_pose[2] = wrap_angle(a[2] + frac * wrap_angle(b[2] - a[2]))
            tau_star_world = np.vstack([ref_pose, future, end_pose])
            tau_star = egocentric_transform(tau_star_world, ref_pose)
            s_g = tau_star[-1, :2].copy()
            if _arc_length(tau_star) < 1e-9 or float(np.hypot(*s_g)) < 1e-9:
                skipped["degenerate"] += 1
                continue
            records.append(OfflineRecord(
                class_map=trace.class_maps[k],
                s_g=s_g,
                tau_p=egocentric_transform(past, ref_pose),
                tau_star=tau_star,
                rgb=None if trace.rgbs is None else trace.rgbs[k],
                meta={"t0": float(t0), "horizon_s": horizon_s},
            ))
    return records, skipped


def _arc_length(traj: np.ndarray) -> float:
    xy = np.asarray(traj)[:, :2]
    return float(np.sum(np.hypot(*np.diff(xy, axis=0).T)))


def resample(traj: np.ndarray, n: int = RESAMPLE_POINTS) -> np.ndarray:
    """n points evenly spaced by arc length, headings = containing segment direction."""
    if n < 2:
        raise ValueError("need n >= 2 resample points")
    pts = np.asarray(traj, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise ValueError("trajectory needs at least 2 points")
    xy = pts[:, :2]
    seg = np.diff(xy, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    keep = seg_len > 0
    if not np.any(keep):
        raise ValueError("zero-length trajectory cannot be resampled")
    # Collapse duplicate consecutive points so segment headings are defined.
    xy = np.vstack([xy[:1], xy[1:][keep]])
    seg = np.diff(xy, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    targets = np.linspace(0.0, total, n)
    idx = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, len(seg_len) - 1)
    frac = (targets - cum[idx]) / seg_len[idx]
    out = np.empty((n, 3))
    out[:, :2] = xy[idx] + frac[:, None] * seg[idx]
    out[:, 2] = np.arctan2(seg[idx, 1], seg[idx, 0])
    return out


def _heading_diffs(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ra = resample(a, RESAMPLE_POINTS)
    rb = resample(b, RESAMPLE_POINTS)
    return np.abs(wrap_angle(ra[:, 2] - rb[:, 2]))


def gt_metric(tau_ref: np.ndarray, tau: np.ndarray) -> float:
    """Mean absolute heading difference over 10 arc-length-aligned samples, in [0, pi]."""
    return float(np.mean(_heading_diffs(tau_ref, tau)))


def ate_metric(tau_ref: np.ndarray, tau: np.ndarray) -> float:
    """RMS pointwise distance over 10 aligned samples (frames already shared)."""
    ra = resample(tau_ref, RESAMPLE_POINTS)
    rb = resample(tau, RESAMPLE_POINTS)
    d = ra[:, :2] - rb[:, :2]
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


def gt_goal_metric(s_g, tau: np.ndarray) -> float:
    """GT against the straight segment from the origin to the goal."""
    s_g = np.asarray(s_g, dtype=np.float64)
    if float(np.hypot(*s_g)) < 1e-12:
        raise ValueError("goal must be nonzero")
    ref = np.array([[0.0, 0.0, 0.0], [s_g[0], s_g[1], 0.0]])
    return gt_metric(ref, tau)


def l2_metric(s_g, tau: np.ndarray) -> float:
    """Endpoint error normalized by goal distance: 1.0 means no progress."""
    s_g = np.asarray(s_g, dtype=np.float64)
    norm = float(np.hypot(*s_g))
    if norm < 1e-12:
        raise ValueError("goal must be nonzero")
    end = np.asarray(tau, dtype=np.float64)[-1, :2]
    return float(np.hypot(*(s_g - end))) / norm


METRIC_NAMES = ("gt", "ate", "gt_goal", "l2")


@dataclass
class MetricReport:
    per_record: dict        # metric name -> np.ndarray over records
    means: dict             # metric name -> float
    stds: dict              # metric name -> float
    n_records: int

    def row(self) -> dict:
        out = {"n_records": self.n_records}
        for m in METRIC_NAMES:
            out[f"{m}_mean"] = self.means[m]
            out[f"{m}_std"] = self.stds[m]
        return out


# -- trajectory proposers -----------------------------------------------------


class PolicyProposer:
    """Full inference pipeline: (translate RGB ->) featurize -> act -> unroll."""

    def __init__(self, policy, translate: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                 delta_theta: float = 0.1):
        self.policy = policy
        self.translate = translate
        self.delta_theta = delta_theta

    def propose(self, record: OfflineRecord) -> np.ndarray:
        from .env import Observation
        from .vehicle import RolloutConfig

        class_map = record.class_map
        if class_map is None:
            if self.translate is None:
                raise ValueError("record has no class map and no translator was given")
            class_map = self.translate(record.rgb)
        obs = Observation(class_map=class_map, tau_p=record.tau_p,
                          s_a=np.zeros(2), s_g=record.s_g)
        actions = self.policy.actions(obs, None)
        return get_traj(actions.shape[0] + 1, record.tau_p, actions,
                        RolloutConfig(self.delta_theta))


class RandomProposer:
    """Action-space noise unrolled the same way as a real policy."""

    def __init__(self, action_count: int = 5, seed: int = 0, delta_theta: float = 0.1):
        self.action_count = action_count
        self.rng = np.random.default_rng(seed)
        self.delta_theta = delta_theta

    def propose(self, record: OfflineRecord) -> np.ndarray:
        from .vehicle import STEER_MAX, RolloutConfig

        steer = self.rng.uniform(-STEER_MAX, STEER_MAX, self.action_count)
        accel = self.rng.uniform(0.0, 1.0, self.action_count)
        return get_traj(self.action_count + 1, record.tau_p,
                        np.stack([steer, accel], axis=1), RolloutConfig(self.delta_theta))


class ReplayOracleProposer:
    """Replays the reference trajectory itself; GT and ATE are zero by construction."""

    def propose(self, record: OfflineRecord) -> np.ndarray:
        return record.tau_star.copy()


def evaluate_offline(proposer, dataset: Sequence[OfflineRecord]) -> MetricReport:
    if not dataset:
        raise ValueError("offline dataset is empty")
    vals = {m: [] for m in METRIC_NAMES}
    for rec in dataset:
        tau = proposer.propose(rec)
        vals["gt"].append(gt_metric(rec.tau_star, tau))
        vals["ate"].append(ate_metric(rec.tau_star, tau))
        vals["gt_goal"].append(gt_goal_metric(rec.s_g, tau))
        vals["l2"].append(l2_metric(rec.s_g, tau))
    per = {m: np.asarray(v) for m, v in vals.items()}
    return MetricReport(
        per_record=per,
        means={m: float(v.mean()) for m, v in per.items()},
        stds={m: float(v.std()) for m, v in per.items()},
        n_records=len(dataset),
    )


# -- report output ------------------------------------------------------------


def write_report_csv(path, rows: list[dict]) -> None:
    """One row per (method, dataset): metric means and stds in Table-1 shape."""
    fields = ["method", "dataset", "n_records"]
    for m in METRIC_NAMES:
        fields += [f"{m}_mean", f"{m}_std"]
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in fields})


def format_report_table(rows: list[dict]) -> str:
    header = f"{'method':<16} {'dataset':<12}" + "".join(f" {m.upper():>14}" for m in METRIC_NAMES)
    lines = [header, "-" * len(header)]
    for row in rows:
        cells = "".join(
            f" {row[f'{m}_mean']:>7.3f}±{row[f'{m}_std']:<6.3f}" for m in METRIC_NAMES)
        lines.append(f"{row.get('method', ''):<16} {row.get('dataset', ''):<12}" + cells)
    return "\n".join(lines)


# -- offline dataset files ------------------------------------------------------


def save_offline_dataset(directory, records: Sequence[OfflineRecord]) -> None:
    """JSONL index plus image sidecars in the paired-dataset formats."""
    from PIL import Image

    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "records.jsonl"), "w") as f:
        for i, rec in enumerate(records):
            rid = f"{i:06d}"
            entry = {
                "id": rid,
                "s_g": rec.s_g.tolist(),
                "tau_p": rec.tau_p.tolist(),
                "tau_star": rec.tau_star.tolist(),
                "meta": rec.meta,
                "has_class_map": rec.class_map is not None,
                "has_rgb": rec.rgb is not None,
            }
            if rec.class_map is not None:
                Image.fromarray(rec.class_map, mode="L").save(
                    os.path.join(directory, f"{rid}_seg.png"))
            if rec.rgb is not None:
                Image.fromarray(rec.rgb).save(os.path.join(directory, f"{rid}_rgb.png"))
            f.write(json.dumps(entry) + "\n")


def load_offline_dataset(directory) -> list[OfflineRecord]:
    from PIL import Image

    records = []
    with open(os.path.join(directory, "records.jsonl")) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            entry = json.loads(line)
            rid = entry["id"]
            class_map = None
            rgb = None
            if entry.get("has_class_map"):
                class_map = np.asarray(Image.open(os.path.join(directory, f"{rid}_seg.png")))
            if entry.get("has_rgb"):
                rgb = np.asarray(Image.open(os.path.join(directory, f"{rid}_rgb.png")))
            records.append(OfflineRecord(
                class_map=class_map,
                s_g=np.asarray(entry["s_g"], dtype=np.float64),
                tau_p=np.asarray(entry["tau_p"], dtype=np.float64),
                tau_star=np.asarray(entry["tau_star"], dtype=np.float64),
                rgb=rgb,
                meta=entry.get("meta", {}),
            ))
    return records


class SubprocessTranslator:
    """RGB -> class map through an external translator process.

    Protocol: one PNG path per line on its stdin; it answers with one
    class-map PNG path per line on its stdout.
    """

    def __init__(self, command: list[str], workdir: Optional[str] = None):
        self.command = command
        self.workdir = workdir or "."
        self._proc: Optional[subprocess.Popen] = None
        self._count = 0

    def _ensure(self):
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True)

    def __call__(self, rgb: np.ndarray) -> np.ndarray:
        from PIL import Image

        self._ensure()
        path = os.path.join(self.workdir, f"translate_in_{self._count:06d}.png")
        self._count += 1
        Image.fromarray(rgb).save(path)
        self._proc.stdin.write(path + "\n")
        self._proc.stdin.flush()
        out_path = self._proc.stdout.readline().strip()
        if not out_path:
            raise RuntimeError("translator produced no output path")
        return np.asarray(Image.open(out_path))

    def close(self):
        if self._proc is not None and self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.wait(timeout=10)
