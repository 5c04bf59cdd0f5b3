"""Paired-dataset loading.

Consumes the file layout written by the simulator's pair collector: per sample
`{id}_rgb.png`, `{id}_seg.png` (grayscale class indices), `{id}_depth.f32`
(raw little-endian float32, square), indexed by a `meta.jsonl` whose `group`
field ties together appearance-randomized views of one scene. The two
packages share only these files, so the class conventions are restated here.
"""

from __future__ import annotations

import json
import math
import os
import re
import warnings
from glob import glob

import numpy as np
import torch
from PIL import Image

NUM_CLASSES = 6
# Class indices: 0 trees/bushes, 1 ground, 2 sky, 3 rocks, 4 road, 5 logs.
OBSTACLE_IDS = (0, 3, 5)
# Visualization / RGB-canonical palette, one color per class index.
PALETTE = np.array([
    (0, 200, 0),        # trees: green
    (0, 0, 255),        # ground: blue
    (0, 0, 0),          # sky: black
    (255, 0, 0),        # rocks: red
    (255, 255, 255),    # road: white
    (160, 32, 240),     # logs: purple
], dtype=np.uint8)

DEFAULT_MAX_RANGE = 60.0


def obstacle_mask(seg: np.ndarray) -> np.ndarray:
    """Boolean mask of obstacle-class pixels (trees, rocks, logs)."""
    lookup = np.zeros(NUM_CLASSES, dtype=bool)
    lookup[list(OBSTACLE_IDS)] = True
    return lookup[np.asarray(seg, dtype=np.int64)]


def colorize(seg: np.ndarray) -> np.ndarray:
    """Class-index map -> palette RGB image."""
    return PALETTE[np.asarray(seg, dtype=np.int64)]


def nearest_class(rgb: np.ndarray) -> np.ndarray:
    """RGB image -> class-index map by nearest palette color."""
    px = np.asarray(rgb, dtype=np.int32)
    d2 = ((px[..., None, :] - PALETTE[None, None, :, :].astype(np.int32)) ** 2).sum(-1)
    return d2.argmin(-1).astype(np.uint8)


def _read_max_range(directory: str) -> float | None:
    """The collector records max_range in its provenance file; depth maps are
    normalized by it, so honor it when present."""
    path = os.path.join(directory, "collect-pairs.cfg")
    if not os.path.exists(path):
        return None
    for line in open(path):
        line = line.split("#", 1)[0].strip()
        if line.startswith("max_range="):
            try:
                return float(line.split("=", 1)[1])
            except ValueError:
                return None
    return None


def _scan_ids(directory: str) -> list[dict]:
    meta_path = os.path.join(directory, "meta.jsonl")
    if os.path.exists(meta_path):
        rows = [json.loads(line) for line in open(meta_path) if line.strip()]
    else:
        rows = [{"id": os.path.basename(p)[:-len("_seg.png")]}
                for p in glob(os.path.join(directory, "*_seg.png"))]
    for row in rows:
        # without metadata, fall back to the `<base>v<k>` multi-view naming
        row.setdefault("group", re.sub(r"v\d+$", "", row["id"]))
    return sorted(rows, key=lambda r: r["id"])


class PairedDataset(torch.utils.data.Dataset):
    """All valid pairs across one or more collector output directories.

    Items are dicts of float32 tensors: `x_s` RGB in [-1, 1] (3,H,W), `x_c`
    one-hot segmentation (6,H,W), `m_d` depth normalized by max_range (1,H,W),
    `m_o` obstacle mask (1,H,W), plus `seg` int64 (H,W), `id`, and `group`.
    Malformed pairs (missing file, size mismatch, out-of-range class) are
    skipped with a warning and counted in `skipped`.
    """

    def __init__(self, directories, max_range: float | None = None):
        if isinstance(directories, (str, os.PathLike)):
            directories = [directories]
        self.directories = [str(d) for d in directories]
        if not self.directories:
            raise ValueError("need at least one dataset directory")
        if max_range is None:
            found = [r for d in self.directories if (r := _read_max_range(d)) is not None]
            max_range = found[0] if found else DEFAULT_MAX_RANGE
        self.max_range = float(max_range)
        self.items: list[tuple[str, dict]] = []
        self.skipped = 0
        for d in self.directories:
            for row in _scan_ids(d):
                err = self._validate(d, row["id"])
                if err:
                    self.skipped += 1
                    warnings.warn(f"skipping pair {row['id']}: {err}")
                else:
                    self.items.append((d, row))
        if not self.items:
            raise ValueError(f"no valid pairs under {self.directories}")

    def _validate(self, directory: str, pair_id: str) -> str | None:
        paths = [os.path.join(directory, f"{pair_id}{suffix}")
                 for suffix in ("_rgb.png", "_seg.png", "_depth.f32")]
        for p in paths:
            if not os.path.exists(p):
                return f"missing {os.path.basename(p)}"
        seg = np.asarray(Image.open(paths[1]))
        if seg.ndim != 2:
            return "segmentation file is not single-channel"
        if seg.max() >= NUM_CLASSES:
            return f"class value {int(seg.max())} out of range"
        rgb = np.asarray(Image.open(paths[0]))
        if rgb.shape[:2] != seg.shape:
            return f"rgb {rgb.shape[:2]} vs seg {seg.shape} size mismatch"
        n_depth = os.path.getsize(paths[2]) // 4
        if n_depth != seg.size:
            return f"depth has {n_depth} floats for {seg.size} pixels"
        side = int(math.isqrt(n_depth))
        if side * side != n_depth:
            return "depth file is not square"
        return None

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, index: int) -> dict:
        directory, row = self.items[index]
        pid = row["id"]
        rgb = np.asarray(Image.open(os.path.join(directory, f"{pid}_rgb.png")))
        seg = np.asarray(Image.open(os.path.join(directory, f"{pid}_seg.png")))
        depth = np.frombuffer(
            open(os.path.join(directory, f"{pid}_depth.f32"), "rb").read(),
            dtype="<f4").reshape(seg.shape)
        x_s = torch.from_numpy(rgb.astype(np.float32)).permute(2, 0, 1) / 127.5 - 1.0
        seg_t = torch.from_numpy(seg.astype(np.int64))
        x_c = torch.nn.functional.one_hot(seg_t, NUM_CLASSES).permute(2, 0, 1).float()
        m_d = torch.from_numpy(
            np.clip(depth / self.max_range, 0.0, 1.0).astype(np.float32))[None]
        m_o = torch.from_numpy(obstacle_mask(seg).astype(np.float32))[None]
        return {"x_s": x_s, "x_c": x_c, "m_d": m_d, "m_o": m_o,
                "seg": seg_t, "id": pid, "group": row["group"]}

    # -- grouping -----------------------------------------------------------

    def groups(self) -> dict:
        """group id -> list of item indices (appearance views of one scene)."""
        out: dict[str, list[int]] = {}
        for i, (_, row) in enumerate(self.items):
            out.setdefault(row["group"], []).append(i)
        return out

    def split_by_group(self, holdout_frac: float, seed: int = 0):
        """(train indices, holdout indices); views of a scene never straddle
        the split, or the holdout would leak appearance-invariant geometry."""
        if not 0.0 < holdout_frac < 1.0:
            raise ValueError("holdout_frac must be in (0, 1)")
        names = sorted(self.groups())
        rng = np.random.default_rng(seed)
        rng.shuffle(names)
        n_hold = max(1, round(len(names) * holdout_frac))
        held = set(names[:n_hold])
        groups = self.groups()
        train, hold = [], []
        for name in names:
            (hold if name in held else train).extend(groups[name])
        return sorted(train), sorted(hold)


def load_paired_dataset(directory, max_range: float | None = None):
    """Iterate (x_s, x_c, m_d, m_o) tuples in deterministic id order."""
    ds = PairedDataset(directory, max_range=max_range)
    for i in range(len(ds)):
        item = ds[i]
        yield item["x_s"], item["x_c"], item["m_d"], item["m_o"]
