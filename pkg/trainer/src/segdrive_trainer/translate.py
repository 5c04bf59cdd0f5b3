"""Checkpointing, inference, and the path-stream subprocess mode."""

from __future__ import annotations

import os
import sys

import numpy as np
import torch
from PIL import Image

from .data import DEFAULT_MAX_RANGE, PALETTE, nearest_class
from .models import GeneratorSpec, UNetGenerator

CHECKPOINT_FORMAT = "s2st"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, model: UNetGenerator, max_range: float = DEFAULT_MAX_RANGE,
                    provenance: dict | None = None) -> None:
    torch.save({
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": model.spec.to_dict(),
        "state_dict": model.state_dict(),
        "palette": PALETTE.tolist(),
        "norm": {"rgb_offset": 127.5, "rgb_scale": 127.5, "max_range": float(max_range)},
        "provenance": dict(provenance or {}),
    }, path)


def load_checkpoint(path) -> tuple[UNetGenerator, dict]:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(blob, dict) or blob.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a translator checkpoint")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob.get('version')}")
    model = UNetGenerator(GeneratorSpec(**blob["spec"]))
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model, blob


def translate(model: UNetGenerator, rgb: np.ndarray,
              max_range: float = DEFAULT_MAX_RANGE):
    """RGB uint8 (H, W, 3) -> (class map uint8 (H, W), depth in meters or None).

    Inputs at a different resolution are resized to the model's trained size
    for inference and the class map is resized back (nearest neighbor).
    """
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) RGB input, got {rgb.shape}")
    in_hw = rgb.shape[:2]
    size = model.spec.image_size
    if in_hw != (size, size):
        rgb = np.asarray(Image.fromarray(rgb).resize((size, size), Image.BILINEAR))
    x = torch.from_numpy(rgb.astype(np.float32)).permute(2, 0, 1)[None] / 127.5 - 1.0
    was_training = model.training
    model.eval()
    with torch.no_grad():
        main, depth = model(x)
    if was_training:
        model.train()
    if model.spec.mode == "segmentation":
        class_map = main[0].argmax(dim=0).numpy().astype(np.uint8)
    else:
        canon = ((main[0].permute(1, 2, 0).numpy() + 1.0) * 127.5).clip(0, 255)
        class_map = nearest_class(canon.astype(np.uint8))
    depth_m = None
    if depth is not None:
        depth_m = (depth[0, 0].numpy() * max_range).astype(np.float32)
    if in_hw != (size, size):
        class_map = np.asarray(
            Image.fromarray(class_map, mode="L").resize(in_hw[::-1], Image.NEAREST))
    return class_map, depth_m


def run_stream(checkpoint_path, out_dir=None) -> int:
    """Read one input PNG path per stdin line; write the translated class map
    next to it (or into out_dir) as `<stem>_seg.png`; answer with the output
    path on stdout. Exits on EOF. Any failure is fatal: the caller counts on
    exactly one response line per request."""
    model, blob = load_checkpoint(checkpoint_path)
    max_range = blob["norm"]["max_range"]
    n = 0
    for line in sys.stdin:
        path = line.strip()
        if not path:
            continue
        rgb = np.asarray(Image.open(path).convert("RGB"))
        class_map, _ = translate(model, rgb, max_range=max_range)
        stem = os.path.splitext(os.path.basename(path))[0]
        target_dir = out_dir or os.path.dirname(path) or "."
        out_path = os.path.join(target_dir, f"{stem}_seg.png")
        Image.fromarray(class_map, mode="L").save(out_path)
        print(out_path, flush=True)
        n += 1
    return n
