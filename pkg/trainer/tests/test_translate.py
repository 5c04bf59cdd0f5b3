import subprocess
import sys

import numpy as np
import pytest
import torch
from PIL import Image

from segdrive_trainer.data import NUM_CLASSES, colorize
from segdrive_trainer.models import GeneratorSpec, UNetGenerator
from segdrive_trainer.translate import load_checkpoint, save_checkpoint, translate


def _small_model(**kw):
    spec = GeneratorSpec(image_size=32, base_channels=8, **kw)
    torch.manual_seed(0)
    return UNetGenerator(spec)


def test_checkpoint_roundtrip(tmp_path):
    model = _small_model()
    path = tmp_path / "model.s2st"
    save_checkpoint(path, model, max_range=42.0, provenance={"note": "unit"})
    loaded, blob = load_checkpoint(path)
    assert loaded.spec == model.spec
    assert not loaded.training
    assert blob["norm"]["max_range"] == 42.0
    assert blob["provenance"]["note"] == "unit"
    for key, value in model.state_dict().items():
        assert torch.equal(blob["state_dict"][key], value)
    rgb = np.random.default_rng(0).integers(0, 256, (32, 32, 3), dtype=np.uint8)
    a, _ = translate(model, rgb)
    b, _ = translate(loaded, rgb)
    assert np.array_equal(a, b)


def test_checkpoint_rejects_foreign_files(tmp_path):
    path = tmp_path / "other.pt"
    torch.save({"weights": torch.zeros(3)}, path)
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_translate_shapes_and_dtypes():
    model = _small_model()
    rgb = np.zeros((32, 32, 3), dtype=np.uint8)
    class_map, depth = translate(model, rgb, max_range=60.0)
    assert class_map.shape == (32, 32) and class_map.dtype == np.uint8
    assert class_map.max() < NUM_CLASSES
    assert depth.shape == (32, 32) and depth.dtype == np.float32
    assert depth.min() >= 0.0 and depth.max() <= 60.0


def test_translate_resizes_foreign_resolutions():
    model = _small_model()
    rgb = np.random.default_rng(1).integers(0, 256, (128, 96, 3), dtype=np.uint8)
    class_map, _ = translate(model, rgb)
    assert class_map.shape == (128, 96)
    with pytest.raises(ValueError):
        translate(model, np.zeros((32, 32), dtype=np.uint8))


def test_translate_without_depth_head():
    model = _small_model(depth_head=False)
    _, depth = translate(model, np.zeros((32, 32, 3), dtype=np.uint8))
    assert depth is None


def test_translate_restores_training_mode():
    model = _small_model()
    model.train()
    translate(model, np.zeros((32, 32, 3), dtype=np.uint8))
    assert model.training


def test_rgb_mode_translate_maps_to_palette_classes():
    model = _small_model(mode="rgb", depth_head=False)
    rgb = np.random.default_rng(2).integers(0, 256, (32, 32, 3), dtype=np.uint8)
    class_map, _ = translate(model, rgb)
    assert class_map.dtype == np.uint8 and class_map.max() < NUM_CLASSES


def test_stream_subprocess_answers_one_line_per_path(tmp_path):
    model = _small_model()
    ckpt = tmp_path / "model.s2st"
    save_checkpoint(ckpt, model, max_range=60.0)
    rng = np.random.default_rng(3)
    inputs = []
    for i in range(3):
        p = tmp_path / f"frame{i}.png"
        Image.fromarray(rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)).save(p)
        inputs.append(p)

    proc = subprocess.Popen(
        [sys.executable, "-m", "segdrive_trainer.cli", "translate-stream",
         "--checkpoint", str(ckpt)],
        stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True)
    try:
        answers = []
        for p in inputs:
            proc.stdin.write(f"{p}\n")
            proc.stdin.flush()
            answers.append(proc.stdout.readline().strip())
        assert proc.poll() is None  # serves requests without exiting
        proc.stdin.close()
        assert proc.wait(timeout=30) == 0
    finally:
        proc.kill()

    for p, answer in zip(inputs, answers):
        assert answer == str(tmp_path / f"{p.stem}_seg.png")
        seg = np.asarray(Image.open(answer))
        assert seg.shape == (32, 32) and seg.dtype == np.uint8
        assert seg.max() < NUM_CLASSES
        # deterministic: matches in-process translation of the same frame
        expect, _ = translate(model, np.asarray(Image.open(p).convert("RGB")), 60.0)
        assert np.array_equal(seg, expect)


def test_stream_outputs_to_directory(tmp_path):
    model = _small_model()
    ckpt = tmp_path / "model.s2st"
    save_checkpoint(ckpt, model)
    frame = tmp_path / "a.png"
    Image.fromarray(colorize(np.zeros((32, 32), dtype=np.uint8))).save(frame)
    out_dir = tmp_path / "maps"
    result = subprocess.run(
        [sys.executable, "-m", "segdrive_trainer.cli", "translate-stream",
         "--checkpoint", str(ckpt), "--out", str(out_dir)],
        input=f"{frame}\n", capture_output=True, text=True)
    assert result.returncode == 0
    assert result.stdout.strip() == str(out_dir / "a_seg.png")
    assert (out_dir / "a_seg.png").exists()
