import json
import os
import shutil

import numpy as np
import pytest
import torch
from PIL import Image

from segdrive_trainer.data import (
    NUM_CLASSES,
    OBSTACLE_IDS,
    PALETTE,
    PairedDataset,
    colorize,
    load_paired_dataset,
    nearest_class,
    obstacle_mask,
)


def test_palette_roundtrip():
    seg = np.arange(NUM_CLASSES, dtype=np.uint8).reshape(2, 3)
    rgb = colorize(seg)
    assert rgb.shape == (2, 3, 3) and rgb.dtype == np.uint8
    assert np.array_equal(nearest_class(rgb), seg)


def test_nearest_class_tolerates_perturbation():
    rng = np.random.default_rng(0)
    seg = rng.integers(0, NUM_CLASSES, (16, 16)).astype(np.uint8)
    noisy = colorize(seg).astype(np.int32) + rng.integers(-20, 21, (16, 16, 3))
    assert np.array_equal(nearest_class(noisy.clip(0, 255)), seg)


def test_obstacle_mask_ids():
    seg = np.arange(NUM_CLASSES).reshape(1, -1)
    mask = obstacle_mask(seg)
    assert mask.dtype == bool
    for c in range(NUM_CLASSES):
        assert mask[0, c] == (c in OBSTACLE_IDS)


def test_class_conventions_match_simulator():
    from segdrive.classes import OBSTACLE_CLASSES, PALETTE_ARRAY

    assert tuple(sorted(OBSTACLE_IDS)) == tuple(sorted(int(c) for c in OBSTACLE_CLASSES))
    assert np.array_equal(PALETTE, PALETTE_ARRAY)


def test_dataset_items(pairs_tiny):
    ds = PairedDataset(pairs_tiny)
    assert len(ds) == 20 and ds.skipped == 0
    assert ds.max_range == 60.0
    item = ds[0]
    assert item["x_s"].shape == (3, 32, 32) and item["x_s"].dtype == torch.float32
    assert item["x_s"].min() >= -1.0 and item["x_s"].max() <= 1.0
    assert item["x_c"].shape == (NUM_CLASSES, 32, 32)
    assert torch.all(item["x_c"].sum(dim=0) == 1.0)
    assert item["x_c"].argmax(dim=0).equal(item["seg"])
    assert item["m_d"].shape == (1, 32, 32)
    assert item["m_d"].min() >= 0.0 and item["m_d"].max() <= 1.0
    assert item["m_o"].shape == (1, 32, 32)
    mask = obstacle_mask(item["seg"].numpy())
    assert np.array_equal(item["m_o"][0].numpy().astype(bool), mask)


def test_obstacle_mask_matches_simulator_renderer(pairs_tiny):
    from segdrive.render import obstacle_mask as sim_mask

    ds = PairedDataset(pairs_tiny)
    for i in range(4):
        seg = ds[i]["seg"].numpy().astype(np.uint8)
        assert np.array_equal(obstacle_mask(seg), sim_mask(seg))


def test_depth_normalization(pairs_tiny):
    ds = PairedDataset(pairs_tiny)
    d, row = ds.items[0]
    raw = np.fromfile(os.path.join(d, f"{row['id']}_depth.f32"), dtype="<f4")
    raw = raw.reshape(32, 32)
    expect = np.clip(raw / 60.0, 0.0, 1.0)
    assert np.allclose(ds[0]["m_d"][0].numpy(), expect)


def test_groups_and_split(pairs_tiny):
    ds = PairedDataset(pairs_tiny)
    groups = ds.groups()
    assert len(groups) == 10
    assert all(len(v) == 2 for v in groups.values())
    train, hold = ds.split_by_group(0.2, seed=3)
    assert sorted(train + hold) == list(range(len(ds)))
    held_groups = {ds.items[i][1]["group"] for i in hold}
    train_groups = {ds.items[i][1]["group"] for i in train}
    assert held_groups.isdisjoint(train_groups)
    assert len(hold) == 4  # 2 of 10 groups, both views each
    # same seed reproduces the split
    assert ds.split_by_group(0.2, seed=3) == (train, hold)


def test_split_rejects_degenerate_fraction(pairs_tiny):
    ds = PairedDataset(pairs_tiny)
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            ds.split_by_group(bad)


def _copy_pairs(src, dst, ids):
    os.makedirs(dst, exist_ok=True)
    rows = [json.loads(line) for line in open(os.path.join(src, "meta.jsonl"))]
    keep = [r for r in rows if r["id"] in ids]
    with open(os.path.join(dst, "meta.jsonl"), "w") as f:
        for r in keep:
            f.write(json.dumps(r) + "\n")
    for r in keep:
        for suffix in ("_rgb.png", "_seg.png", "_depth.f32"):
            shutil.copy(os.path.join(src, r["id"] + suffix),
                        os.path.join(dst, r["id"] + suffix))
    return [r["id"] for r in keep]


def test_malformed_pairs_are_skipped(pairs_tiny, tmp_path):
    ds = PairedDataset(pairs_tiny)
    ids = [row["id"] for _, row in ds.items[:4]]
    broken = tmp_path / "broken"
    _copy_pairs(pairs_tiny, broken, set(ids))

    os.remove(broken / f"{ids[0]}_depth.f32")                      # missing file
    seg = np.asarray(Image.open(broken / f"{ids[1]}_seg.png")).copy()
    seg[0, 0] = NUM_CLASSES
    Image.fromarray(seg, mode="L").save(broken / f"{ids[1]}_seg.png")  # bad class
    np.zeros(7, dtype="<f4").tofile(broken / f"{ids[2]}_depth.f32")    # short depth

    with pytest.warns(UserWarning):
        out = PairedDataset(broken)
    assert out.skipped == 3
    assert [row["id"] for _, row in out.items] == [ids[3]]


def test_empty_dataset_raises(tmp_path):
    with pytest.raises(ValueError):
        PairedDataset(tmp_path)


def test_scan_without_meta(pairs_tiny, tmp_path):
    ds = PairedDataset(pairs_tiny)
    ids = {row["id"] for _, row in ds.items[:2]}
    bare = tmp_path / "bare"
    _copy_pairs(pairs_tiny, bare, ids)
    os.remove(bare / "meta.jsonl")
    out = PairedDataset(bare, max_range=60.0)
    assert len(out) == 2
    # the view-suffix fallback still pairs the two views of one scene
    assert len(out.groups()) == 1


def test_combined_directories(pairs_tiny, tmp_path):
    ds = PairedDataset(pairs_tiny)
    ids = {row["id"] for _, row in ds.items[:4]}
    second = tmp_path / "second"
    _copy_pairs(pairs_tiny, second, ids)
    combined = PairedDataset((pairs_tiny, str(second)))
    assert len(combined) == len(ds) + 4
    dirs = {d for d, _ in combined.items}
    assert dirs == {str(pairs_tiny), str(second)}


def test_load_paired_dataset_iterates_tuples(pairs_tiny):
    tuples = list(load_paired_dataset(pairs_tiny))
    assert len(tuples) == 20
    x_s, x_c, m_d, m_o = tuples[0]
    assert x_s.shape == (3, 32, 32) and x_c.shape == (NUM_CLASSES, 32, 32)
    assert m_d.shape == (1, 32, 32) and m_o.shape == (1, 32, 32)
