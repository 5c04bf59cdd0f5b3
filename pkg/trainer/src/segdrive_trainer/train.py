"""The training loop and its configuration."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from itertools import chain, combinations

import numpy as np
import torch
from torch.utils.data import DataLoader, Subset

from .data import PairedDataset, colorize, nearest_class
from .losses import (
    loss_eq,
    loss_gan_feature_pair,
    loss_gan_gumbel_gp,
    loss_gan_rgb,
    loss_gan_soft_argmax,
    masked_depth_l1,
    pixel_accuracy,
)
from .models import GeneratorSpec, PairFeaturizer, PatchDiscriminator, UNetGenerator
from .schedule import DiscriminatorSchedule
from .translate import save_checkpoint, translate

DISC_MODES = ("feature-pair", "gumbel-gp", "soft-argmax")
CANONICAL_MODES = ("segmentation", "rgb")


@dataclass
class TrainConfig:
    data_dirs: tuple
    out_dir: str
    epochs: int = 20
    batch_size: int = 8
    image_size: int = 64
    base_channels: int = 32
    depth: bool = True                 # auxiliary depth channel on the generator
    disc_mode: str = "feature-pair"
    canonical: str = "segmentation"    # "rgb" trains a palette-image translator
    lambda_x: float = 1.0
    lambda_d: float = 10.0
    lambda_gan: float = 1.0
    lr_g: float = 2e-4                 # generator optimizer: Adam(0.5, 0.999)
    lr_d: float = 5e-5
    betas: tuple = (0.5, 0.999)
    disc_period: int = 8
    disc_skip_threshold: float = 0.3
    holdout_frac: float = 0.1
    seed: int = 0
    max_range: float | None = None
    extra_provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.data_dirs, (str, os.PathLike)):
            self.data_dirs = (str(self.data_dirs),)
        self.data_dirs = tuple(str(d) for d in self.data_dirs)
        if not self.data_dirs:
            raise ValueError("need at least one dataset directory")
        if self.lambda_x < 0 or self.lambda_d < 0 or self.lambda_gan < 0:
            raise ValueError("loss weights must be >= 0")
        if self.disc_mode not in DISC_MODES:
            raise ValueError(f"disc_mode must be one of {DISC_MODES}")
        if self.canonical not in CANONICAL_MODES:
            raise ValueError(f"canonical must be one of {CANONICAL_MODES}")
        if self.canonical == "rgb" and self.disc_mode != "feature-pair":
            raise ValueError("rgb-canonical training uses its own raw-pair "
                             "discriminator; leave disc_mode at the default")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


def _build_adversary(cfg: TrainConfig):
    """(discriminator, featurizer or None, d-parameters) for the configured mode."""
    if cfg.canonical == "rgb":
        disc = PatchDiscriminator(6)
        return disc, None, disc.parameters()
    if cfg.disc_mode == "feature-pair":
        f = PairFeaturizer(3, 6)
        disc = PatchDiscriminator(f.out_channels)
        return disc, f, chain(disc.parameters(), f.parameters())
    if cfg.disc_mode == "gumbel-gp":
        disc = PatchDiscriminator(9, norm="instance")
        return disc, None, disc.parameters()
    disc = PatchDiscriminator(4)  # soft-argmax: rgb + expected-class map
    return disc, None, disc.parameters()


def _adv_terms(cfg: TrainConfig, disc, featurizer, batch, fake_main, fake_logits):
    if cfg.canonical == "rgb":
        target = batch["target_rgb"]
        return loss_gan_rgb(disc, batch["x_s"], target, fake_main)
    if cfg.disc_mode == "feature-pair":
        probs = torch.softmax(fake_logits, dim=1)
        return loss_gan_feature_pair(disc, featurizer, batch["x_s"], batch["x_c"], probs)
    if cfg.disc_mode == "gumbel-gp":
        return loss_gan_gumbel_gp(disc, batch["x_s"], batch["x_c"], fake_logits)
    return loss_gan_soft_argmax(disc, batch["x_s"], batch["seg"], fake_logits)


def _recon_terms(cfg: TrainConfig, batch, main, depth):
    if cfg.canonical == "segmentation":
        return loss_eq(main, depth, batch["x_c"], batch["m_d"], batch["m_o"],
                       cfg.lambda_x, cfg.lambda_d)
    l1 = (main - batch["target_rgb"]).abs().mean()
    if depth is not None and cfg.lambda_d > 0:
        depth_l1 = (batch["m_o"] * depth - batch["m_o"] * batch["m_d"]).abs().mean()
    else:
        depth_l1 = torch.zeros((), dtype=main.dtype)
    total = cfg.lambda_x * l1 + cfg.lambda_d * depth_l1
    return total, {"ce": float(l1.detach()), "depth_l1": float(depth_l1.detach())}


def _with_rgb_target(batch):
    canon = colorize(batch["seg"].numpy())
    batch["target_rgb"] = torch.from_numpy(
        canon.astype(np.float32)).permute(0, 3, 1, 2) / 127.5 - 1.0
    return batch


def evaluate_holdout(model, dataset, indices):
    """Mean held-out pixel accuracy and obstacle-masked depth L1."""
    accs, depths = [], []
    model.eval()
    with torch.no_grad():
        for i in indices:
            item = dataset[i]
            main, depth = model(item["x_s"][None])
            if model.spec.mode == "rgb":
                canon = ((main[0].permute(1, 2, 0).numpy() + 1) * 127.5).clip(0, 255)
                acc = float((nearest_class(canon.astype(np.uint8))
                             == item["seg"].numpy()).mean())
            else:
                acc = pixel_accuracy(main, item["seg"][None])
            accs.append(acc)
            if depth is not None:
                depths.append(masked_depth_l1(depth, item["m_d"][None], item["m_o"][None]))
    model.train()
    return float(np.mean(accs)), float(np.mean(depths)) if depths else float("nan")


def randomization_agreement(model, dataset, indices, max_range) -> float:
    """Mean pairwise pixel agreement of translated class maps across
    appearance-randomized views of the same scene. nan when the index set
    contains no multi-view groups."""
    by_group: dict[str, list[int]] = {}
    for i in indices:
        by_group.setdefault(dataset.items[i][1]["group"], []).append(i)
    scores = []
    for members in by_group.values():
        if len(members) < 2:
            continue
        maps = []
        for i in members:
            item = dataset[i]
            rgb = ((item["x_s"].permute(1, 2, 0).numpy() + 1) * 127.5).clip(0, 255)
            class_map, _ = translate(model, rgb.astype(np.uint8), max_range)
            maps.append(class_map)
        for a, b in combinations(maps, 2):
            scores.append(float((a == b).mean()))
    return float(np.mean(scores)) if scores else float("nan")


CURVE_FIELDS = ["epoch", "recon", "ce", "depth_l1", "g_adv", "d_loss",
                "d_updates", "d_skips", "holdout_acc", "holdout_depth_l1"]


def train(cfg: TrainConfig):
    """Full training run; writes checkpoint.s2st, curves.csv, and train.cfg
    under cfg.out_dir and returns (checkpoint path, curve rows)."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    if os.environ.get("S2S_THREADS"):
        torch.set_num_threads(max(1, int(os.environ["S2S_THREADS"])))
    torch.manual_seed(cfg.seed)

    dataset = PairedDataset(cfg.data_dirs, max_range=cfg.max_range)
    train_idx, hold_idx = dataset.split_by_group(cfg.holdout_frac, cfg.seed)
    loader = DataLoader(Subset(dataset, train_idx), batch_size=cfg.batch_size,
                        shuffle=True, num_workers=0,
                        generator=torch.Generator().manual_seed(cfg.seed))

    spec = GeneratorSpec(image_size=cfg.image_size, depth_head=cfg.depth,
                         mode=cfg.canonical if cfg.canonical == "rgb" else "segmentation",
                         base_channels=cfg.base_channels)
    model = UNetGenerator(spec)
    disc, featurizer, d_params = _build_adversary(cfg)
    opt_g = torch.optim.Adam(model.parameters(), lr=cfg.lr_g, betas=cfg.betas)
    opt_d = torch.optim.Adam(list(d_params), lr=cfg.lr_d, betas=cfg.betas)
    schedule = DiscriminatorSchedule(cfg.disc_period, cfg.disc_skip_threshold)

    curves = []
    g_step = 0
    for epoch in range(1, cfg.epochs + 1):
        sums = {"recon": 0.0, "ce": 0.0, "depth_l1": 0.0, "g_adv": 0.0, "d_loss": 0.0}
        n_batches = 0
        for batch in loader:
            if cfg.canonical == "rgb":
                batch = _with_rgb_target(batch)
            main, depth = model(batch["x_s"])
            logits = main if spec.mode == "segmentation" else None
            recon, parts = _recon_terms(cfg, batch, main, depth)
            if cfg.lambda_gan > 0:
                g_adv, d_loss = _adv_terms(cfg, disc, featurizer, batch, main, logits)
            else:
                g_adv = torch.zeros(())
                d_loss = torch.zeros(())
            total = recon + cfg.lambda_gan * g_adv
            opt_g.zero_grad(set_to_none=True)
            total.backward()
            opt_g.step()
            g_step += 1
            if cfg.lambda_gan > 0 and schedule.should_update(g_step, float(d_loss.detach())):
                opt_d.zero_grad(set_to_none=True)
                d_loss.backward()
                opt_d.step()
            sums["recon"] += float(recon.detach())
            sums["ce"] += parts["ce"]
            sums["depth_l1"] += parts["depth_l1"]
            sums["g_adv"] += float(g_adv.detach())
            sums["d_loss"] += float(d_loss.detach())
            n_batches += 1
        acc, depth_l1 = evaluate_holdout(model, dataset, hold_idx)
        row = {"epoch": epoch, **{k: v / max(1, n_batches) for k, v in sums.items()},
               "d_updates": schedule.updates, "d_skips": schedule.skips,
               "holdout_acc": acc, "holdout_depth_l1": depth_l1}
        curves.append(row)

    ckpt_path = os.path.join(cfg.out_dir, "checkpoint.s2st")
    save_checkpoint(ckpt_path, model, max_range=dataset.max_range,
                    provenance={
                        "data_dirs": list(cfg.data_dirs), "epochs": cfg.epochs,
                        "batch_size": cfg.batch_size, "seed": cfg.seed,
                        "disc_mode": cfg.disc_mode, "canonical": cfg.canonical,
                        "lambda_x": cfg.lambda_x, "lambda_d": cfg.lambda_d,
                        "lambda_gan": cfg.lambda_gan, "lr_g": cfg.lr_g,
                        "lr_d": cfg.lr_d, "depth": cfg.depth,
                        **cfg.extra_provenance,
                    })
    with open(os.path.join(cfg.out_dir, "curves.csv"), "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CURVE_FIELDS)
        writer.writeheader()
        writer.writerows(curves)
    with open(os.path.join(cfg.out_dir, "train.cfg"), "w") as f:
        for key in sorted(vars(cfg)):
            if key != "extra_provenance":
                f.write(f"{key}={getattr(cfg, key)}\n")
    return ckpt_path, curves
