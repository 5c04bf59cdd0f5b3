"""Generator, pair featurizer, and patch discriminator."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn

from .data import NUM_CLASSES

# Encoder widths of the full-resolution (256 px) reference schedule.
FULL_RES_256_CHANNELS = (64, 128, 256, 512, 512, 512, 512, 512)


@dataclass
class GeneratorSpec:
    """Shape of the U-Net translator.

    `mode` picks the output head: "segmentation" emits class logits (plus an
    optional normalized-depth channel), "rgb" emits a palette-colored canonical
    image via tanh. `channels` is the per-level encoder width; left unset it is
    derived from image_size (halving down to a 4x4 bottleneck, width doubling
    from base_channels and capped at 8x).
    """

    image_size: int = 64
    in_channels: int = 3
    num_classes: int = NUM_CLASSES
    depth_head: bool = True
    mode: str = "segmentation"
    base_channels: int = 32
    channels: tuple = field(default=None)

    def __post_init__(self):
        if self.mode not in ("segmentation", "rgb"):
            raise ValueError(f"unknown generator mode {self.mode!r}")
        if self.image_size < 8 or self.image_size & (self.image_size - 1):
            raise ValueError("image_size must be a power of two >= 8")
        if self.channels is None:
            levels = int(math.log2(self.image_size)) - 2
            self.channels = tuple(min(self.base_channels * 2 ** i,
                                      self.base_channels * 8) for i in range(levels))
        else:
            self.channels = tuple(self.channels)

    @classmethod
    def full_res_preset(cls, **overrides) -> "GeneratorSpec":
        kw = dict(image_size=256, base_channels=64, channels=FULL_RES_256_CHANNELS)
        kw.update(overrides)
        return cls(**kw)

    @property
    def head_channels(self) -> int:
        base = self.num_classes if self.mode == "segmentation" else 3
        return base + (1 if self.depth_head else 0)

    def to_dict(self) -> dict:
        return asdict(self)


class UNetGenerator(nn.Module):
    """Encoder-decoder with mirrored skip connections.

    Downsampling blocks: stride-2 conv, batch norm (skipped on the first and
    innermost blocks), leaky rectifier (slope 0.2). Upsampling blocks: stride-2 transposed
    conv, batch norm, rectifier; each consumes the previous decoder output
    concatenated with the skip from the equally-sized encoder level. The final
    layer maps to the head channels with no normalization; segmentation logits
    stay raw, the depth channel is squashed to [0, 1], rgb mode uses tanh.
    """

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        chans = spec.channels
        self.downs = nn.ModuleList()
        prev = spec.in_channels
        for i, ch in enumerate(chans):
            layers = [nn.Conv2d(prev, ch, 4, 2, 1)]
            # no norm on the innermost block: at full depth its output is
            # 1x1, where batch statistics are undefined for single samples
            if 0 < i < len(chans) - 1:
                layers.append(nn.BatchNorm2d(ch))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            self.downs.append(nn.Sequential(*layers))
            prev = ch
        self.ups = nn.ModuleList()
        for i in reversed(range(1, len(chans))):
            in_ch = chans[i] if i == len(chans) - 1 else chans[i] * 2
            self.ups.append(nn.Sequential(
                nn.ConvTranspose2d(in_ch, chans[i - 1], 4, 2, 1),
                nn.BatchNorm2d(chans[i - 1]),
                nn.ReLU(inplace=True),
            ))
        final_in = chans[0] * 2 if len(chans) > 1 else chans[0]
        self.head = nn.ConvTranspose2d(final_in, spec.head_channels, 4, 2, 1)

    def forward(self, x: torch.Tensor):
        skips = []
        for down in self.downs:
            x = down(x)
            skips.append(x)
        x = skips[-1]
        for j, up in enumerate(self.ups):
            x = up(x)
            skip = skips[len(skips) - 2 - j]
            x = torch.cat([x, skip], dim=1)
        raw = self.head(x)
        spec = self.spec
        if spec.mode == "segmentation":
            main = raw[:, :spec.num_classes]
        else:
            main = torch.tanh(raw[:, :3])
        depth = torch.sigmoid(raw[:, -1:]) if spec.depth_head else None
        return main, depth


class PairFeaturizer(nn.Module):
    """f: image and segmentation each convolved independently to 10 channels
    (3x3, stride 1, padding 1; 20 channels, rectifier, then 10), concatenated
    into the 20-channel pair the discriminator judges."""

    def __init__(self, rgb_channels: int = 3, seg_channels: int = NUM_CLASSES):
        super().__init__()

        def branch(in_ch):
            return nn.Sequential(
                nn.Conv2d(in_ch, 20, 3, 1, 1), nn.ReLU(inplace=True),
                nn.Conv2d(20, 10, 3, 1, 1))

        self.rgb_branch = branch(rgb_channels)
        self.seg_branch = branch(seg_channels)

    @property
    def out_channels(self) -> int:
        return 20

    def forward(self, rgb: torch.Tensor, seg: torch.Tensor) -> torch.Tensor:
        return torch.cat([self.rgb_branch(rgb), self.seg_branch(seg)], dim=1)


class PatchDiscriminator(nn.Module):
    """Patch-based discriminator: a grid of real/fake logits, each judging one
    receptive-field patch. `norm="instance"` is used with gradient-penalty
    training, where batch statistics would couple the penalty samples."""

    def __init__(self, in_channels: int, base: int = 64, norm: str = "batch"):
        super().__init__()
        if norm not in ("batch", "instance", "none"):
            raise ValueError(f"unknown norm {norm!r}")

        def norm_layer(ch):
            if norm == "batch":
                return [nn.BatchNorm2d(ch)]
            if norm == "instance":
                return [nn.InstanceNorm2d(ch)]
            return []

        self.net = nn.Sequential(
            nn.Conv2d(in_channels, base, 4, 2, 1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(base, base * 2, 4, 2, 1),
            *norm_layer(base * 2),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(base * 2, base * 4, 4, 1, 1),
            *norm_layer(base * 4),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(base * 4, 1, 4, 1, 1),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)
