"""Small residual convolutional stream.

Organized as a stem plus stages. Each stage may downsample, and the feature
map after any stage can be handed to a fusion module, so stages are exposed
as a ModuleList alongside ``stem``/``classify``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn

from ..exceptions import ConfigurationError


@dataclass(frozen=True)
class ConvStreamConfig:
    stage_channels: tuple[int, ...] = (64, 128, 256)
    stage_depths: tuple[int, ...] = (2, 2, 2)
    downsample_factors: tuple[int, ...] = (1, 2, 2)
    num_classes: int = 10
    image_size: int = 32

    def __post_init__(self):
        lens = {len(self.stage_channels), len(self.stage_depths), len(self.downsample_factors)}
        if len(lens) != 1:
            raise ConfigurationError("stage_channels/depths/downsample_factors lengths differ")
        size = self.image_size
        for f in self.downsample_factors:
            if f < 1 or size % f != 0:
                raise ConfigurationError(
                    f"downsample factor {f} inconsistent with feature size {size}"
                )
            size //= f

    def stage_grid(self, stage_index: int) -> int:
        """Feature-map side length after the given stage."""
        size = self.image_size
        for f in self.downsample_factors[: stage_index + 1]:
            size //= f
        return size


class BasicBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.relu = nn.ReLU(inplace=True)
        if stride != 1 or in_ch != out_ch:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_ch),
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + self.shortcut(x))


class ConvStream(nn.Module):
    def __init__(self, config: ConvStreamConfig):
        super().__init__()
        self.config = config
        ch0 = config.stage_channels[0]
        self.stem = nn.Sequential(
            nn.Conv2d(3, ch0, 3, padding=1, bias=False),
            nn.BatchNorm2d(ch0),
            nn.ReLU(inplace=True),
        )
        stages = []
        in_ch = ch0
        for ch, depth, factor in zip(
            config.stage_channels, config.stage_depths, config.downsample_factors
        ):
            blocks = [BasicBlock(in_ch, ch, stride=factor)]
            blocks.extend(BasicBlock(ch, ch) for _ in range(depth - 1))
            stages.append(nn.Sequential(*blocks))
            in_ch = ch
        self.stages = nn.ModuleList(stages)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = nn.Linear(in_ch, config.num_classes)

    def classify(self, feature_map: torch.Tensor) -> torch.Tensor:
        return self.head(self.pool(feature_map).flatten(1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.stem(x)
        for stage in self.stages:
            out = stage(out)
        return self.classify(out)
