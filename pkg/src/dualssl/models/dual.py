"""Dual-stream model: transformer and conv streams run in lockstep with
cross-stream fusion at configured depths, each ending in its own head."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from ..exceptions import ConfigurationError, NumericalError
from .convnet import ConvStream, ConvStreamConfig
from .fusion import CrossStreamFusion, FusionPoint, validate_fusion_geometry
from .transformer import TransformerStream, TransformerStreamConfig


@dataclass
class DualLogits:
    """Pre-softmax class scores from each stream, shape (B, K) each."""

    z_T: torch.Tensor
    z_C: torch.Tensor


def combined_predict(dual: DualLogits) -> torch.Tensor:
    """Average the two streams' probabilities: 0.5 (softmax(z_T) + softmax(z_C))."""
    return 0.5 * (torch.softmax(dual.z_T, dim=-1) + torch.softmax(dual.z_C, dim=-1))


def default_fusion_points(
    t_config: TransformerStreamConfig, c_config: ConvStreamConfig
) -> list[FusionPoint]:
    """One fusion point after each third of the transformer depth, paired
    with conv stages in order (all stage grids here divide the token grid)."""
    n_stages = len(c_config.stage_channels)
    points = []
    seen_blocks: set[int] = set()
    for third in range(1, 4):
        block_index = max(1, third * t_config.depth // 3)
        stage_index = min(third - 1, n_stages - 1)
        if block_index in seen_blocks:  # shallow models collapse thirds
            continue
        seen_blocks.add(block_index)
        points.append(
            FusionPoint(block_index, stage_index, c_config.stage_channels[stage_index])
        )
    return points


class DualStreamModel(nn.Module):
    def __init__(
        self,
        t_config: TransformerStreamConfig,
        c_config: ConvStreamConfig,
        fusion_points: list[FusionPoint] | None = None,
        upsample_mode: str = "nearest",
        sequential_fusion: bool = False,
        zero_init_fusion: bool = False,
    ):
        super().__init__()
        if t_config.num_classes != c_config.num_classes:
            raise ConfigurationError("streams disagree on class count")
        if t_config.image_size != c_config.image_size:
            raise ConfigurationError("streams disagree on input size")
        self.t_config = t_config
        self.c_config = c_config
        self.transformer = TransformerStream(t_config)
        self.conv = ConvStream(c_config)

        points = list(fusion_points) if fusion_points is not None else []
        points.sort(key=lambda p: (p.transformer_block_index, p.conv_stage_index))
        self.fusion_points = points
        fusions = []
        last_block, last_stage = 0, -1
        for fp in points:
            if not (0 < fp.transformer_block_index <= t_config.depth):
                raise ConfigurationError(
                    f"fusion block index {fp.transformer_block_index} outside "
                    f"1..{t_config.depth}"
                )
            if not (0 <= fp.conv_stage_index < len(c_config.stage_channels)):
                raise ConfigurationError(f"fusion stage index {fp.conv_stage_index} out of range")
            if fp.conv_stage_index < last_stage or fp.transformer_block_index < last_block:
                raise ConfigurationError("fusion points must be depth-ordered in both streams")
            conv_dim = c_config.stage_channels[fp.conv_stage_index]
            if fp.align_dim != conv_dim:
                raise ConfigurationError(
                    f"fusion align_dim {fp.align_dim} != stage {fp.conv_stage_index} "
                    f"channels {conv_dim}"
                )
            validate_fusion_geometry(t_config.grid, c_config.stage_grid(fp.conv_stage_index))
            fusions.append(
                CrossStreamFusion(
                    token_dim=t_config.embed_dim,
                    conv_dim=conv_dim,
                    token_grid=t_config.grid,
                    conv_grid=c_config.stage_grid(fp.conv_stage_index),
                    upsample_mode=upsample_mode,
                    sequential=sequential_fusion,
                )
            )
            last_block, last_stage = fp.transformer_block_index, fp.conv_stage_index
        self.fusions = nn.ModuleList(fusions)
        if zero_init_fusion:
            for fusion in self.fusions:
                fusion.zero_init_()

    @property
    def num_classes(self) -> int:
        return self.t_config.num_classes

    def forward(self, x: torch.Tensor, check_finite: bool = False) -> DualLogits:
        tokens = self.transformer.embed(x)
        conv = self.conv.stem(x)
        if check_finite:
            _assert_finite(tokens, "transformer.embed")
            _assert_finite(conv, "conv.stem")

        block_i, stage_i = 0, -1
        for fp, fusion in zip(self.fusion_points, self.fusions):
            while block_i < fp.transformer_block_index:
                tokens = self.transformer.blocks[block_i](tokens)
                if check_finite:
                    _assert_finite(tokens, f"transformer.blocks.{block_i}")
                block_i += 1
            while stage_i < fp.conv_stage_index:
                stage_i += 1
                conv = self.conv.stages[stage_i](conv)
                if check_finite:
                    _assert_finite(conv, f"conv.stages.{stage_i}")
            tokens, conv = fusion(tokens, conv)
            if check_finite:
                _assert_finite(tokens, f"fusion@block{fp.transformer_block_index}.tokens")
                _assert_finite(conv, f"fusion@block{fp.transformer_block_index}.conv")

        while block_i < self.t_config.depth:
            tokens = self.transformer.blocks[block_i](tokens)
            if check_finite:
                _assert_finite(tokens, f"transformer.blocks.{block_i}")
            block_i += 1
        while stage_i < len(self.conv.stages) - 1:
            stage_i += 1
            conv = self.conv.stages[stage_i](conv)
            if check_finite:
                _assert_finite(conv, f"conv.stages.{stage_i}")

        z_t = self.transformer.classify(tokens)
        z_c = self.conv.classify(conv)
        if check_finite:
            _assert_finite(z_t, "transformer.head")
            _assert_finite(z_c, "conv.head")
        return DualLogits(z_T=z_t, z_C=z_c)


def _assert_finite(tensor: torch.Tensor, layer_id: str) -> None:
    if not torch.isfinite(tensor).all():
        raise NumericalError(layer_id)
