"""Cross-stream feature exchange between patch tokens and conv feature maps.

Token i of the transformer stream corresponds to a patch of the input image,
and (because conv grids here are integer multiples of the token grid) to an
exact sub-region of the conv feature map. Fusion adds, per token, a pooled
and re-embedded summary of its conv sub-region, and adds back to each conv
sub-region an upsampled re-embedding of its token:

    tokens[i]   += layernorm(avgpool(conv1x1(conv_region_i)))
    conv_map[i] += batchnorm(upsample(conv1x1(token_i)))

The class token does not participate. By default both directions read the
pre-fusion features (a symmetric exchange); sequential mode feeds the
already-updated tokens to the conv-bound direction instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..exceptions import ConfigurationError


@dataclass(frozen=True)
class FusionPoint:
    """Pairing of a transformer depth with a conv stage.

    ``transformer_block_index`` counts blocks executed before the exchange
    (1-based: index k fuses after block k). ``align_dim`` is the conv
    channel width at the paired stage.
    """

    transformer_block_index: int
    conv_stage_index: int
    align_dim: int


def validate_fusion_geometry(token_grid: int, conv_grid: int) -> int:
    """Return the sub-region side ratio, rejecting indivisible grids."""
    if conv_grid % token_grid != 0:
        raise ConfigurationError(
            f"conv grid {conv_grid} not divisible by token grid {token_grid}"
        )
    return conv_grid // token_grid


class CrossStreamFusion(nn.Module):
    """One fusion point's parameters and forward logic."""

    def __init__(
        self,
        token_dim: int,
        conv_dim: int,
        token_grid: int,
        conv_grid: int,
        upsample_mode: str = "nearest",
        sequential: bool = False,
    ):
        super().__init__()
        self.ratio = validate_fusion_geometry(token_grid, conv_grid)
        self.token_grid = token_grid
        self.conv_grid = conv_grid
        if upsample_mode not in ("nearest", "bilinear"):
            raise ConfigurationError(f"unknown upsample mode '{upsample_mode}'")
        self.upsample_mode = upsample_mode
        self.sequential = sequential
        self.align_c2t = nn.Conv2d(conv_dim, token_dim, kernel_size=1)
        self.norm_c2t = nn.LayerNorm(token_dim)
        self.align_t2c = nn.Conv2d(token_dim, conv_dim, kernel_size=1)
        self.norm_t2c = nn.BatchNorm2d(conv_dim)

    def zero_init_(self) -> None:
        """Zero the alignment and normalization parameters so both fusion
        directions contribute exactly zero (streams run independently)."""
        for p in self.parameters():
            nn.init.zeros_(p)

    def fuse_c_to_t(self, tokens: torch.Tensor, conv_map: torch.Tensor) -> torch.Tensor:
        """Add pooled conv context to the patch tokens; class token unchanged."""
        delta = self.align_c2t(conv_map)
        delta = F.avg_pool2d(delta, kernel_size=self.ratio, stride=self.ratio)
        delta = delta.flatten(2).transpose(1, 2)  # (B, grid^2, d_T)
        delta = self.norm_c2t(delta)
        return torch.cat([tokens[:, :1], tokens[:, 1:] + delta], dim=1)

    def fuse_t_to_c(self, conv_map: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
        """Add broadcast token context to the conv map; class token unused."""
        b, _, d = tokens.shape
        g = self.token_grid
        patch = tokens[:, 1:].transpose(1, 2).reshape(b, d, g, g)
        delta = self.align_t2c(patch)
        if self.ratio > 1:
            kwargs = {} if self.upsample_mode == "nearest" else {"align_corners": False}
            delta = F.interpolate(delta, scale_factor=self.ratio, mode=self.upsample_mode, **kwargs)
        delta = self.norm_t2c(delta)
        return conv_map + delta

    def forward(
        self, tokens: torch.Tensor, conv_map: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        if conv_map.shape[-1] != self.conv_grid or tokens.shape[1] != 1 + self.token_grid**2:
            raise ConfigurationError(
                f"fusion built for token grid {self.token_grid} / conv grid "
                f"{self.conv_grid}, got tokens {tuple(tokens.shape)} and "
                f"conv map {tuple(conv_map.shape)}"
            )
        new_tokens = self.fuse_c_to_t(tokens, conv_map)
        token_source = new_tokens if self.sequential else tokens
        new_conv = self.fuse_t_to_c(conv_map, token_source)
        return new_tokens, new_conv
