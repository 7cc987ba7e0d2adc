"""Model zoo: transformer stream, conv stream, cross-stream fusion, dual model."""

from .convnet import BasicBlock, ConvStream, ConvStreamConfig
from .dual import DualLogits, DualStreamModel, combined_predict, default_fusion_points
from .fusion import CrossStreamFusion, FusionPoint, validate_fusion_geometry
from .transformer import TransformerStream, TransformerStreamConfig

__all__ = [
    "BasicBlock",
    "ConvStream",
    "ConvStreamConfig",
    "CrossStreamFusion",
    "DualLogits",
    "DualStreamModel",
    "FusionPoint",
    "TransformerStream",
    "TransformerStreamConfig",
    "combined_predict",
    "default_fusion_points",
    "validate_fusion_geometry",
]
