"""Experiment configuration: one flat, human-readable INI file that fully
determines a run. Flags override file values; the resolved result is
persisted next to the run's outputs before the first step."""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field
from pathlib import Path

from .exceptions import ConfigurationError
from .models.convnet import ConvStreamConfig
from .models.dual import default_fusion_points
from .models.fusion import FusionPoint
from .models.transformer import TransformerStreamConfig
from .objective import MethodVariant
from .data.splits import SplitSpec
from .trainer import TrainConfig

ARCH_CHOICES = ("dual", "vit", "cnn")
CONFIG_FILE_NAME = "config.ini"


@dataclass(frozen=True)
class ModelConfig:
    """Architecture selection plus both stream shapes.

    ``fusion`` is 'auto' (one point per third of transformer depth), 'none',
    or an explicit 'block:stage,block:stage' list. Class count and input
    size are taken from the dataset at build time, not from the file.
    """

    arch: str = "dual"
    fusion: str = "auto"
    upsample_mode: str = "nearest"
    sequential_fusion: bool = False
    zero_init_fusion: bool = False
    patch_size: int = 4
    embed_dim: int = 192
    depth: int = 6
    heads: int = 3
    mlp_ratio: float = 4.0
    stage_channels: tuple[int, ...] = (64, 128, 256)
    stage_depths: tuple[int, ...] = (2, 2, 2)
    downsample_factors: tuple[int, ...] = (1, 2, 2)

    def __post_init__(self):
        if self.arch not in ARCH_CHOICES:
            raise ConfigurationError(f"arch must be one of {ARCH_CHOICES}, got '{self.arch}'")

    def transformer_config(self, num_classes: int, image_size: int) -> TransformerStreamConfig:
        return TransformerStreamConfig(
            patch_size=self.patch_size,
            embed_dim=self.embed_dim,
            depth=self.depth,
            heads=self.heads,
            mlp_ratio=self.mlp_ratio,
            num_classes=num_classes,
            image_size=image_size,
        )

    def conv_config(self, num_classes: int, image_size: int) -> ConvStreamConfig:
        return ConvStreamConfig(
            stage_channels=self.stage_channels,
            stage_depths=self.stage_depths,
            downsample_factors=self.downsample_factors,
            num_classes=num_classes,
            image_size=image_size,
        )

    def fusion_points(self, num_classes: int, image_size: int) -> list[FusionPoint]:
        if self.fusion == "none" or self.arch != "dual":
            return []
        if self.fusion == "auto":
            return default_fusion_points(
                self.transformer_config(num_classes, image_size),
                self.conv_config(num_classes, image_size),
            )
        points = []
        for item in self.fusion.split(","):
            try:
                block_s, stage_s = item.strip().split(":")
                block, stage = int(block_s), int(stage_s)
            except ValueError as exc:
                raise ConfigurationError(
                    f"bad fusion item '{item}', expected 'block:stage'"
                ) from exc
            if not (0 <= stage < len(self.stage_channels)):
                raise ConfigurationError(f"fusion stage {stage} out of range")
            points.append(FusionPoint(block, stage, self.stage_channels[stage]))
        return points


@dataclass(frozen=True)
class ExperimentConfig:
    split: SplitSpec = field(default_factory=lambda: SplitSpec("synth10", 0.1, 0))
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    output_dir: str = "runs/default"
    data_dir: str = ""


# (section, key) -> (target, field name, type tag)
_SCHEMA: list[tuple[str, str, str, str, str]] = [
    ("data", "dataset_id", "split", "dataset_id", "str"),
    ("data", "label_fraction", "split", "label_fraction", "float"),
    ("data", "seed", "split", "seed", "int"),
    ("data", "stratified", "split", "stratified", "bool"),
    ("model", "arch", "model", "arch", "str"),
    ("model", "fusion", "model", "fusion", "str"),
    ("model", "upsample_mode", "model", "upsample_mode", "str"),
    ("model", "sequential_fusion", "model", "sequential_fusion", "bool"),
    ("model", "zero_init_fusion", "model", "zero_init_fusion", "bool"),
    ("model", "patch_size", "model", "patch_size", "int"),
    ("model", "embed_dim", "model", "embed_dim", "int"),
    ("model", "depth", "model", "depth", "int"),
    ("model", "heads", "model", "heads", "int"),
    ("model", "mlp_ratio", "model", "mlp_ratio", "float"),
    ("model", "stage_channels", "model", "stage_channels", "int_tuple"),
    ("model", "stage_depths", "model", "stage_depths", "int_tuple"),
    ("model", "downsample_factors", "model", "downsample_factors", "int_tuple"),
    ("train", "total_epochs", "train", "total_epochs", "int"),
    ("train", "warmup_epochs", "train", "warmup_epochs", "int"),
    ("train", "labeled_only_epochs", "train", "labeled_only_epochs", "int"),
    ("train", "lr_init", "train", "lr_init", "float"),
    ("train", "lr_final", "train", "lr_final", "float"),
    ("train", "n_l", "train", "n_l", "int"),
    ("train", "mu", "train", "mu", "int"),
    ("train", "tau", "train", "tau", "float"),
    ("train", "lambda", "train", "lambda_u", "float"),
    ("train", "seed", "train", "seed", "int"),
    ("train", "deterministic", "train", "deterministic", "bool"),
    ("train", "eval_every", "train", "eval_every", "int"),
    ("train", "variant", "train", "variant.name", "str"),
    ("train", "pseudo_source", "train", "variant.pseudo_source", "str"),
    ("train", "weight_decay", "train", "weight_decay", "float"),
    ("train", "beta1", "train", "beta1", "float"),
    ("train", "beta2", "train", "beta2", "float"),
    ("train", "grad_clip", "train", "grad_clip", "float"),
    ("train", "label_smoothing", "train", "label_smoothing", "float"),
    ("train", "eval_batch", "train", "eval_batch", "int"),
    ("run", "output_dir", "self", "output_dir", "str"),
    ("run", "data_dir", "self", "data_dir", "str"),
]


def _encode(value, kind: str) -> str:
    if kind == "bool":
        return "true" if value else "false"
    if kind == "float":
        return repr(float(value))
    if kind == "int_tuple":
        return ",".join(str(v) for v in value)
    return str(value)


def _decode(text: str, kind: str):
    try:
        if kind == "bool":
            lowered = text.strip().lower()
            if lowered not in ("true", "false"):
                raise ValueError(f"expected true/false, got '{text}'")
            return lowered == "true"
        if kind == "float":
            return float(text)
        if kind == "int":
            return int(text)
        if kind == "int_tuple":
            return tuple(int(v) for v in text.split(",") if v.strip())
        return text
    except ValueError as exc:
        raise ConfigurationError(f"bad config value '{text}': {exc}") from exc


def _lookup(config: ExperimentConfig, target: str, name: str):
    obj = config if target == "self" else getattr(config, target)
    if "." in name:
        head, tail = name.split(".", 1)
        return getattr(getattr(obj, head), tail)
    return getattr(obj, name)


def serialize_config(config: ExperimentConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    for section, key, target, name, kind in _SCHEMA:
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, _encode(_lookup(config, target, name), kind))
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def parse_config(text: str, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Parse an INI config; ``overrides`` maps 'section.key' to raw strings
    applied on top of the file (flag precedence)."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from exc

    values: dict[tuple[str, str], object] = {}
    known = {(s, k) for s, k, *_ in _SCHEMA}
    for section in parser.sections():
        for key in parser[section]:
            if (section, key) not in known:
                raise ConfigurationError(f"unknown config key [{section}] {key}")
    for section, key, target, name, kind in _SCHEMA:
        raw = None
        if parser.has_option(section, key):
            raw = parser.get(section, key)
        if overrides and f"{section}.{key}" in overrides:
            raw = overrides[f"{section}.{key}"]
        if raw is not None:
            values[(target, name)] = _decode(raw, kind)

    def collect(target: str, cls, extra: dict | None = None):
        kwargs = dict(extra or {})
        for (tgt, name), value in values.items():
            if tgt == target and "." not in name:
                kwargs[name] = value
        return cls(**kwargs)

    variant_kwargs = {
        name.split(".", 1)[1]: value
        for (tgt, name), value in values.items()
        if tgt == "train" and name.startswith("variant.")
    }
    variant = MethodVariant(**{"name": "semiformer", **variant_kwargs}) if variant_kwargs else None
    train_extra = {"variant": variant} if variant is not None else {}
    train = collect("train", TrainConfig, train_extra)
    split = collect("split", SplitSpec)
    model = collect("model", ModelConfig)
    self_kwargs = {
        name: value for (tgt, name), value in values.items() if tgt == "self"
    }
    return ExperimentConfig(split=split, model=model, train=train, **self_kwargs)


def load_config(path: str | Path, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    return parse_config(Path(path).read_text(), overrides)


def save_config(config: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(serialize_config(config))
