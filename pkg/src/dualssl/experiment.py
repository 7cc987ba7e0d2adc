"""End-to-end run orchestration shared by the CLI and the test suites:
resolve a config into datasets, split, model and trainer, then execute."""

from __future__ import annotations

import logging
from pathlib import Path

import torch.nn as nn

from .config import CONFIG_FILE_NAME, ExperimentConfig, save_config
from .data.datasets import ImageDataset, load_dataset
from .data.splits import DatasetSplit, load_split, split_from_labels
from .exceptions import ConfigurationError
from .models.convnet import ConvStream
from .models.dual import DualStreamModel
from .models.transformer import TransformerStream
from .trainer import RunState, Trainer, seed_everything

logger = logging.getLogger(__name__)

LOCK_FILE_NAME = ".lock"

# per-variant architecture requirements; sup_only accepts anything
_VARIANT_ARCH = {
    "vanilla_cnn": "cnn",
    "vanilla_vit": "vit",
    "conv_labeled": "dual",
    "semiformer": "dual",
}


def effective_arch(config: ExperimentConfig) -> str:
    name = config.train.variant.name
    required = _VARIANT_ARCH.get(name)
    if required is not None and config.model.arch != required:
        raise ConfigurationError(
            f"variant '{name}' requires arch '{required}', got '{config.model.arch}'"
        )
    return config.model.arch


def build_model(config: ExperimentConfig, num_classes: int, image_size: int) -> nn.Module:
    arch = effective_arch(config)
    model_cfg = config.model
    if arch == "vit":
        model = TransformerStream(model_cfg.transformer_config(num_classes, image_size))
        model.stream_kinds = ("T",)
        return model
    if arch == "cnn":
        model = ConvStream(model_cfg.conv_config(num_classes, image_size))
        model.stream_kinds = ("C",)
        return model
    fusion_points = model_cfg.fusion_points(num_classes, image_size)
    if config.train.variant.name == "conv_labeled" and fusion_points:
        raise ConfigurationError("conv_labeled must be configured with fusion = none")
    return DualStreamModel(
        model_cfg.transformer_config(num_classes, image_size),
        model_cfg.conv_config(num_classes, image_size),
        fusion_points=fusion_points,
        upsample_mode=model_cfg.upsample_mode,
        sequential_fusion=model_cfg.sequential_fusion,
        zero_init_fusion=model_cfg.zero_init_fusion,
    )


def resolve_split(config: ExperimentConfig, dataset: ImageDataset,
                  split_file: str | Path | None = None) -> DatasetSplit:
    if split_file is not None:
        spec, split = load_split(split_file, labels=dataset.labels)
        if spec != config.split:
            raise ConfigurationError(
                f"split file spec {spec} does not match configured spec {config.split}"
            )
        split.validate(len(dataset))
        return split
    return split_from_labels(config.split, dataset.labels)


class RunLock:
    """Exclusive per-output-directory lock; concurrent runs must not share."""

    def __init__(self, run_dir: Path):
        self.path = run_dir / LOCK_FILE_NAME

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            self.path.touch(exist_ok=False)
        except FileExistsError:
            raise ConfigurationError(
                f"output directory {self.path.parent} is locked by another run "
                f"(remove {self.path} if that run is dead)"
            ) from None
        return self

    def __exit__(self, *_exc):
        self.path.unlink(missing_ok=True)


def run_experiment(
    config: ExperimentConfig,
    split_file: str | Path | None = None,
    resume_from: str | Path | None = None,
) -> tuple[RunState, Path]:
    """Execute one training run in ``config.output_dir``.

    The resolved config is persisted before the first step; model
    construction happens after seeding so identical configs give identical
    initializations.
    """
    run_dir = Path(config.output_dir)
    with RunLock(run_dir):
        save_config(config, run_dir / CONFIG_FILE_NAME)
        data_dir = config.data_dir or None
        dataset = load_dataset(config.split.dataset_id, data_dir, train=True)
        eval_set = load_dataset(config.split.dataset_id, data_dir, train=False)
        split = resolve_split(config, dataset, split_file)
        if split.num_unlabeled == 0 and config.train.variant.uses_unlabeled:
            logger.warning(
                "no unlabeled data in split; only sup_only is meaningful"
            )
        seed_everything(config.train.seed, config.train.deterministic)
        model = build_model(config, dataset.num_classes, dataset.image_size)
        trainer = Trainer(config.train, model, dataset, split, eval_set, run_dir)
        state = trainer.train(resume_from=resume_from)
    return state, run_dir
