"""Data pipeline: splits, datasets, augmentation, batch composition."""

from .augment import (
    AugmentationPolicy,
    OpSpec,
    apply_policy,
    derive_seed,
    strong_augment,
    strong_policy,
    weak_augment,
    weak_policy,
)
from .batches import BatchComposer, MixedBatch, compose_batch
from .datasets import (
    DATA_DIR_ENV,
    ImageDataset,
    KNOWN_CLASS_SIZES,
    dataset_ids,
    load_dataset,
    resolve_data_dir,
)
from .splits import (
    DatasetSplit,
    SplitSpec,
    load_split,
    make_split,
    save_split,
    split_from_labels,
)

__all__ = [
    "AugmentationPolicy",
    "BatchComposer",
    "DATA_DIR_ENV",
    "DatasetSplit",
    "ImageDataset",
    "KNOWN_CLASS_SIZES",
    "MixedBatch",
    "OpSpec",
    "SplitSpec",
    "apply_policy",
    "compose_batch",
    "dataset_ids",
    "derive_seed",
    "load_dataset",
    "load_split",
    "make_split",
    "resolve_data_dir",
    "save_split",
    "split_from_labels",
    "strong_augment",
    "strong_policy",
    "weak_augment",
    "weak_policy",
]
