"""Deterministic labeled/unlabeled partitions of a classification dataset.

A split is a pure function of its :class:`SplitSpec`: the same spec always
produces bit-identical index lists, so experiments that share a spec share
the exact same labeled pool.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..exceptions import ConfigurationError, SplitError

SPLIT_FILE_KEYS = ("spec", "labeled_indices", "unlabeled_indices")


@dataclass(frozen=True)
class SplitSpec:
    """Recipe for a labeled/unlabeled partition."""

    dataset_id: str
    label_fraction: float
    seed: int
    stratified: bool = True

    def __post_init__(self):
        if not (0.0 < self.label_fraction <= 1.0):
            raise ConfigurationError(
                f"label_fraction must be in (0, 1], got {self.label_fraction}"
            )


@dataclass
class DatasetSplit:
    """Materialized partition.

    ``hidden_labels`` maps each unlabeled index to its true class and exists
    purely for diagnostics (pseudo-label accuracy reporting). It is excluded
    from the batch structures that losses consume.
    """

    labeled_indices: list[int]
    unlabeled_indices: list[int]
    hidden_labels: dict[int, int] = field(default_factory=dict)

    @property
    def num_labeled(self) -> int:
        return len(self.labeled_indices)

    @property
    def num_unlabeled(self) -> int:
        return len(self.unlabeled_indices)

    def validate(self, total_size: int) -> None:
        """Check the partition property: disjoint lists covering [0, total)."""
        lab, unl = set(self.labeled_indices), set(self.unlabeled_indices)
        if lab & unl:
            raise SplitError(f"labeled/unlabeled overlap: {sorted(lab & unl)[:5]} ...")
        if lab | unl != set(range(total_size)):
            raise SplitError("partition does not cover the full index range")


def _labeled_count(fraction: float, class_size: int) -> int:
    # round half away from zero so counts are predictable across platforms
    return int(math.floor(fraction * class_size + 0.5))


def make_split(spec: SplitSpec, dataset_size_per_class: Mapping[int, int]) -> DatasetSplit:
    """Partition a dataset described by per-class sizes.

    Global indices follow the canonical contiguous layout: class ``c`` owns
    the index block starting at the summed sizes of all smaller class ids.
    Use :func:`split_from_labels` for datasets with interleaved labels.
    """
    if not dataset_size_per_class:
        raise ConfigurationError("dataset_size_per_class is empty")
    for cls, size in dataset_size_per_class.items():
        if size < 1:
            raise ConfigurationError(f"class {cls} has size {size}, need >= 1")

    pools: dict[int, np.ndarray] = {}
    offset = 0
    for cls in sorted(dataset_size_per_class):
        size = dataset_size_per_class[cls]
        pools[cls] = np.arange(offset, offset + size, dtype=np.int64)
        offset += size
    return _partition(spec, pools)


def split_from_labels(spec: SplitSpec, labels: Sequence[int]) -> DatasetSplit:
    """Partition a dataset given its full label array (index = position)."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or labels.size == 0:
        raise ConfigurationError("labels must be a non-empty 1-d sequence")
    pools = {int(c): np.flatnonzero(labels == c) for c in np.unique(labels)}
    return _partition(spec, pools)


def _partition(spec: SplitSpec, pools: dict[int, np.ndarray]) -> DatasetSplit:
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    labeled: list[int] = []
    unlabeled: list[int] = []
    hidden: dict[int, int] = {}

    if spec.stratified:
        for cls in sorted(pools):
            pool = pools[cls]
            n_lab = _labeled_count(spec.label_fraction, pool.size)
            if n_lab == 0:
                raise SplitError(
                    f"label_fraction {spec.label_fraction} yields zero labeled "
                    f"examples in class {cls} (class size {pool.size})"
                )
            perm = pool[rng.permutation(pool.size)]
            labeled.extend(int(i) for i in perm[:n_lab])
            for i in perm[n_lab:]:
                unlabeled.append(int(i))
                hidden[int(i)] = cls
    else:
        all_idx = np.concatenate([pools[c] for c in sorted(pools)])
        owner = np.concatenate(
            [np.full(pools[c].size, c, dtype=np.int64) for c in sorted(pools)]
        )
        n_lab = _labeled_count(spec.label_fraction, all_idx.size)
        if n_lab == 0:
            raise SplitError(
                f"label_fraction {spec.label_fraction} yields zero labeled examples"
            )
        perm = rng.permutation(all_idx.size)
        labeled.extend(int(all_idx[i]) for i in perm[:n_lab])
        for i in perm[n_lab:]:
            unlabeled.append(int(all_idx[i]))
            hidden[int(all_idx[i])] = int(owner[i])

    labeled.sort()
    unlabeled.sort()
    return DatasetSplit(labeled, unlabeled, hidden)


def save_split(path: str | Path, spec: SplitSpec, split: DatasetSplit) -> None:
    """Persist a split as JSON. Writing the same split twice is byte-identical."""
    payload = {
        "spec": asdict(spec),
        "labeled_indices": split.labeled_indices,
        "unlabeled_indices": split.unlabeled_indices,
    }
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    Path(path).write_text(text)


def load_split(path: str | Path, labels: Sequence[int] | None = None) -> tuple[SplitSpec, DatasetSplit]:
    """Read a split file; ``labels`` (if given) recomputes hidden diagnostics."""
    try:
        payload = json.loads(Path(path).read_text())
        spec = SplitSpec(**payload["spec"])
        split = DatasetSplit(
            [int(i) for i in payload["labeled_indices"]],
            [int(i) for i in payload["unlabeled_indices"]],
        )
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"malformed split file {path}: {exc}") from exc
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
        split.hidden_labels = {i: int(labels[i]) for i in split.unlabeled_indices}
    return spec, split
