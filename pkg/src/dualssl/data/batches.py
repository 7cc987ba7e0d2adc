"""Mixed-batch composition: labeled examples plus a fixed multiple of
unlabeled examples, the latter carried in weak and strong views.

Sampling is cycle-based: the labeled pool is drawn without replacement
within a shuffled cycle, and the unlabeled pool cycles independently with
its own shuffles. Each cycle's order and every augmentation draw derive
from ``(seed, step, role, position)``, so composition is a pure function of
the step index and is unaffected by worker parallelism.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch

from ..exceptions import ContractError
from .augment import AugmentationPolicy, apply_policy, derive_seed, strong_policy, weak_policy
from .datasets import ImageDataset
from .splits import DatasetSplit

logger = logging.getLogger(__name__)

# role codes folded into per-example seeds
_ROLE_LABELED = 0
_ROLE_UNLABELED_WEAK = 1
_ROLE_UNLABELED_STRONG = 2


@dataclass
class MixedBatch:
    """One optimization step's inputs.

    Weak and strong unlabeled views at position ``j`` decode from the same
    source image. Unlabeled ground truth is deliberately absent; only the
    source indices are carried, for diagnostics.
    """

    labeled_images_strong: torch.Tensor  # (n_l, C, H, W)
    labels: torch.Tensor  # (n_l, K) one-hot
    unlabeled_images_weak: torch.Tensor  # (n_u, C, H, W)
    unlabeled_images_strong: torch.Tensor  # (n_u, C, H, W)
    unlabeled_indices: list[int]

    @property
    def n_labeled(self) -> int:
        return int(self.labeled_images_strong.shape[0])

    @property
    def n_unlabeled(self) -> int:
        return int(self.unlabeled_images_weak.shape[0])


class _CyclingSampler:
    """Without-replacement sampling within shuffled cycles over a fixed pool.

    The order of cycle ``c`` depends only on (seed, role, c), so arbitrary
    step positions can be resolved without iteration state.
    """

    def __init__(self, pool: list[int], seed: int, role: int):
        if not pool:
            raise ContractError("cannot sample from an empty index pool")
        self.pool = np.asarray(pool, dtype=np.int64)
        self.seed = seed
        self.role = role
        self._cycle_no = -1
        self._order = None
        self._wraps = 0

    def _cycle(self, cycle_no: int) -> np.ndarray:
        if cycle_no != self._cycle_no:
            rng = np.random.default_rng(derive_seed(self.seed, self.role, cycle_no))
            self._order = self.pool[rng.permutation(self.pool.size)]
            self._cycle_no = cycle_no
            if cycle_no > self._wraps:
                self._wraps = cycle_no
                logger.info(
                    "sampler role=%d wrapped pool of %d (cycle %d)",
                    self.role, self.pool.size, cycle_no,
                )
        return self._order

    def take(self, start: int, count: int) -> np.ndarray:
        """Return ``count`` indices beginning at absolute draw position ``start``."""
        out = np.empty(count, dtype=np.int64)
        pos = start
        for i in range(count):
            cycle_no, offset = divmod(pos, self.pool.size)
            out[i] = self._cycle(cycle_no)[offset]
            pos += 1
        return out


class BatchComposer:
    """Builds :class:`MixedBatch` objects for a (dataset, split) pair."""

    def __init__(
        self,
        dataset: ImageDataset,
        split: DatasetSplit,
        n_l: int,
        mu: int,
        seed: int,
        weak: AugmentationPolicy | None = None,
        strong: AugmentationPolicy | None = None,
    ):
        if n_l < 1 or mu < 1:
            raise ContractError(f"need n_l >= 1 and mu >= 1, got n_l={n_l} mu={mu}")
        if not split.labeled_indices:
            raise ContractError("split has no labeled examples")
        self.dataset = dataset
        self.split = split
        self.n_l = n_l
        self.mu = mu
        self.seed = seed
        self.weak = weak or weak_policy()
        self.strong = strong or strong_policy()
        self._labeled = _CyclingSampler(split.labeled_indices, seed, _ROLE_LABELED)
        self._unlabeled = (
            _CyclingSampler(split.unlabeled_indices, seed, _ROLE_UNLABELED_WEAK)
            if split.unlabeled_indices
            else None
        )

    @property
    def steps_per_epoch(self) -> int:
        """Steps to cycle the labeled pool once (the epoch unit)."""
        return max(1, int(np.ceil(len(self.split.labeled_indices) / self.n_l)))

    def _augment(self, images: torch.Tensor, policy, step: int, role: int) -> torch.Tensor:
        out = torch.empty_like(images)
        for i in range(images.shape[0]):
            out[i] = apply_policy(policy, images[i], derive_seed(self.seed, step, role, i))
        return out

    def compose(self, step: int, labeled_only: bool = False) -> MixedBatch:
        """Compose the mixed batch for optimization step ``step``."""
        lab_idx = self._labeled.take(step * self.n_l, self.n_l)
        lab_imgs = self.dataset.normalized(lab_idx)
        lab_strong = self._augment(lab_imgs, self.strong, step, _ROLE_LABELED)
        labels = torch.zeros(self.n_l, self.dataset.num_classes)
        labels[torch.arange(self.n_l), torch.from_numpy(self.dataset.labels[lab_idx])] = 1.0

        n_u = self.mu * self.n_l
        if labeled_only or self._unlabeled is None:
            empty = torch.empty((0,) + lab_strong.shape[1:])
            return MixedBatch(lab_strong, labels, empty, empty.clone(), [])

        unl_idx = self._unlabeled.take(step * n_u, n_u)
        unl_imgs = self.dataset.normalized(unl_idx)
        unl_weak = self._augment(unl_imgs, self.weak, step, _ROLE_UNLABELED_WEAK)
        unl_strong = self._augment(unl_imgs, self.strong, step, _ROLE_UNLABELED_STRONG)
        return MixedBatch(lab_strong, labels, unl_weak, unl_strong, [int(i) for i in unl_idx])


def compose_batch(
    split: DatasetSplit,
    n_l: int,
    mu: int,
    step_seed: int,
    dataset: ImageDataset,
    step: int = 0,
    **policies,
) -> MixedBatch:
    """One-shot composition (convenience over :class:`BatchComposer`)."""
    return BatchComposer(dataset, split, n_l, mu, step_seed, **policies).compose(step)
