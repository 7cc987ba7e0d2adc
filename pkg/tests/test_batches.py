"""Mixed-batch composition: ratios, view pairing, cycling, no label leakage."""

import dataclasses
import logging

import numpy as np
import pytest
import torch

from dualssl.data.augment import strong_policy, weak_policy
from dualssl.data.batches import BatchComposer, MixedBatch, compose_batch
from dualssl.data.splits import SplitSpec, split_from_labels
from dualssl.exceptions import ContractError


@pytest.fixture(scope="module")
def small(synth_train):
    return synth_train.subset(np.arange(0, 5000, 25))  # 200 images, balanced


@pytest.fixture(scope="module")
def split(small):
    return split_from_labels(SplitSpec("synth10", 0.2, 1), small.labels)


def identity_composer(dataset, split, n_l, mu, seed=0):
    """Composer whose policies are forced to identity, so image content
    can be traced back to source indices."""
    return BatchComposer(
        dataset, split, n_l, mu, seed,
        weak=weak_policy(flip_prob=0.0, crop_padding=0),
        strong=strong_policy(
            num_ops=0, magnitude=0.0, jitter_strength=0.0, erase_prob=0.0,
            flip_prob=0.0, crop_padding=0,
        ),
    )


class TestComposition:
    def test_ratio_arithmetic(self, small, split):
        batch = BatchComposer(small, split, n_l=2, mu=5, seed=0).compose(0)
        assert batch.n_labeled == 2
        assert batch.n_unlabeled == 10

    def test_best_run_ratio(self, small, split):
        batch = BatchComposer(small, split, n_l=1, mu=7, seed=0).compose(0)
        assert batch.n_unlabeled == 7

    def test_views_share_source(self, small, split):
        comp = identity_composer(small, split, n_l=2, mu=3)
        batch = comp.compose(0)
        source = small.normalized(batch.unlabeled_indices)
        assert torch.equal(batch.unlabeled_images_weak, source)
        assert torch.equal(batch.unlabeled_images_strong, source)

    def test_labels_are_one_hot_and_correct(self, small, split):
        comp = identity_composer(small, split, n_l=4, mu=1, seed=3)
        batch = comp.compose(0)
        assert batch.labels.shape == (4, 10)
        assert torch.all(batch.labels.sum(dim=1) == 1.0)
        # identity augmentation: match each labeled image back to its source
        for i in range(4):
            matches = [
                j for j in split.labeled_indices
                if torch.equal(small.normalized([j])[0], batch.labeled_images_strong[i])
            ]
            assert matches, "labeled image must decode from the labeled pool"
            cls = int(batch.labels[i].argmax())
            assert any(small.labels[j] == cls for j in matches)

    def test_determinism(self, small, split):
        a = BatchComposer(small, split, 2, 3, seed=9).compose(5)
        b = BatchComposer(small, split, 2, 3, seed=9).compose(5)
        assert torch.equal(a.labeled_images_strong, b.labeled_images_strong)
        assert torch.equal(a.unlabeled_images_weak, b.unlabeled_images_weak)
        assert torch.equal(a.unlabeled_images_strong, b.unlabeled_images_strong)
        assert a.unlabeled_indices == b.unlabeled_indices

    def test_labeled_only_mode(self, small, split):
        batch = BatchComposer(small, split, 2, 5, seed=0).compose(0, labeled_only=True)
        assert batch.n_unlabeled == 0
        assert batch.unlabeled_indices == []

    def test_one_shot_helper(self, small, split):
        batch = compose_batch(split, 2, 2, 0, small)
        assert isinstance(batch, MixedBatch)
        assert batch.n_unlabeled == 4


class TestCycling:
    def test_labeled_epoch_without_replacement(self, small, split):
        n_l = 8
        comp = identity_composer(small, split, n_l, 1, seed=4)
        seen = []
        for step in range(comp.steps_per_epoch):
            batch = comp.compose(step)
            for i in range(batch.n_labeled):
                img = batch.labeled_images_strong[i]
                matches = [
                    j for j in split.labeled_indices
                    if torch.equal(small.normalized([j])[0], img)
                ]
                seen.extend(matches)
        # one full epoch visits every labeled index before repeating
        n_labeled = len(split.labeled_indices)
        assert sorted(set(seen[:n_labeled])) == sorted(split.labeled_indices)

    def test_unlabeled_wrap_reshuffles(self, small, split, caplog):
        comp = BatchComposer(small, split, n_l=4, mu=4, seed=2)
        pool = len(split.unlabeled_indices)
        steps_to_wrap = pool // 16 + 1
        first_cycle, second_cycle = [], []
        with caplog.at_level(logging.INFO, logger="dualssl.data.batches"):
            for step in range(steps_to_wrap + 1):
                batch = comp.compose(step)
                target = first_cycle if step * 16 + 16 <= pool else second_cycle
                target.extend(batch.unlabeled_indices)
        assert any("wrapped" in rec.message for rec in caplog.records)
        assert second_cycle, "test must cross a cycle boundary"
        # both cycles draw from the unlabeled pool only
        assert set(first_cycle) <= set(split.unlabeled_indices)
        assert set(second_cycle) <= set(split.unlabeled_indices)

    def test_bad_ratios_rejected(self, small, split):
        with pytest.raises(ContractError):
            BatchComposer(small, split, 0, 5, seed=0)
        with pytest.raises(ContractError):
            BatchComposer(small, split, 4, 0, seed=0)


class TestNoLabelLeakage:
    def test_batch_carries_no_unlabeled_ground_truth(self):
        fields = {f.name for f in dataclasses.fields(MixedBatch)}
        assert fields == {
            "labeled_images_strong",
            "labels",
            "unlabeled_images_weak",
            "unlabeled_images_strong",
            "unlabeled_indices",
        }

    def test_hidden_labels_not_reachable_from_batch(self, small, split):
        batch = BatchComposer(small, split, 2, 2, seed=0).compose(0)
        for f in dataclasses.fields(batch):
            value = getattr(batch, f.name)
            assert not isinstance(value, dict), "no mapping fields on batches"
