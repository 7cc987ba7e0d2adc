"""Training orchestration: schedule, phases, checkpoints, metric stream.

A run has three phases along one global cosine schedule: linear warmup,
labeled-only pretraining (the unlabeled term is suppressed), then the full
semi-supervised objective. One metric record is emitted per epoch as a JSONL
line; checkpoints are written at evaluation points and are byte-stable
(save, load, save yields identical files).
"""

from __future__ import annotations

import json
import logging
import math
import random
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
import torch

from .data.batches import BatchComposer
from .data.datasets import ImageDataset
from .data.splits import DatasetSplit
from .exceptions import ConfigurationError, ContractError, TrainingAborted
from .models.dual import DualLogits, DualStreamModel, combined_predict
from .objective import MethodVariant, step_objective, validate_variant_model

logger = logging.getLogger(__name__)

CHECKPOINT_SCHEMA_VERSION = 1
METRICS_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    total_epochs: int = 100
    warmup_epochs: int = 5
    labeled_only_epochs: int = 25
    lr_init: float = 1e-3
    lr_final: float = 1e-5
    n_l: int = 16
    mu: int = 5
    tau: float = 0.7
    lambda_u: float = 4.0
    seed: int = 0
    deterministic: bool = True
    eval_every: int = 1
    variant: MethodVariant = field(default_factory=lambda: MethodVariant("semiformer"))
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    grad_clip: float = 1.0
    label_smoothing: float = 0.0
    eval_batch: int = 256

    def __post_init__(self):
        if self.warmup_epochs + self.labeled_only_epochs > self.total_epochs:
            raise ConfigurationError(
                "warmup_epochs + labeled_only_epochs exceeds total_epochs"
            )
        if self.lr_final > self.lr_init:
            raise ConfigurationError("lr_final must not exceed lr_init")

    @property
    def pretrain_epochs(self) -> int:
        """Epochs before the unlabeled term activates."""
        return self.warmup_epochs + self.labeled_only_epochs


@dataclass
class MetricRecord:
    """One logging interval's metrics. Fields that do not apply (eval skipped,
    supervised phase) are None and serialize as JSON null."""

    step: int
    epoch: int
    lr: float
    L: float
    L_l: float
    L_u: float | None
    coverage: float | None
    pseudo_label_accuracy: float | None
    top1_T: float | None
    top1_C: float | None
    top1_combined: float | None
    wall_time: float

    def to_json(self) -> str:
        payload = {"schema_version": METRICS_SCHEMA_VERSION}
        payload.update(asdict(self))
        return json.dumps(payload, sort_keys=True)


def read_metrics(path: str | Path) -> list[MetricRecord]:
    records = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        payload = json.loads(line)
        payload.pop("schema_version", None)
        records.append(MetricRecord(**payload))
    return records


def lr_at(step: int, config: TrainConfig, steps_per_epoch: int) -> float:
    """Learning rate after ``step`` updates (1-based).

    Linear ramp from 0 to lr_init across the warmup steps, then cosine decay
    to lr_final across the remaining steps; hits lr_init exactly at the end
    of warmup and lr_final exactly at the final step.
    """
    if step < 0:
        raise ContractError(f"step must be >= 0, got {step}")
    warmup_steps = config.warmup_epochs * steps_per_epoch
    total_steps = config.total_epochs * steps_per_epoch
    if step <= warmup_steps:
        return config.lr_init * step / max(1, warmup_steps)
    horizon = total_steps - warmup_steps
    if horizon <= 0:
        return config.lr_init
    t = min(step - warmup_steps, horizon)
    return config.lr_final + 0.5 * (config.lr_init - config.lr_final) * (
        1.0 + math.cos(math.pi * t / horizon)
    )


@dataclass
class EvalResult:
    top1_T: float | None
    top1_C: float | None
    top1_combined: float | None

    def primary(self) -> float:
        for value in (self.top1_combined, self.top1_T, self.top1_C):
            if value is not None:
                return value
        return float("nan")


def _eval_batches(dataset: ImageDataset, batch_size: int) -> Iterator[tuple[torch.Tensor, np.ndarray]]:
    for start in range(0, len(dataset), batch_size):
        idx = np.arange(start, min(start + batch_size, len(dataset)))
        yield dataset.normalized(idx), dataset.labels[idx]


def evaluate(model: torch.nn.Module, eval_set: ImageDataset, batch_size: int = 256) -> EvalResult:
    """Top-1 accuracy of each stream and of the averaged prediction, on
    deterministic center views (normalization only)."""
    if len(eval_set) == 0:
        raise ContractError("evaluation set is empty")
    was_training = model.training
    model.eval()
    correct = {"T": 0, "C": 0, "combined": 0}
    seen_streams: set[str] = set()
    total = 0
    with torch.no_grad():
        for images, labels in _eval_batches(eval_set, batch_size):
            out = model(images)
            targets = torch.from_numpy(labels)
            if isinstance(out, DualLogits):
                seen_streams |= {"T", "C"}
                correct["T"] += int((out.z_T.argmax(-1) == targets).sum())
                correct["C"] += int((out.z_C.argmax(-1) == targets).sum())
                correct["combined"] += int(
                    (combined_predict(out).argmax(-1) == targets).sum()
                )
            else:
                kind = getattr(model, "stream_kinds", ("T",))[0]
                seen_streams.add(kind)
                hits = int((out.argmax(-1) == targets).sum())
                correct[kind] += hits
                correct["combined"] += hits
            total += len(labels)
    model.train(was_training)
    top1 = {k: 100.0 * v / total for k, v in correct.items()}
    return EvalResult(
        top1_T=top1["T"] if "T" in seen_streams else None,
        top1_C=top1["C"] if "C" in seen_streams else None,
        top1_combined=top1["combined"],
    )


def seed_everything(seed: int, deterministic: bool = True) -> None:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True)


def rng_states() -> dict:
    return {
        "python": random.getstate(),
        "numpy": np.random.get_state(),
        "torch": torch.get_rng_state(),
    }


def restore_rng_states(states: dict) -> None:
    random.setstate(states["python"])
    np.random.set_state(states["numpy"])
    torch.set_rng_state(states["torch"])


def save_checkpoint(
    path: str | Path,
    model: torch.nn.Module,
    optimizer: torch.optim.Optimizer,
    config: TrainConfig,
    epoch: int,
    global_step: int,
    best_metric: float,
) -> None:
    payload = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict(),
        "config": asdict(config),
        "epoch": epoch,
        "global_step": global_step,
        "best_metric": best_metric,
        "rng": rng_states(),
    }
    torch.save(payload, str(path))


def load_checkpoint(path: str | Path) -> dict:
    payload = torch.load(str(path), weights_only=False)
    version = payload.get("schema_version")
    if version != CHECKPOINT_SCHEMA_VERSION:
        raise ConfigurationError(
            f"checkpoint schema {version} unsupported (expected {CHECKPOINT_SCHEMA_VERSION})"
        )
    return payload


@dataclass
class RunState:
    epoch: int
    global_step: int
    model: torch.nn.Module
    optimizer: torch.optim.Optimizer
    best_metric: float
    records: list[MetricRecord]


class Trainer:
    """Owns the optimization loop for one run directory."""

    def __init__(
        self,
        config: TrainConfig,
        model: torch.nn.Module,
        dataset: ImageDataset,
        split: DatasetSplit,
        eval_set: ImageDataset | None,
        run_dir: str | Path,
    ):
        validate_variant_model(config.variant, model)
        self.config = config
        self.model = model
        self.dataset = dataset
        self.split = split
        self.eval_set = eval_set
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.composer = BatchComposer(dataset, split, config.n_l, config.mu, config.seed)
        self.optimizer = torch.optim.AdamW(
            model.parameters(),
            lr=config.lr_init,
            betas=(config.beta1, config.beta2),
            weight_decay=config.weight_decay,
        )
        self.metrics_path = self.run_dir / "metrics.jsonl"

    @property
    def steps_per_epoch(self) -> int:
        return self.composer.steps_per_epoch

    def _pseudo_accuracy(self, plr, batch) -> tuple[int, int]:
        """(correct, retained) over confidence-passing examples, judged
        against the split's hidden diagnostic labels."""
        if plr is None or plr.retained_count == 0:
            return 0, 0
        hard = plr.hard_labels.argmax(-1)
        correct = 0
        retained = 0
        for j, src_idx in enumerate(batch.unlabeled_indices):
            if bool(plr.mask[j]):
                retained += 1
                truth = self.split.hidden_labels.get(src_idx)
                if truth is not None and int(hard[j]) == truth:
                    correct += 1
        return correct, retained

    def train(self, resume_from: str | Path | None = None) -> RunState:
        config = self.config
        start_epoch = 0
        global_step = 0
        best_metric = -math.inf
        if resume_from is not None:
            payload = load_checkpoint(resume_from)
            self.model.load_state_dict(payload["model"])
            self.optimizer.load_state_dict(payload["optimizer"])
            start_epoch = payload["epoch"] + 1
            global_step = payload["global_step"]
            best_metric = payload["best_metric"]
            restore_rng_states(payload["rng"])

        spe = self.steps_per_epoch
        records: list[MetricRecord] = []
        wall_start = time.perf_counter()
        self.model.train()

        with self.metrics_path.open("a") as metrics_file:
            for epoch in range(start_epoch, config.total_epochs):
                supervised_phase = (
                    epoch < config.pretrain_epochs or not config.variant.uses_unlabeled
                )
                sums = {"L": 0.0, "L_l": 0.0, "L_u": 0.0, "coverage": 0.0}
                pseudo_correct = 0
                pseudo_retained = 0
                ssl_steps = 0

                for step_in_epoch in range(spe):
                    lr = lr_at(global_step + 1, config, spe)
                    for group in self.optimizer.param_groups:
                        group["lr"] = lr

                    batch = self.composer.compose(global_step, labeled_only=supervised_phase)
                    breakdown, plr = step_objective(
                        batch,
                        self.model,
                        config.variant,
                        config.tau,
                        config.lambda_u,
                        config.label_smoothing,
                        supervised_only=supervised_phase,
                    )
                    if not torch.isfinite(breakdown.total):
                        diagnostic = {
                            "step": global_step,
                            "epoch": epoch,
                            "lr": lr,
                            **breakdown.scalars(),
                        }
                        (self.run_dir / "abort.json").write_text(
                            json.dumps(diagnostic, sort_keys=True, indent=2)
                        )
                        raise TrainingAborted(diagnostic)

                    self.optimizer.zero_grad(set_to_none=True)
                    breakdown.total.backward()
                    if config.grad_clip > 0:
                        torch.nn.utils.clip_grad_norm_(
                            self.model.parameters(), config.grad_clip
                        )
                    self.optimizer.step()

                    sums["L"] += float(breakdown.total.detach())
                    sums["L_l"] += float(breakdown.labeled.detach())
                    if not supervised_phase:
                        sums["L_u"] += float(breakdown.unlabeled.detach())
                        if plr is not None:
                            sums["coverage"] += plr.coverage
                            c, r = self._pseudo_accuracy(plr, batch)
                            pseudo_correct += c
                            pseudo_retained += r
                        ssl_steps += 1
                    global_step += 1

                do_eval = (
                    self.eval_set is not None
                    and ((epoch + 1) % config.eval_every == 0 or epoch == config.total_epochs - 1)
                )
                eval_result = (
                    evaluate(self.model, self.eval_set, config.eval_batch)
                    if do_eval
                    else EvalResult(None, None, None)
                )
                if do_eval and eval_result.primary() > best_metric:
                    best_metric = eval_result.primary()

                record = MetricRecord(
                    step=global_step,
                    epoch=epoch,
                    lr=lr_at(global_step, config, spe),
                    L=sums["L"] / spe,
                    L_l=sums["L_l"] / spe,
                    L_u=(sums["L_u"] / ssl_steps) if ssl_steps else None,
                    coverage=(sums["coverage"] / ssl_steps) if ssl_steps else None,
                    pseudo_label_accuracy=(
                        pseudo_correct / pseudo_retained if pseudo_retained else None
                    ),
                    top1_T=eval_result.top1_T,
                    top1_C=eval_result.top1_C,
                    top1_combined=eval_result.top1_combined,
                    wall_time=time.perf_counter() - wall_start,
                )
                records.append(record)
                metrics_file.write(record.to_json() + "\n")
                metrics_file.flush()
                logger.info(
                    "epoch %d/%d lr %.2e L %.4f L_l %.4f L_u %s cov %s top1 %s",
                    epoch + 1, config.total_epochs, record.lr, record.L, record.L_l,
                    f"{record.L_u:.4f}" if record.L_u is not None else "-",
                    f"{record.coverage:.2f}" if record.coverage is not None else "-",
                    f"{eval_result.primary():.2f}" if do_eval else "-",
                )

                if do_eval:
                    ckpt = self.run_dir / f"epoch_{epoch:04d}.pt"
                    save_checkpoint(
                        ckpt, self.model, self.optimizer, config, epoch, global_step, best_metric
                    )
                    save_checkpoint(
                        self.run_dir / "last.pt",
                        self.model, self.optimizer, config, epoch, global_step, best_metric,
                    )

        return RunState(
            epoch=config.total_epochs - 1,
            global_step=global_step,
            model=self.model,
            optimizer=self.optimizer,
            best_metric=best_metric,
            records=records,
        )


def train(
    config: TrainConfig,
    split: DatasetSplit,
    model: torch.nn.Module,
    dataset: ImageDataset,
    eval_set: ImageDataset | None,
    run_dir: str | Path,
    resume_from: str | Path | None = None,
) -> RunState:
    """Run a full training loop (thin wrapper over :class:`Trainer`)."""
    return Trainer(config, model, dataset, split, eval_set, run_dir).train(resume_from)
