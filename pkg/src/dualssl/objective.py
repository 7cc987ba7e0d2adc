"""Semi-supervised training objective.

The objective combines a supervised term over labeled examples (strong
views) with a confidence-gated term over unlabeled examples: a gradient-
isolated teacher pass on weak views produces per-example probabilities, the
argmax becomes a hard pseudo label, and only examples whose max probability
reaches the threshold contribute to the unlabeled loss computed on strong
views. Method variants differ in which stream(s) exist, which stream
teaches, and whether the streams exchange features.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .data.batches import MixedBatch
from .exceptions import ConfigurationError, ContractError
from .models.dual import DualLogits, DualStreamModel

VARIANT_NAMES = ("sup_only", "vanilla_cnn", "vanilla_vit", "conv_labeled", "semiformer")
PSEUDO_SOURCES = ("cnn", "transformer", "fused_average")

_PROB_EPS = 1e-12
_PROB_SUM_TOL = 1e-5


@dataclass(frozen=True)
class MethodVariant:
    """A training recipe: which streams train, and who teaches whom."""

    name: str
    pseudo_source: str = "cnn"

    def __post_init__(self):
        if self.name not in VARIANT_NAMES:
            raise ConfigurationError(f"unknown variant '{self.name}'")
        if self.pseudo_source not in PSEUDO_SOURCES:
            raise ConfigurationError(f"unknown pseudo source '{self.pseudo_source}'")
        # vanilla variants are their own teacher; conv_labeled teaches from the CNN
        forced = {"vanilla_cnn": "cnn", "vanilla_vit": "transformer", "conv_labeled": "cnn"}
        if self.name in forced and self.pseudo_source != forced[self.name]:
            raise ConfigurationError(
                f"variant '{self.name}' requires pseudo_source '{forced[self.name]}'"
            )

    @property
    def uses_unlabeled(self) -> bool:
        return self.name != "sup_only"


@dataclass
class PseudoLabelResult:
    """Teacher outputs for one unlabeled batch.

    ``hard_labels[j]`` is the one-hot argmax of ``probs[j]``; ``mask[j]`` is
    true iff the max probability reaches ``tau``. Produced without gradient
    tracking, so no loss can backpropagate into the teacher pass.
    """

    probs: torch.Tensor  # (n_u, K)
    hard_labels: torch.Tensor  # (n_u, K) one-hot
    mask: torch.Tensor  # (n_u,) bool
    tau: float
    coverage: float

    @classmethod
    def from_probs(cls, probs: torch.Tensor, tau: float) -> "PseudoLabelResult":
        if not (0.0 < tau < 1.0):
            raise ContractError(f"tau must be in (0,1), got {tau}")
        probs = probs.detach()
        max_prob, argmax = probs.max(dim=-1)
        hard = torch.zeros_like(probs)
        hard[torch.arange(probs.shape[0]), argmax] = 1.0
        mask = max_prob >= tau
        coverage = float(mask.to(torch.float64).mean()) if probs.shape[0] else 0.0
        return cls(probs=probs, hard_labels=hard, mask=mask, tau=tau, coverage=coverage)

    @property
    def retained_count(self) -> int:
        return int(self.mask.sum())


@dataclass
class LossBreakdown:
    """Component losses of one step. ``total`` keeps the autograd graph."""

    labeled: torch.Tensor
    unlabeled: torch.Tensor
    total: torch.Tensor
    per_stream: dict[str, float] = field(default_factory=dict)
    lambda_u: float = 0.0
    retained_count: int = 0

    def scalars(self) -> dict[str, float]:
        out = {
            "L_l": float(self.labeled.detach()),
            "L_u": float(self.unlabeled.detach()),
            "L": float(self.total.detach()),
            "lambda": self.lambda_u,
            "retained_count": self.retained_count,
        }
        out.update(self.per_stream)
        return out


def cross_entropy(target: torch.Tensor, probs: torch.Tensor) -> torch.Tensor:
    """Negative log-likelihood of ``probs`` under a (one-hot or smoothed)
    target distribution. Accepts (K,) or batched (n, K); reduces over the
    class dimension only."""
    if target.shape != probs.shape:
        raise ContractError(f"target shape {tuple(target.shape)} != probs {tuple(probs.shape)}")
    sums = probs.sum(dim=-1)
    if not torch.all((sums - 1.0).abs() <= _PROB_SUM_TOL):
        raise ContractError("probabilities do not sum to 1 within tolerance")
    logp = probs.clamp(min=_PROB_EPS, max=1.0).log()
    return -(target * logp).sum(dim=-1)


@contextmanager
def batchnorm_eval(model: nn.Module):
    """Temporarily run batch-norm layers on running statistics."""
    bn_layers = [m for m in model.modules() if isinstance(m, nn.modules.batchnorm._BatchNorm)]
    states = [m.training for m in bn_layers]
    for m in bn_layers:
        m.eval()
    try:
        yield
    finally:
        for m, was_training in zip(bn_layers, states):
            m.train(was_training)


def stream_logits(model: nn.Module, images: torch.Tensor) -> dict[str, torch.Tensor]:
    """Run a model and key its logits by stream: 'T' and/or 'C'."""
    out = model(images)
    if isinstance(out, DualLogits):
        return {"T": out.z_T, "C": out.z_C}
    kinds = getattr(model, "stream_kinds", None)
    if kinds is None or len(kinds) != 1:
        raise ConfigurationError(
            "single-output models must declare stream_kinds = ('T',) or ('C',)"
        )
    return {kinds[0]: out}


def labeled_loss(
    batch: MixedBatch, model: nn.Module, label_smoothing: float = 0.0
) -> tuple[torch.Tensor, dict[str, float]]:
    """Mean cross-entropy of each stream on strong labeled views, summed
    across streams."""
    if batch.n_labeled == 0:
        raise ContractError("labeled batch is empty")
    target = batch.labels
    if label_smoothing > 0.0:
        k = target.shape[-1]
        target = target * (1.0 - label_smoothing) + label_smoothing / k
    logits = stream_logits(model, batch.labeled_images_strong)
    per_stream: dict[str, float] = {}
    total = None
    for kind in ("T", "C"):
        if kind not in logits:
            per_stream[f"L_l_{kind}"] = 0.0
            continue
        term = cross_entropy(target, torch.softmax(logits[kind], dim=-1)).mean()
        per_stream[f"L_l_{kind}"] = float(term.detach())
        total = term if total is None else total + term
    if total is None:
        raise ConfigurationError("model exposes no streams")
    return total, per_stream


def generate_pseudo_labels(
    unlabeled_weak: torch.Tensor,
    model: nn.Module,
    source: str,
    tau: float,
) -> PseudoLabelResult:
    """Gradient-isolated teacher pass on weak views.

    Batch-norm layers see running statistics during this pass so teacher
    probabilities do not depend on batch composition.
    """
    if source not in PSEUDO_SOURCES:
        raise ConfigurationError(f"unknown pseudo source '{source}'")
    with torch.no_grad(), batchnorm_eval(model):
        logits = stream_logits(model, unlabeled_weak)
        needed = {"cnn": ("C",), "transformer": ("T",), "fused_average": ("T", "C")}[source]
        for kind in needed:
            if kind not in logits:
                raise ConfigurationError(
                    f"pseudo source '{source}' needs stream '{kind}' which the model lacks"
                )
        if source == "cnn":
            probs = torch.softmax(logits["C"], dim=-1)
        elif source == "transformer":
            probs = torch.softmax(logits["T"], dim=-1)
        else:
            probs = 0.5 * (
                torch.softmax(logits["T"], dim=-1) + torch.softmax(logits["C"], dim=-1)
            )
    return PseudoLabelResult.from_probs(probs, tau)


def unlabeled_loss(
    batch: MixedBatch, plr: PseudoLabelResult, model: nn.Module
) -> tuple[torch.Tensor, dict[str, float]]:
    """Confidence-masked cross-entropy of each stream on strong unlabeled
    views against hard pseudo labels, normalized by the full unlabeled count."""
    n_u = batch.n_unlabeled
    if n_u == 0 or plr.retained_count == 0:
        zero = torch.zeros(())
        return zero, {"L_u_T": 0.0, "L_u_C": 0.0}
    gate = plr.mask.to(batch.unlabeled_images_strong.dtype)
    logits = stream_logits(model, batch.unlabeled_images_strong)
    per_stream: dict[str, float] = {}
    total = None
    for kind in ("T", "C"):
        if kind not in logits:
            per_stream[f"L_u_{kind}"] = 0.0
            continue
        ce = cross_entropy(plr.hard_labels, torch.softmax(logits[kind], dim=-1))
        term = (ce * gate).sum() / n_u
        per_stream[f"L_u_{kind}"] = float(term.detach())
        total = term if total is None else total + term
    if total is None:
        raise ConfigurationError("model exposes no streams")
    return total, per_stream


def total_loss(
    labeled: torch.Tensor,
    unlabeled: torch.Tensor,
    lambda_u: float,
    per_stream: dict[str, float] | None = None,
    retained_count: int = 0,
) -> LossBreakdown:
    if lambda_u < 0:
        raise ContractError(f"lambda must be >= 0, got {lambda_u}")
    return LossBreakdown(
        labeled=labeled,
        unlabeled=unlabeled,
        total=labeled + lambda_u * unlabeled,
        per_stream=dict(per_stream or {}),
        lambda_u=lambda_u,
        retained_count=retained_count,
    )


def validate_variant_model(variant: MethodVariant, model: nn.Module) -> None:
    """Reject variant/model pairings at build time, not step time."""
    kinds = ("T", "C") if isinstance(model, DualStreamModel) else tuple(
        getattr(model, "stream_kinds", ())
    )
    is_dual = set(kinds) == {"T", "C"}
    has_fusion = isinstance(model, DualStreamModel) and len(model.fusions) > 0
    name = variant.name
    if name == "vanilla_cnn" and kinds != ("C",):
        raise ConfigurationError("vanilla_cnn requires a conv-only model")
    if name == "vanilla_vit" and kinds != ("T",):
        raise ConfigurationError("vanilla_vit requires a transformer-only model")
    if name == "conv_labeled":
        if not is_dual:
            raise ConfigurationError("conv_labeled requires both streams")
        if has_fusion:
            raise ConfigurationError("conv_labeled must not have fusion points")
    if name == "semiformer" and not is_dual:
        raise ConfigurationError("semiformer requires a dual-stream model")


def step_objective(
    batch: MixedBatch,
    model: nn.Module,
    variant: MethodVariant,
    tau: float,
    lambda_u: float,
    label_smoothing: float = 0.0,
    supervised_only: bool = False,
) -> tuple[LossBreakdown, PseudoLabelResult | None]:
    """One step's full objective for the given method variant.

    ``supervised_only`` suppresses the unlabeled term regardless of variant
    (used by the labeled-only pretraining phase).
    """
    validate_variant_model(variant, model)
    l_l, per_stream = labeled_loss(batch, model, label_smoothing)
    use_unlabeled = (
        variant.uses_unlabeled and not supervised_only and batch.n_unlabeled > 0
    )
    if not use_unlabeled:
        per_stream.update({"L_u_T": 0.0, "L_u_C": 0.0})
        breakdown = total_loss(l_l, torch.zeros(()), 0.0, per_stream, 0)
        return breakdown, None

    plr = generate_pseudo_labels(
        batch.unlabeled_images_weak, model, variant.pseudo_source, tau
    )
    l_u, per_stream_u = unlabeled_loss(batch, plr, model)
    per_stream.update(per_stream_u)
    breakdown = total_loss(l_l, l_u, lambda_u, per_stream, plr.retained_count)
    return breakdown, plr
