"""Seeded weak/strong augmentation of normalized image tensors.

Every application is a pure function of ``(image, seed)``: parameter draws
come from a generator built from the seed, never from global RNG state, so
results are reproducible regardless of worker parallelism or call order.

The weak policy is flip + padded crop. The strong policy samples a couple of
ops from a distortion pool, then color jitter, then random erasing. All ops
treat magnitude 0 as exact identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from ..exceptions import ContractError

# pool of strong distortions; each op maps (img, signed magnitude in [-1,1]) -> img
STRONG_OP_NAMES = (
    "translate_x",
    "translate_y",
    "shear_x",
    "shear_y",
    "brightness",
    "contrast",
    "saturation",
    "sharpness",
    "solarize",
)

_MAX_TRANSLATE_FRAC = 0.45  # of image side
_MAX_SHEAR = 0.3
_MAX_PHOTO = 0.9  # photometric blend factor at full magnitude
_SOLARIZE_CEILING = 2.0  # normalized-unit threshold that flips nothing at mag 0

# ITU-R 601 luma weights, used for the grayscale target of saturation
_LUMA = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class OpSpec:
    """One augmentation step and its parameter ranges."""

    name: str
    params: tuple[tuple[str, float], ...] = ()


@dataclass(frozen=True)
class AugmentationPolicy:
    """Ordered augmentation recipe of a given kind ('weak' or 'strong')."""

    kind: str
    op_list: tuple[OpSpec, ...] = field(default_factory=tuple)

    def param(self, op_name: str, key: str) -> float:
        for op in self.op_list:
            if op.name == op_name:
                return dict(op.params)[key]
        raise KeyError(f"{op_name}.{key} not in policy")


def weak_policy(flip_prob: float = 0.5, crop_padding: int = 4) -> AugmentationPolicy:
    return AugmentationPolicy(
        kind="weak",
        op_list=(
            OpSpec("hflip", (("prob", float(flip_prob)),)),
            OpSpec("pad_crop", (("padding", float(crop_padding)),)),
        ),
    )


def strong_policy(
    num_ops: int = 2,
    magnitude: float = 0.5,
    jitter_strength: float = 0.4,
    erase_prob: float = 0.25,
    flip_prob: float = 0.5,
    crop_padding: int = 4,
) -> AugmentationPolicy:
    """Student-side distortions layered on the flip+crop base transform,
    the usual arrangement for consistency training."""
    return AugmentationPolicy(
        kind="strong",
        op_list=(
            OpSpec("hflip", (("prob", float(flip_prob)),)),
            OpSpec("pad_crop", (("padding", float(crop_padding)),)),
            OpSpec("rand_ops", (("num_ops", float(num_ops)), ("magnitude", float(magnitude)))),
            OpSpec("color_jitter", (("strength", float(jitter_strength)),)),
            OpSpec("random_erasing", (("prob", float(erase_prob)), ("fill", 0.0))),
        ),
    )


def _check_image(image: torch.Tensor) -> None:
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise ContractError(f"expected (C,H,W) image, got shape {tuple(image.shape)}")


def _int_shift(image: torch.Tensor, pixels: int, dim: int) -> torch.Tensor:
    """Shift along a spatial dim, refilling the vacated band with edge values."""
    if pixels == 0:
        return image
    h = image.shape[dim]
    pixels = max(-h + 1, min(h - 1, pixels))
    pad = [0, 0, 0, 0]  # (left, right, top, bottom); dim 1 uses top/bottom slots
    if pixels > 0:
        pad[2 if dim == 1 else 0] = pixels
    else:
        pad[3 if dim == 1 else 1] = -pixels
    padded = F.pad(image.unsqueeze(0), (pad[0], pad[1], pad[2], pad[3]), mode="replicate")[0]
    if dim == 1:
        return padded[:, : h, :] if pixels > 0 else padded[:, -h:, :]
    return padded[:, :, : h] if pixels > 0 else padded[:, :, -h:]


def _shear(image: torch.Tensor, amount: float, horizontal: bool) -> torch.Tensor:
    """Integer-offset shear: each row (or column) shifts proportionally to its
    distance from the center, so zero amount is exact identity."""
    if amount == 0.0:
        return image
    c, h, w = image.shape
    out = image.clone()
    if horizontal:
        center = (h - 1) / 2
        for r in range(h):
            shift = int(round(amount * (r - center)))
            out[:, r : r + 1, :] = _int_shift(image[:, r : r + 1, :], shift, dim=2)
    else:
        center = (w - 1) / 2
        for col in range(w):
            shift = int(round(amount * (col - center)))
            out[:, :, col : col + 1] = _int_shift(image[:, :, col : col + 1], shift, dim=1)
    return out


def _blend(a: torch.Tensor, b: torch.Tensor, factor: float) -> torch.Tensor:
    # factor 0 -> a unchanged (returned as-is for exactness)
    if factor == 0.0:
        return a
    return a + factor * (b - a)


def _sharpness_target(image: torch.Tensor) -> torch.Tensor:
    kernel = torch.tensor([[1.0, 1.0, 1.0], [1.0, 5.0, 1.0], [1.0, 1.0, 1.0]]) / 13.0
    kernel = kernel.to(image.dtype).expand(image.shape[0], 1, 3, 3)
    blurred = F.conv2d(
        F.pad(image.unsqueeze(0), (1, 1, 1, 1), mode="replicate"),
        kernel,
        groups=image.shape[0],
    )[0]
    return blurred


def _apply_strong_op(image: torch.Tensor, name: str, signed_mag: float) -> torch.Tensor:
    if signed_mag == 0.0:
        return image
    side = image.shape[-1]
    if name == "translate_x":
        return _int_shift(image, int(round(signed_mag * _MAX_TRANSLATE_FRAC * side)), dim=2)
    if name == "translate_y":
        return _int_shift(image, int(round(signed_mag * _MAX_TRANSLATE_FRAC * side)), dim=1)
    if name == "shear_x":
        return _shear(image, signed_mag * _MAX_SHEAR, horizontal=True)
    if name == "shear_y":
        return _shear(image, signed_mag * _MAX_SHEAR, horizontal=False)
    if name == "brightness":
        return image * (1.0 + signed_mag * _MAX_PHOTO)
    if name == "contrast":
        return _blend(image, image.mean().expand_as(image), -signed_mag * _MAX_PHOTO)
    if name == "saturation":
        weights = torch.tensor(_LUMA, dtype=image.dtype).view(3, 1, 1)
        gray = (image * weights).sum(dim=0, keepdim=True).expand_as(image)
        return _blend(image, gray, -signed_mag * _MAX_PHOTO)
    if name == "sharpness":
        return _blend(image, _sharpness_target(image), signed_mag * _MAX_PHOTO)
    if name == "solarize":
        # invert values above a threshold that drops from the data ceiling
        # (flip nothing) toward 0 (flip everything bright) as |mag| grows
        threshold = (1.0 - abs(signed_mag)) * _SOLARIZE_CEILING
        return torch.where(image > threshold, -image, image)
    raise ContractError(f"unknown strong op '{name}'")


def _apply_hflip(image: torch.Tensor, prob: float, rng: np.random.Generator) -> torch.Tensor:
    if rng.uniform() < prob:
        return torch.flip(image, dims=[2])
    return image


def _apply_pad_crop(image: torch.Tensor, padding: int, rng: np.random.Generator) -> torch.Tensor:
    if padding <= 0:
        return image
    h, w = image.shape[1], image.shape[2]
    padded = F.pad(
        image.unsqueeze(0), (padding, padding, padding, padding), mode="reflect"
    )[0]
    dy = int(rng.integers(0, 2 * padding + 1))
    dx = int(rng.integers(0, 2 * padding + 1))
    return padded[:, dy : dy + h, dx : dx + w]


def _apply_rand_ops(
    image: torch.Tensor, num_ops: int, magnitude: float, rng: np.random.Generator
) -> torch.Tensor:
    for _ in range(num_ops):
        name = STRONG_OP_NAMES[int(rng.integers(0, len(STRONG_OP_NAMES)))]
        sign = 1.0 if rng.uniform() < 0.5 else -1.0
        image = _apply_strong_op(image, name, sign * magnitude)
    return image


def _apply_color_jitter(
    image: torch.Tensor, strength: float, rng: np.random.Generator
) -> torch.Tensor:
    if strength == 0.0:
        return image
    b, c, s = (float(rng.uniform(1.0 - strength, 1.0 + strength)) for _ in range(3))
    image = image * b
    image = _blend(image, image.mean().expand_as(image), 1.0 - c)
    weights = torch.tensor(_LUMA, dtype=image.dtype).view(3, 1, 1)
    gray = (image * weights).sum(dim=0, keepdim=True).expand_as(image)
    return _blend(image, gray, 1.0 - s)


def _apply_random_erasing(
    image: torch.Tensor, prob: float, fill: float, rng: np.random.Generator
) -> torch.Tensor:
    if rng.uniform() >= prob:
        return image
    _, h, w = image.shape
    area = h * w
    for _ in range(10):
        target = rng.uniform(0.02, 0.15) * area
        aspect = float(np.exp(rng.uniform(np.log(0.3), np.log(1.0 / 0.3))))
        eh = int(round(np.sqrt(target * aspect)))
        ew = int(round(np.sqrt(target / aspect)))
        if 0 < eh < h and 0 < ew < w:
            y = int(rng.integers(0, h - eh + 1))
            x = int(rng.integers(0, w - ew + 1))
            out = image.clone()
            out[:, y : y + eh, x : x + ew] = fill
            return out
    return image


def apply_policy(policy: AugmentationPolicy, image: torch.Tensor, seed) -> torch.Tensor:
    """Apply a policy to one (C,H,W) tensor with an explicit seed."""
    _check_image(image)
    rng = np.random.default_rng(seed)
    out = image
    for op in policy.op_list:
        params = dict(op.params)
        if op.name == "hflip":
            out = _apply_hflip(out, params["prob"], rng)
        elif op.name == "pad_crop":
            out = _apply_pad_crop(out, int(params["padding"]), rng)
        elif op.name == "rand_ops":
            out = _apply_rand_ops(out, int(params["num_ops"]), params["magnitude"], rng)
        elif op.name == "color_jitter":
            out = _apply_color_jitter(out, params["strength"], rng)
        elif op.name == "random_erasing":
            out = _apply_random_erasing(out, params["prob"], params["fill"], rng)
        else:
            raise ContractError(f"unknown op '{op.name}' in {policy.kind} policy")
    return out


def weak_augment(image: torch.Tensor, seed, policy: AugmentationPolicy | None = None) -> torch.Tensor:
    return apply_policy(policy or weak_policy(), image, seed)


def strong_augment(image: torch.Tensor, seed, policy: AugmentationPolicy | None = None) -> torch.Tensor:
    return apply_policy(policy or strong_policy(), image, seed)


def derive_seed(*parts: int) -> np.random.SeedSequence:
    """Stable per-example seed from structured parts (base, step, role, index)."""
    return np.random.SeedSequence([int(p) & 0xFFFFFFFF for p in parts])
