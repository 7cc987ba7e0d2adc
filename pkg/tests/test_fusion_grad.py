"""Finite-difference gradient checks for both fusion directions.

The oracle is independent of autograd: central differences of a scalar
probe function, evaluated at double precision, compared element-wise
against backpropagated gradients.
"""

import itertools

import pytest
import torch

from dualssl.models import CrossStreamFusion

REL_TOL = 1e-4
FD_STEP = 1e-6


def central_difference(fn, tensor: torch.Tensor, h: float = FD_STEP) -> torch.Tensor:
    """d fn / d tensor, one element at a time, via (f(x+h) - f(x-h)) / 2h."""
    grad = torch.zeros_like(tensor)
    flat = tensor.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + h
        plus = fn()
        flat[i] = orig - h
        minus = fn()
        flat[i] = orig
        gflat[i] = (plus - minus) / (2 * h)
    return grad


def max_rel_error(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    scale = torch.maximum(
        analytic.abs().maximum(numeric.abs()), torch.tensor(1e-3, dtype=analytic.dtype)
    )
    return float(((analytic - numeric).abs() / scale).max())


def check_direction(fusion: CrossStreamFusion, direction: str, tokens, conv, probe):
    """Compare autograd gradients against central differences for one
    fusion direction, over the inputs and every parameter."""

    def forward() -> float:
        if direction == "c2t":
            out = fusion.fuse_c_to_t(tokens, conv)
        else:
            out = fusion.fuse_t_to_c(conv, tokens)
        return float((out * probe).sum())

    for t in (tokens, conv):
        if t.grad is not None:
            t.grad = None
    for p in fusion.parameters():
        p.grad = None

    out = fusion.fuse_c_to_t(tokens, conv) if direction == "c2t" else fusion.fuse_t_to_c(conv, tokens)
    (out * probe).sum().backward()

    errors = {}
    with torch.no_grad():
        for name, tensor in [("tokens", tokens), ("conv", conv)]:
            numeric = central_difference(forward, tensor.data)
            analytic = tensor.grad if tensor.grad is not None else torch.zeros_like(tensor)
            errors[name] = max_rel_error(analytic, numeric)
        for name, param in fusion.named_parameters():
            numeric = central_difference(forward, param.data)
            analytic = param.grad if param.grad is not None else torch.zeros_like(param)
            errors[name] = max_rel_error(analytic, numeric)
    return errors


def build_case(token_grid: int, conv_grid: int, seed: int):
    torch.manual_seed(seed)
    fusion = CrossStreamFusion(
        token_dim=8, conv_dim=6, token_grid=token_grid, conv_grid=conv_grid
    ).double()
    fusion.train()
    tokens = torch.randn(2, 1 + token_grid**2, 8, dtype=torch.float64, requires_grad=True)
    conv = torch.randn(2, 6, conv_grid, conv_grid, dtype=torch.float64, requires_grad=True)
    return fusion, tokens, conv


@pytest.mark.parametrize(
    "token_grid,conv_grid,direction",
    list(itertools.product((2,), (2, 4), ("c2t", "t2c"))),
)
def test_fusion_gradients_match_finite_differences(token_grid, conv_grid, direction):
    fusion, tokens, conv = build_case(token_grid, conv_grid, seed=99)
    shape = tokens.shape if direction == "c2t" else conv.shape
    probe = torch.randn(*shape, dtype=torch.float64)
    errors = check_direction(fusion, direction, tokens, conv, probe)
    worst = max(errors.values())
    assert worst < REL_TOL, f"max relative error {worst:.2e}: {errors}"


def test_gradients_flow_to_both_streams_through_full_exchange():
    fusion, tokens, conv = build_case(2, 4, seed=5)
    new_tokens, new_conv = fusion(tokens, conv)
    (new_tokens.sum() + new_conv.sum()).backward()
    assert tokens.grad is not None and tokens.grad.abs().sum() > 0
    assert conv.grad is not None and conv.grad.abs().sum() > 0
