"""Model streams, fusion geometry, dual forward, combined inference."""

import numpy as np
import pytest
import torch

from conftest import TINY_C, TINY_T, tiny_dual
from dualssl.exceptions import ConfigurationError, NumericalError
from dualssl.models import (
    ConvStream,
    ConvStreamConfig,
    CrossStreamFusion,
    DualLogits,
    DualStreamModel,
    FusionPoint,
    TransformerStream,
    TransformerStreamConfig,
    combined_predict,
    default_fusion_points,
)


class TestConfigs:
    def test_patch_divisibility_enforced(self):
        with pytest.raises(ConfigurationError):
            TransformerStreamConfig(patch_size=5, image_size=32)

    def test_head_divisibility_enforced(self):
        with pytest.raises(ConfigurationError):
            TransformerStreamConfig(embed_dim=30, heads=4)

    def test_downsample_consistency_enforced(self):
        with pytest.raises(ConfigurationError):
            ConvStreamConfig(
                stage_channels=(8,), stage_depths=(1,), downsample_factors=(3,), image_size=32
            )

    def test_stage_grid(self):
        cfg = ConvStreamConfig(
            stage_channels=(8, 16, 32), stage_depths=(1, 1, 1), downsample_factors=(1, 2, 2)
        )
        assert [cfg.stage_grid(i) for i in range(3)] == [32, 16, 8]


class TestStreams:
    def test_transformer_shapes(self):
        model = TransformerStream(TINY_T)
        x = torch.randn(3, 3, 32, 32)
        tokens = model.embed(x)
        assert tokens.shape == (3, 1 + TINY_T.grid**2, TINY_T.embed_dim)
        assert model(x).shape == (3, 10)

    def test_conv_shapes(self):
        model = ConvStream(TINY_C)
        assert model(torch.randn(3, 3, 32, 32)).shape == (3, 10)


class TestFusionModule:
    def test_grid_divisibility_rejected_at_build(self):
        with pytest.raises(ConfigurationError):
            CrossStreamFusion(token_dim=8, conv_dim=4, token_grid=3, conv_grid=8)

    def test_shape_preservation_grid(self):
        # exhaustive over a grid of valid geometries
        for token_grid in (2, 4):
            for ratio in (1, 2, 4):
                fusion = CrossStreamFusion(
                    token_dim=6, conv_dim=5, token_grid=token_grid,
                    conv_grid=token_grid * ratio,
                )
                tokens = torch.randn(2, 1 + token_grid**2, 6)
                conv = torch.randn(2, 5, token_grid * ratio, token_grid * ratio)
                new_tokens, new_conv = fusion(tokens, conv)
                assert new_tokens.shape == tokens.shape
                assert new_conv.shape == conv.shape

    def test_zero_init_is_identity(self):
        fusion = CrossStreamFusion(token_dim=6, conv_dim=5, token_grid=2, conv_grid=4)
        fusion.zero_init_()
        tokens = torch.randn(2, 5, 6)
        conv = torch.randn(2, 5, 4, 4)
        new_tokens, new_conv = fusion(tokens, conv)
        assert torch.equal(new_tokens, tokens)
        assert torch.equal(new_conv, conv)

    def test_constant_conv_map_gives_identical_token_deltas(self):
        # closed-form oracle: for an all-ones conv map, align output is
        # W.sum + b everywhere, pooling preserves it, and layernorm of that
        # constant-per-channel vector is computable by hand
        fusion = CrossStreamFusion(token_dim=6, conv_dim=5, token_grid=2, conv_grid=4)
        tokens = torch.randn(1, 5, 6)
        conv = torch.ones(1, 5, 4, 4)
        with torch.no_grad():
            new_tokens, _ = fusion(tokens, conv)
            deltas = (new_tokens - tokens)[0, 1:]
            w = fusion.align_c2t.weight.squeeze(-1).squeeze(-1).numpy()
            b = fusion.align_c2t.bias.numpy()
        v = w.sum(axis=1) + b
        ln = (v - v.mean()) / np.sqrt(v.var() + 1e-5)
        expected = ln * fusion.norm_c2t.weight.detach().numpy() + fusion.norm_c2t.bias.detach().numpy()
        for i in range(4):
            np.testing.assert_allclose(deltas[i].numpy(), expected, rtol=1e-5, atol=1e-6)
        # class token untouched
        assert torch.equal(new_tokens[0, 0], tokens[0, 0])

    def test_single_token_broadcasts_over_whole_map(self):
        fusion = CrossStreamFusion(token_dim=6, conv_dim=5, token_grid=1, conv_grid=4)
        fusion.eval()  # running stats so the normal path is per-position affine
        tokens = torch.randn(1, 2, 6)
        conv = torch.zeros(1, 5, 4, 4)
        with torch.no_grad():
            _, new_conv = fusion(tokens, conv)
        first = new_conv[0, :, 0, 0]
        for y in range(4):
            for x in range(4):
                assert torch.equal(new_conv[0, :, y, x], first)

    def test_nearest_upsample_replicates_value(self):
        # a 1x1 token value v lands on every cell of its 2x2 sub-region
        fusion = CrossStreamFusion(token_dim=3, conv_dim=3, token_grid=2, conv_grid=4)
        with torch.no_grad():
            fusion.align_t2c.weight.zero_()
            fusion.align_t2c.bias.zero_()
            for i in range(3):
                fusion.align_t2c.weight[i, i, 0, 0] = 1.0
        tokens = torch.zeros(1, 5, 3)
        tokens[0, 1] = torch.tensor([1.0, 2.0, 3.0])  # top-left patch token
        patch = tokens[:, 1:].transpose(1, 2).reshape(1, 3, 2, 2)
        aligned = fusion.align_t2c(patch)
        up = torch.nn.functional.interpolate(aligned, scale_factor=2, mode="nearest")
        for y in range(2):
            for x in range(2):
                assert torch.equal(up[0, :, y, x], torch.tensor([1.0, 2.0, 3.0]))
        assert torch.equal(up[0, :, 0, 3], torch.zeros(3))


class TestDualModel:
    def test_shapes_and_batch(self):
        model = tiny_dual()
        out = model(torch.randn(5, 3, 32, 32))
        assert isinstance(out, DualLogits)
        assert out.z_T.shape == (5, 10)
        assert out.z_C.shape == (5, 10)

    def test_zero_fusion_points_matches_independent_streams(self):
        model = DualStreamModel(TINY_T, TINY_C, fusion_points=[])
        model.eval()
        x = torch.randn(2, 3, 32, 32)
        with torch.no_grad():
            out = model(x)
            z_t = model.transformer(x)
            z_c = model.conv(x)
        assert torch.equal(out.z_T, z_t)
        assert torch.equal(out.z_C, z_c)

    def test_zero_init_fusion_matches_independent_streams(self):
        model = tiny_dual(zero_init_fusion=True)
        model.eval()
        x = torch.randn(2, 3, 32, 32)
        with torch.no_grad():
            out = model(x)
            z_t = model.transformer(x)
            z_c = model.conv(x)
        assert torch.equal(out.z_T, z_t)
        assert torch.equal(out.z_C, z_c)

    def test_deterministic_forward(self):
        model = tiny_dual()
        model.eval()
        x = torch.randn(2, 3, 32, 32)
        with torch.no_grad():
            a = model(x)
            b = model(x)
        assert torch.equal(a.z_T, b.z_T)
        assert torch.equal(a.z_C, b.z_C)

    def test_bad_fusion_indices_rejected_at_build(self):
        with pytest.raises(ConfigurationError):
            DualStreamModel(TINY_T, TINY_C, [FusionPoint(99, 0, 16)])
        with pytest.raises(ConfigurationError):
            DualStreamModel(TINY_T, TINY_C, [FusionPoint(1, 5, 16)])
        with pytest.raises(ConfigurationError):
            DualStreamModel(TINY_T, TINY_C, [FusionPoint(1, 0, 999)])

    def test_indivisible_grid_rejected_at_build(self):
        t = TransformerStreamConfig(patch_size=4, embed_dim=16, depth=2, heads=2)  # grid 8
        c = ConvStreamConfig(
            stage_channels=(8,), stage_depths=(1,), downsample_factors=(8,)
        )  # grid 4 < 8
        with pytest.raises(ConfigurationError):
            DualStreamModel(t, c, [FusionPoint(1, 0, 8)])

    def test_class_count_mismatch_rejected(self):
        c_bad = ConvStreamConfig(
            stage_channels=(16, 32), stage_depths=(1, 1),
            downsample_factors=(2, 2), num_classes=7,
        )
        with pytest.raises(ConfigurationError):
            DualStreamModel(TINY_T, c_bad)

    def test_nonfinite_activation_names_layer(self):
        model = tiny_dual()
        with torch.no_grad():
            model.conv.stem[0].weight.fill_(float("nan"))
        with pytest.raises(NumericalError) as err:
            model(torch.randn(1, 3, 32, 32), check_finite=True)
        assert "conv.stem" in err.value.layer_id

    def test_sequential_fusion_differs_from_symmetric(self):
        torch.manual_seed(0)
        sym = tiny_dual()
        seq = tiny_dual(sequential_fusion=True)
        seq.load_state_dict(sym.state_dict())
        sym.eval(), seq.eval()
        x = torch.randn(2, 3, 32, 32)
        with torch.no_grad():
            a, b = sym(x), seq(x)
        assert not torch.equal(a.z_C, b.z_C)

    def test_default_fusion_points_deep_model(self):
        t = TransformerStreamConfig(depth=6)
        c = ConvStreamConfig()
        points = default_fusion_points(t, c)
        assert [(p.transformer_block_index, p.conv_stage_index) for p in points] == [
            (2, 0), (4, 1), (6, 2),
        ]


class TestCombinedPredict:
    def test_identical_streams(self):
        z = torch.randn(4, 10)
        probs = combined_predict(DualLogits(z, z.clone()))
        np.testing.assert_allclose(probs.numpy(), torch.softmax(z, -1).numpy(), atol=1e-7)

    def test_two_class_symmetry(self):
        big = torch.tensor([[60.0, -60.0]])
        probs = combined_predict(DualLogits(big, -big))
        np.testing.assert_allclose(probs.numpy(), [[0.5, 0.5]], atol=1e-12)

    def test_sums_to_one_over_random_draws(self):
        rng = torch.Generator().manual_seed(0)
        z_t = torch.randn(1000, 10, generator=rng) * 5
        z_c = torch.randn(1000, 10, generator=rng) * 5
        probs = combined_predict(DualLogits(z_t, z_c))
        assert torch.all((probs.sum(-1) - 1.0).abs() <= 1e-6)

    def test_argmax_invariant_under_shared_permutation(self):
        rng = torch.Generator().manual_seed(3)
        z_t = torch.randn(64, 10, generator=rng)
        z_c = torch.randn(64, 10, generator=rng)
        perm = torch.randperm(10, generator=rng)
        base = combined_predict(DualLogits(z_t, z_c))
        permuted = combined_predict(DualLogits(z_t[:, perm], z_c[:, perm]))
        # identical up to summation order inside softmax normalization
        np.testing.assert_allclose(permuted.numpy(), base[:, perm].numpy(), atol=1e-7)
        assert torch.equal(perm[permuted.argmax(-1)], base.argmax(-1))
