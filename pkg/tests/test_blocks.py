import numpy as np
import pytest
import torch
import torch.nn as nn

from progsteg.blocks import (
    ConvStack,
    DenseBlock,
    DenseBlockConfig,
    Downsample,
    InceptionBlock,
    Pmcb,
    PmcbConfig,
    ResidualBlock,
    Transition,
    Upsample,
    apportion,
)
from progsteg.errors import OddDimension, ShapeMismatch

from .oracles import central_difference_grad, dilated_branch_support


def make_support_transparent(module: nn.Module):
    """All-ones convs, zero biases, identity batch norm: positive impulse
    responses whose support equals the kernel's geometric reach."""
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
                m.weight.fill_(1.0)
                if m.bias is not None:
                    m.bias.zero_()
            elif isinstance(m, nn.BatchNorm2d):
                m.weight.fill_(1.0)
                m.bias.zero_()
                m.running_mean.zero_()
                m.running_var.fill_(1.0)
    module.eval()
    return module


class TestApportion:
    def test_table_totals(self):
        assert apportion(192, (1, 2, 1, 1, 1)) == [32, 64, 32, 32, 32]
        assert apportion(288, (1, 2, 1, 1, 1)) == [48, 96, 48, 48, 48]

    def test_sums_exact_and_positive(self):
        for total in (5, 7, 64, 192, 288, 512):
            parts = apportion(total, (1, 2, 1, 1, 1))
            assert sum(parts) == total
            assert min(parts) >= 1


class TestPmcb:
    def test_table_output_widths_at_full_resolution(self):
        block = Pmcb(PmcbConfig.balanced(32, 192, (3, 6)))
        out = block(torch.rand(32, 128, 128))
        assert out.shape == (192, 128, 128)

    def test_second_stage_width(self):
        block = Pmcb(PmcbConfig.balanced(192, 288, (6, 12)))
        out = block(torch.rand(192, 128, 128))
        assert out.shape == (288, 128, 128)

    @pytest.mark.parametrize("hw", [(16, 16), (24, 40), (33, 17)])
    def test_spatial_preservation(self, hw):
        block = Pmcb(PmcbConfig.balanced(6, 10, (2, 4)))
        out = block(torch.rand(6, *hw))
        assert out.shape == (10, *hw)

    def test_wrong_channel_count(self):
        block = Pmcb(PmcbConfig.balanced(8, 16, (3, 6)))
        with pytest.raises(ShapeMismatch):
            block(torch.rand(7, 16, 16))

    def test_dilation_order_validated(self):
        with pytest.raises(ValueError):
            PmcbConfig.balanced(8, 16, (6, 3))

    def test_dilated_branch_impulse_support_exact(self):
        cfg = PmcbConfig.balanced(4, 15, (3, 6))
        block = make_support_transparent(Pmcb(cfg))
        x = torch.zeros(4, 17, 17)
        x[:, 8, 8] = 1.0
        for branch, dilation in ((block.branch_dil1, 3), (block.branch_dil2, 6)):
            out = branch(x.unsqueeze(0)).squeeze(0)
            got = {tuple(p) for p in (out.abs().sum(0) > 0).nonzero().tolist()}
            assert got == dilated_branch_support((8, 8), dilation, (17, 17))

    def test_whole_block_chebyshev_bound(self):
        cfg = PmcbConfig.balanced(4, 15, (3, 6))
        block = make_support_transparent(Pmcb(cfg))
        x = torch.zeros(4, 32, 32)
        x[:, 16, 16] = 1.0
        out = block(x)
        mask = out.abs().sum(0) > 0
        rows, cols = torch.meshgrid(torch.arange(32), torch.arange(32), indexing="ij")
        cheb = torch.maximum((rows - 16).abs(), (cols - 16).abs())
        assert not mask[cheb > 6].any()


class TestInceptionBlock:
    def test_no_dilated_paths_and_width(self):
        block = InceptionBlock(8, 20)
        assert not any(
            getattr(m, "dilation", (1, 1)) not in ((1, 1), 1) for m in block.modules()
        )
        assert block(torch.rand(8, 16, 16)).shape == (20, 16, 16)


class TestDenseBlock:
    def test_channel_law_examples(self):
        block = DenseBlock(DenseBlockConfig(32, growth=16))
        assert block(torch.rand(32, 32, 32)).shape == (96, 32, 32)
        block = DenseBlock(DenseBlockConfig(192, growth=16))
        assert block(torch.rand(192, 16, 16)).shape == (256, 16, 16)

    @pytest.mark.parametrize("cin,growth", [(4, 4), (10, 3), (7, 16)])
    def test_channel_law_general(self, cin, growth):
        block = DenseBlock(DenseBlockConfig(cin, growth=growth))
        assert block(torch.rand(cin, 8, 8)).shape[0] == cin + 4 * growth

    def test_inference_determinism_with_dropout(self):
        block = DenseBlock(DenseBlockConfig(8, growth=4, dropout_rate=0.5))
        block.eval()
        x = torch.rand(8, 12, 12)
        assert torch.equal(block(x), block(x))

    def test_wrong_channels(self):
        block = DenseBlock(DenseBlockConfig(8, growth=4))
        with pytest.raises(ShapeMismatch):
            block(torch.rand(9, 8, 8))


class TestResidualBlock:
    def test_shape_preserved(self):
        block = ResidualBlock(32)
        assert block(torch.rand(32, 16, 16)).shape == (32, 16, 16)

    def test_identity_under_zeroed_path(self):
        block = ResidualBlock(8)
        with torch.no_grad():
            for m in block.modules():
                if isinstance(m, (nn.Conv2d, nn.BatchNorm2d)):
                    m.weight.zero_()
                    if m.bias is not None:
                        m.bias.zero_()
        block.eval()
        x = torch.rand(8, 12, 12)
        assert torch.equal(block(x), x)

    def test_identity_gradient_contribution(self):
        # with the residual path zeroed the block is the identity, so the
        # finite-difference gradient of sum(y) is exactly one everywhere
        block = ResidualBlock(2).double()
        with torch.no_grad():
            for m in block.modules():
                if isinstance(m, (nn.Conv2d, nn.BatchNorm2d)):
                    m.weight.zero_()
                    if m.bias is not None:
                        m.bias.zero_()
        block.eval()
        x = torch.rand(2, 5, 5, dtype=torch.float64)
        grad = central_difference_grad(lambda t: block(t).sum(), x)
        assert torch.allclose(grad, torch.ones_like(grad), atol=1e-6)

    def test_projection_skip_changes_channels(self):
        block = ResidualBlock(3, 8)
        assert block(torch.rand(3, 16, 16)).shape == (8, 16, 16)


class TestResampling:
    def test_downsample_halves(self):
        down = Downsample(96, 64)
        assert down(torch.rand(96, 128, 128)).shape == (64, 64, 64)
        assert down(torch.rand(96, 64, 64)).shape == (64, 32, 32)

    def test_downsample_rejects_odd(self):
        down = Downsample(4, 4)
        with pytest.raises(OddDimension):
            down(torch.rand(4, 63, 64))

    def test_upsample_doubles(self):
        up = Upsample(8, 4)
        assert up(torch.rand(8, 16, 16)).shape == (4, 32, 32)
        assert up(torch.rand(8, 64, 64)).shape == (4, 128, 128)

    def test_down_then_up_restores_resolution(self):
        down, up = Downsample(4, 6), Upsample(6, 4)
        assert up(down(torch.rand(4, 128, 128))).shape[-2:] == (128, 128)


class TestTransition:
    def test_channel_projection(self):
        t = Transition(512, 256)
        assert t(torch.rand(512, 16, 16)).shape == (256, 16, 16)
        t = Transition(288, 128)
        assert t(torch.rand(288, 32, 32)).shape == (128, 32, 32)

    def test_same_channels_keeps_shape(self):
        t = Transition(16, 16)
        assert t(torch.rand(16, 8, 8)).shape == (16, 8, 8)


class TestConvStack:
    def test_matched_output_channels(self):
        stack = ConvStack(8, 24, depth=4)
        assert stack(torch.rand(8, 16, 16)).shape == (24, 16, 16)
        assert sum(isinstance(m, ResidualBlock) for m in stack.modules()) == 3


class TestDifferentiability:
    @pytest.mark.parametrize(
        "factory",
        [
            lambda: Pmcb(PmcbConfig.balanced(2, 8, (2, 3))),
            lambda: DenseBlock(DenseBlockConfig(2, growth=2, dropout_rate=0.0)),
            lambda: ResidualBlock(2),
            lambda: Downsample(2, 3),
            lambda: Upsample(2, 3),
            lambda: Transition(2, 3),
        ],
        ids=["pmcb", "dense", "residual", "down", "up", "transition"],
    )
    def test_blocks_match_finite_differences(self, factory):
        torch.manual_seed(0)
        block = factory().double().eval()
        x = torch.rand(2, 8, 8, dtype=torch.float64)

        def fn(t):
            return block(t).sum()

        xg = x.clone().requires_grad_(True)
        block(xg).sum().backward()
        numeric = central_difference_grad(fn, x)
        denom = max(xg.grad.norm().item(), numeric.norm().item(), 1e-12)
        assert (xg.grad - numeric).norm().item() / denom < 1e-3
