"""Differentiable building blocks for the encoder, decoder and critic.

All blocks accept either a batched ``(N, C, H, W)`` tensor or an unbatched
``(C, H, W)`` tensor; unbatched inputs come back unbatched.  Convolutions use
"same" padding so spatial size is preserved except in the explicit
downsample/upsample blocks.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import OddDimension, ShapeMismatch

__all__ = [
    "PmcbConfig",
    "DenseBlockConfig",
    "Pmcb",
    "InceptionBlock",
    "DenseBlock",
    "ResidualBlock",
    "Downsample",
    "Upsample",
    "Transition",
    "ConvStack",
    "apportion",
]


def apportion(total: int, proportions) -> list[int]:
    """Split ``total`` into integer parts proportional to ``proportions``.

    Largest-remainder rounding; every part is at least 1 and the parts sum
    to ``total`` exactly.
    """
    weights = [float(p) for p in proportions]
    if total < len(weights):
        raise ValueError(f"cannot split {total} channels into {len(weights)} branches")
    scale = total / sum(weights)
    quotas = [w * scale for w in weights]
    parts = [max(1, int(q)) for q in quotas]
    remainders = [q - int(q) for q in quotas]
    order = sorted(range(len(parts)), key=lambda i: -remainders[i])
    i = 0
    while sum(parts) < total:
        parts[order[i % len(parts)]] += 1
        i += 1
    while sum(parts) > total:
        j = max(range(len(parts)), key=lambda k: parts[k])
        parts[j] -= 1
    return parts


@dataclass(frozen=True)
class PmcbConfig:
    """Geometry of one progressive multi-scale convolution block.

    ``branch_widths`` are the output channels of the five branches in fixed
    order (1x1, 3x3, 5x5, dilated-d1, dilated-d2); ``reduce_widths`` are the
    1x1 reduction widths in front of the last four branches.
    """

    in_channels: int
    branch_widths: tuple[int, int, int, int, int]
    reduce_widths: tuple[int, int, int, int]
    dilations: tuple[int, int] = (3, 6)
    negative_slope: float = 0.01

    def __post_init__(self):
        if len(self.branch_widths) != 5 or len(self.reduce_widths) != 4:
            raise ValueError("need 5 branch widths and 4 reduce widths")
        if min(self.branch_widths) < 1 or min(self.reduce_widths) < 1:
            raise ValueError("branch and reduce widths must be >= 1")
        d1, d2 = self.dilations
        if d1 < 1 or d2 < 1 or d1 > d2:
            raise ValueError(f"dilations must satisfy 1 <= d1 <= d2, got {self.dilations}")

    @property
    def out_channels(self) -> int:
        return sum(self.branch_widths)

    @staticmethod
    def balanced(
        in_channels: int,
        out_channels: int,
        dilations: tuple[int, int],
        proportions=(1, 2, 1, 1, 1),
        negative_slope: float = 0.01,
    ) -> "PmcbConfig":
        """Width plan with the widest 3x3 path, summing to ``out_channels``."""
        widths = apportion(out_channels, proportions)
        reduce = tuple(max(1, w // 2) for w in widths[1:])
        return PmcbConfig(
            in_channels=in_channels,
            branch_widths=tuple(widths),
            reduce_widths=reduce,
            dilations=tuple(dilations),
            negative_slope=negative_slope,
        )


@dataclass(frozen=True)
class DenseBlockConfig:
    """Geometry of a densely connected block (four 1x1 layers by default)."""

    in_channels: int
    growth: int = 16
    layers: int = 4
    dropout_rate: float = 0.2
    negative_slope: float = 0.01

    @property
    def out_channels(self) -> int:
        return self.in_channels + self.layers * self.growth


def _conv_bn_act(cin, cout, kernel, negative_slope, dilation=1, stride=1):
    # bias-free: the batch norm that follows would cancel a conv bias anyway
    padding = dilation * (kernel - 1) // 2
    return nn.Sequential(
        nn.Conv2d(cin, cout, kernel, stride=stride, padding=padding, dilation=dilation, bias=False),
        nn.BatchNorm2d(cout),
        nn.LeakyReLU(negative_slope, inplace=True),
    )


class _Block(nn.Module):
    """Base that lets every block take batched or unbatched input."""

    def forward(self, x):
        if x.dim() == 3:
            return self._forward(x.unsqueeze(0)).squeeze(0)
        if x.dim() != 4:
            raise ShapeMismatch(f"expected a 3- or 4-d tensor, got {tuple(x.shape)}")
        return self._forward(x)

    def _check_channels(self, x, expected):
        if x.shape[1] != expected:
            raise ShapeMismatch(
                f"{type(self).__name__} expects {expected} input channels, got {x.shape[1]}"
            )


class Pmcb(_Block):
    """Five parallel conv paths (1x1, 3x3, 5x5, two dilated 3x3), concatenated.

    The 3x3, 5x5 and dilated paths are preceded by a 1x1 reduction.  Every
    convolution is followed by batch norm and LeakyReLU.  Spatial size is
    preserved; output channels are the sum of the branch widths.
    """

    def __init__(self, cfg: PmcbConfig):
        super().__init__()
        self.cfg = cfg
        cin = cfg.in_channels
        w1, w3, w5, wd1, wd2 = cfg.branch_widths
        r3, r5, rd1, rd2 = cfg.reduce_widths
        d1, d2 = cfg.dilations
        slope = cfg.negative_slope
        self.branch_1x1 = _conv_bn_act(cin, w1, 1, slope)
        self.branch_3x3 = nn.Sequential(
            _conv_bn_act(cin, r3, 1, slope), _conv_bn_act(r3, w3, 3, slope)
        )
        self.branch_5x5 = nn.Sequential(
            _conv_bn_act(cin, r5, 1, slope), _conv_bn_act(r5, w5, 5, slope)
        )
        self.branch_dil1 = nn.Sequential(
            _conv_bn_act(cin, rd1, 1, slope), _conv_bn_act(rd1, wd1, 3, slope, dilation=d1)
        )
        self.branch_dil2 = nn.Sequential(
            _conv_bn_act(cin, rd2, 1, slope), _conv_bn_act(rd2, wd2, 3, slope, dilation=d2)
        )

    @property
    def out_channels(self) -> int:
        return self.cfg.out_channels

    def _forward(self, x):
        self._check_channels(x, self.cfg.in_channels)
        return torch.cat(
            [
                self.branch_1x1(x),
                self.branch_3x3(x),
                self.branch_5x5(x),
                self.branch_dil1(x),
                self.branch_dil2(x),
            ],
            dim=1,
        )


class InceptionBlock(_Block):
    """Pmcb with the dilated paths removed: 1x1, reduce+3x3, reduce+5x5."""

    def __init__(self, in_channels: int, out_channels: int, negative_slope: float = 0.01):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        w1, w3, w5 = apportion(out_channels, (1, 2, 1))
        r3, r5 = max(1, w3 // 2), max(1, w5 // 2)
        self.branch_1x1 = _conv_bn_act(in_channels, w1, 1, negative_slope)
        self.branch_3x3 = nn.Sequential(
            _conv_bn_act(in_channels, r3, 1, negative_slope),
            _conv_bn_act(r3, w3, 3, negative_slope),
        )
        self.branch_5x5 = nn.Sequential(
            _conv_bn_act(in_channels, r5, 1, negative_slope),
            _conv_bn_act(r5, w5, 5, negative_slope),
        )

    def _forward(self, x):
        self._check_channels(x, self.in_channels)
        return torch.cat([self.branch_1x1(x), self.branch_3x3(x), self.branch_5x5(x)], dim=1)


class DenseBlock(_Block):
    """Densely connected 1x1 layers; each layer sees all previous outputs.

    Layer k maps ``in + (k-1) * growth`` channels to ``growth`` new channels
    through 1x1 conv, batch norm, LeakyReLU and dropout; the block output is
    the concatenation of the input with every layer's output.  Spatial size
    is unchanged.
    """

    def __init__(self, cfg: DenseBlockConfig):
        super().__init__()
        self.cfg = cfg
        self.layers = nn.ModuleList()
        for k in range(cfg.layers):
            cin = cfg.in_channels + k * cfg.growth
            self.layers.append(
                nn.Sequential(
                    nn.Conv2d(cin, cfg.growth, kernel_size=1, bias=False),
                    nn.BatchNorm2d(cfg.growth),
                    nn.LeakyReLU(cfg.negative_slope, inplace=True),
                    nn.Dropout(cfg.dropout_rate),
                )
            )

    @property
    def out_channels(self) -> int:
        return self.cfg.out_channels

    def _forward(self, x):
        self._check_channels(x, self.cfg.in_channels)
        features = [x]
        for layer in self.layers:
            features.append(layer(torch.cat(features, dim=1)))
        return torch.cat(features, dim=1)


class ResidualBlock(_Block):
    """3x3 conv + batch norm + LeakyReLU with a short-circuit sum.

    With equal in/out channels the skip is the identity; otherwise a 1x1
    projection aligns the channel counts.
    """

    def __init__(self, in_channels: int, out_channels: int | None = None, negative_slope: float = 0.01):
        super().__init__()
        out_channels = in_channels if out_channels is None else out_channels
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.body = _conv_bn_act(in_channels, out_channels, 3, negative_slope)
        self.skip = (
            nn.Identity()
            if in_channels == out_channels
            else nn.Conv2d(in_channels, out_channels, kernel_size=1)
        )

    def _forward(self, x):
        self._check_channels(x, self.in_channels)
        return self.body(x) + self.skip(x)


class Downsample(_Block):
    """Stride-2 3x3 conv + batch norm + LeakyReLU; halves H and W."""

    def __init__(self, in_channels: int, out_channels: int, negative_slope: float = 0.01):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.body = _conv_bn_act(in_channels, out_channels, 3, negative_slope, stride=2)

    def _forward(self, x):
        self._check_channels(x, self.in_channels)
        h, w = x.shape[-2:]
        if h % 2 or w % 2:
            raise OddDimension(f"cannot halve odd spatial size {h}x{w}")
        return self.body(x)


class Upsample(_Block):
    """Transposed conv (kernel 4, stride 2, padding 1); doubles H and W."""

    def __init__(self, in_channels: int, out_channels: int, negative_slope: float = 0.01):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.body = nn.Sequential(
            nn.ConvTranspose2d(
                in_channels, out_channels, kernel_size=4, stride=2, padding=1, bias=False
            ),
            nn.BatchNorm2d(out_channels),
            nn.LeakyReLU(negative_slope, inplace=True),
        )

    def _forward(self, x):
        self._check_channels(x, self.in_channels)
        return self.body(x)


class Transition(_Block):
    """Channel adjustment: batch norm + LeakyReLU + 1x1 conv."""

    def __init__(self, in_channels: int, out_channels: int, negative_slope: float = 0.01):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.body = nn.Sequential(
            nn.BatchNorm2d(in_channels),
            nn.LeakyReLU(negative_slope, inplace=True),
            nn.Conv2d(in_channels, out_channels, kernel_size=1),
        )

    def _forward(self, x):
        self._check_channels(x, self.in_channels)
        return self.body(x)


class ConvStack(_Block):
    """Plain 3x3 stack: one channel-adjusting conv, then residual blocks.

    Stands in for Pmcb or DenseBlock in the ablation baselines at matched
    depth and matched output channels.
    """

    def __init__(self, in_channels: int, out_channels: int, depth: int = 2, negative_slope: float = 0.01):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        layers = [_conv_bn_act(in_channels, out_channels, 3, negative_slope)]
        for _ in range(max(0, depth - 1)):
            layers.append(ResidualBlock(out_channels, negative_slope=negative_slope))
        self.body = nn.Sequential(*layers)

    def _forward(self, x):
        self._check_channels(x, self.in_channels)
        return self.body(x)
