"""Encoder, decoder and critic networks plus their shared configuration.

The encoder maps a ``(3+D, H, W)`` cover/secret stack to a ``(3, H, W)``
container in ``[0, 1]``.  The decoder maps a container to ``(D, H, W)``
pre-sigmoid logits.  The critic scores an image's probability of carrying a
payload.  ``H`` and ``W`` must be divisible by 8 for the encoder (three
stride-2 stages) and at least 32 for the critic.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import torch
import torch.nn as nn

from .blocks import (
    DenseBlock,
    DenseBlockConfig,
    Downsample,
    Pmcb,
    PmcbConfig,
    ResidualBlock,
    Transition,
    Upsample,
    _Block,
    _conv_bn_act,
)
from .errors import DimensionNotDivisible, ShapeMismatch, ShapeTooSmall

__all__ = [
    "ModelConfig",
    "Encoder",
    "Decoder",
    "Critic",
    "count_parameters",
    "save_checkpoint",
    "load_checkpoint",
]

_PairList = tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class ModelConfig:
    """Channel plan and dilation schedule for the whole model family.

    The encoder's intermediate widths derive from ``base_channels`` and
    ``growth``: each down-path stage ends at ``stage_channels[k]``, skip
    projections halve the skip's channels, and transitions bring the fused
    features back to the stage width.  Dilation pairs grow along the down
    path, and the up path mirrors them.
    """

    payload_depth: int = 1
    base_channels: int = 32
    growth: int = 16
    stage_channels: tuple[int, int, int] = (64, 128, 256)
    down_dilations: _PairList = ((3, 6), (6, 12), (12, 18))
    bottleneck_dilations: _PairList = ((3, 6), (6, 12))
    up_dilations: _PairList = ((12, 18), (6, 12), (3, 6))
    decoder_dilations: _PairList = ((3, 6), (6, 12), (12, 18))
    decoder_channels: tuple[int, int, int, int] = (32, 192, 288, 512)
    branch_proportions: tuple[int, ...] = (1, 2, 1, 1, 1)
    dropout_rate: float = 0.2
    negative_slope: float = 0.01
    critic_highpass: bool = False

    def __post_init__(self):
        if self.payload_depth < 1:
            raise ValueError(f"payload_depth must be >= 1, got {self.payload_depth}")
        if len(self.stage_channels) != 3:
            raise ValueError("stage_channels must list 3 down-path widths")
        if len(self.down_dilations) != 3 or len(self.up_dilations) != 3:
            raise ValueError("down/up paths each need 3 dilation pairs")
        if len(self.bottleneck_dilations) != 2:
            raise ValueError("bottleneck needs 2 dilation pairs")
        if len(self.decoder_dilations) != 3 or len(self.decoder_channels) != 4:
            raise ValueError("decoder needs 3 dilation pairs and 4 channel widths")
        for a, b in zip(self.down_dilations, self.down_dilations[1:]):
            if b[0] < a[0] or b[1] < a[1]:
                raise ValueError(f"down-path dilations must be nondecreasing, got {self.down_dilations}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for key, value in d.items():
            if isinstance(value, tuple):
                d[key] = _tuples_to_lists(value)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise ValueError(f"unknown model config key: {sorted(unknown)[0]!r}")
        kwargs = {}
        for key, value in data.items():
            if isinstance(value, list):
                value = _lists_to_tuples(value)
            kwargs[key] = value
        return cls(**kwargs)

    def pmcb(self, in_channels: int, out_channels: int, dilations) -> PmcbConfig:
        return PmcbConfig.balanced(
            in_channels,
            out_channels,
            dilations,
            proportions=self.branch_proportions,
            negative_slope=self.negative_slope,
        )

    def dense(self, in_channels: int) -> DenseBlockConfig:
        return DenseBlockConfig(
            in_channels,
            growth=self.growth,
            dropout_rate=self.dropout_rate,
            negative_slope=self.negative_slope,
        )


def _tuples_to_lists(value):
    if isinstance(value, tuple):
        return [_tuples_to_lists(v) for v in value]
    return value


def _lists_to_tuples(value):
    if isinstance(value, list):
        return tuple(_lists_to_tuples(v) for v in value)
    return value


def _default_multiscale(cfg: ModelConfig):
    return lambda cin, cout, dil: Pmcb(cfg.pmcb(cin, cout, dil))


def _default_dense(cfg: ModelConfig):
    return lambda cin: DenseBlock(cfg.dense(cin))


class Encoder(_Block):
    """Hides a secret tensor in a cover image.

    Pipeline: four residual blocks, three progressive down stages (dense
    block, stride-2 downsample, multi-scale block; outputs kept as skips),
    two multi-scale bottleneck blocks, three progressive up stages (skip
    fused through a 1x1 projection and concat, dense block, transition,
    multi-scale block, upsample), two residual blocks and a sigmoid head.

    ``multiscale`` and ``dense`` override the block factories for the
    ablation variants; both default to the standard Pmcb / DenseBlock.
    """

    def __init__(self, cfg: ModelConfig, multiscale=None, dense=None):
        super().__init__()
        self.cfg = cfg
        msb = multiscale or _default_multiscale(cfg)
        dense = dense or _default_dense(cfg)
        base = cfg.base_channels
        stages = cfg.stage_channels
        slope = cfg.negative_slope
        self.in_channels = 3 + cfg.payload_depth

        self.initial = nn.Sequential(
            ResidualBlock(self.in_channels, base, slope),
            ResidualBlock(base, negative_slope=slope),
            ResidualBlock(base, negative_slope=slope),
            ResidualBlock(base, negative_slope=slope),
        )

        self.down_stages = nn.ModuleList()
        cur = base
        for k in range(3):
            db = dense(cur)
            self.down_stages.append(
                nn.Sequential(
                    db,
                    Downsample(db.out_channels, stages[k], slope),
                    msb(stages[k], stages[k], cfg.down_dilations[k]),
                )
            )
            cur = stages[k]

        self.bottleneck = nn.Sequential(
            msb(cur, cur, cfg.bottleneck_dilations[0]),
            msb(cur, cur, cfg.bottleneck_dilations[1]),
        )

        self.skip_projs = nn.ModuleList()
        self.up_dense = nn.ModuleList()
        self.up_transitions = nn.ModuleList()
        self.up_multiscale = nn.ModuleList()
        self.up_samples = nn.ModuleList()
        for k in range(3):
            stage = stages[2 - k]
            skip_ch = stages[2 - k]
            proj_ch = skip_ch  # recalibration only; reconstruction needs the full skip
            self.skip_projs.append(_conv_bn_act(skip_ch, proj_ch, 1, slope))
            db = dense(cur + proj_ch)
            self.up_dense.append(db)
            self.up_transitions.append(Transition(db.out_channels, stage, slope))
            self.up_multiscale.append(msb(stage, stage, cfg.up_dilations[k]))
            nxt = stages[1 - k] if k < 2 else base
            self.up_samples.append(Upsample(stage, nxt, slope))
            cur = nxt

        self.head = nn.Sequential(
            ResidualBlock(base, negative_slope=slope),
            ResidualBlock(base, negative_slope=slope),
            nn.Conv2d(base, 3, kernel_size=3, padding=1),
        )

    def _forward(self, x):
        if x.shape[1] != self.in_channels:
            raise ShapeMismatch(
                f"encoder expects {self.in_channels} input channels "
                f"(3 + payload depth {self.cfg.payload_depth}), got {x.shape[1]}"
            )
        h, w = x.shape[-2:]
        if h % 8 or w % 8:
            raise DimensionNotDivisible(f"spatial size {h}x{w} must be divisible by 8")

        y = self.initial(x)
        skips = []
        for stage in self.down_stages:
            y = stage(y)
            skips.append(y)
        y = self.bottleneck(y)
        for k in range(3):
            skip = self.skip_projs[k](skips[2 - k])
            y = torch.cat([y, skip], dim=1)
            y = self.up_dense[k](y)
            y = self.up_transitions[k](y)
            y = self.up_multiscale[k](y)
            y = self.up_samples[k](y)
        return torch.sigmoid(self.head(y))


class Decoder(_Block):
    """Recovers secret-bit logits from a container image.

    Full-resolution pipeline: a residual block, three multi-scale blocks
    with growing dilation pairs, and a 1x1 conv down to the payload depth.
    """

    def __init__(self, cfg: ModelConfig, multiscale=None):
        super().__init__()
        self.cfg = cfg
        msb = multiscale or _default_multiscale(cfg)
        c0, c1, c2, c3 = cfg.decoder_channels
        self.initial = ResidualBlock(3, c0, cfg.negative_slope)
        self.multiscale = nn.Sequential(
            msb(c0, c1, cfg.decoder_dilations[0]),
            msb(c1, c2, cfg.decoder_dilations[1]),
            msb(c2, c3, cfg.decoder_dilations[2]),
        )
        self.head = nn.Conv2d(c3, cfg.payload_depth, kernel_size=1)

    def _forward(self, x):
        if x.shape[1] != 3:
            raise ShapeMismatch(f"decoder expects 3 input channels, got {x.shape[1]}")
        return self.head(self.multiscale(self.initial(x)))


# Fixed high-pass residual filter from the XuNet steganalysis lineage;
# disabled unless the model config asks for it.
_KV_KERNEL = [
    [-1, 2, -2, 2, -1],
    [2, -6, 8, -6, 2],
    [-2, 8, -12, 8, -2],
    [2, -6, 8, -6, 2],
    [-1, 2, -2, 2, -1],
]


class Critic(_Block):
    """Steganalysis network: five conv stages, pyramid pooling, 2-way head.

    Stages 1-4 end in 2x2 average pooling; stage 2 uses Tanh, the others
    ReLU.  Spatial pyramid pooling at levels 1, 2, 3 and 4 turns the final
    128-channel map into a fixed 3840-vector regardless of input size, so
    any input of at least 32x32 is accepted.
    """

    SPP_LEVELS = (1, 2, 3, 4)

    def __init__(self, highpass: bool = False):
        super().__init__()
        self.highpass = highpass
        kv = torch.tensor(_KV_KERNEL, dtype=torch.float32) / 12.0
        self.register_buffer("kv_kernel", kv.expand(3, 1, 5, 5).clone())

        def stage(cin, cout, act, pool):
            layers = [nn.Conv2d(cin, cout, 3, padding=1, bias=False), nn.BatchNorm2d(cout), act]
            if pool:
                layers.append(nn.AvgPool2d(2))
            return nn.Sequential(*layers)

        self.stages = nn.Sequential(
            stage(3, 8, nn.ReLU(inplace=True), pool=True),
            stage(8, 16, nn.Tanh(), pool=True),
            stage(16, 32, nn.ReLU(inplace=True), pool=True),
            stage(32, 64, nn.ReLU(inplace=True), pool=True),
            stage(64, 128, nn.ReLU(inplace=True), pool=False),
        )
        spp_bins = sum(n * n for n in self.SPP_LEVELS)
        self.fc = nn.Sequential(
            nn.Linear(128 * spp_bins, 128),
            nn.ReLU(inplace=True),
            nn.Linear(128, 2),
        )

    def spp(self, feature_map):
        """Pyramid-pool a feature map into a fixed-length vector per image."""
        pooled = [
            nn.functional.adaptive_avg_pool2d(feature_map, n).flatten(1)
            for n in self.SPP_LEVELS
        ]
        return torch.cat(pooled, dim=1)

    def _forward(self, x):
        if x.shape[1] != 3:
            raise ShapeMismatch(f"critic expects 3 input channels, got {x.shape[1]}")
        h, w = x.shape[-2:]
        if h < 32 or w < 32:
            raise ShapeTooSmall(f"critic needs at least 32x32 input, got {h}x{w}")
        if self.highpass:
            x = nn.functional.conv2d(x, self.kv_kernel, padding=2, groups=3)
        return self.fc(self.spp(self.stages(x)))

    def score(self, image):
        """Probability in [0, 1] that ``image`` carries a payload."""
        logits = self.forward(image)
        return torch.softmax(logits, dim=-1)[..., 1]


def count_parameters(model: nn.Module) -> int:
    """Total trainable scalar parameters."""
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def save_checkpoint(path, encoder, decoder, critic, cfg: ModelConfig, variant: str = "clpstnet", extra: dict | None = None):
    """Write model weights plus a JSON sidecar describing the config.

    The sidecar lives next to the weight file at ``<path>.json`` and holds
    the full model config and variant name, so a checkpoint can be reloaded
    without external knowledge.
    """
    payload = {
        "encoder": encoder.state_dict(),
        "decoder": decoder.state_dict(),
        "critic": critic.state_dict(),
    }
    torch.save(payload, path)
    sidecar = {"variant": variant, "model": cfg.to_dict()}
    if extra:
        sidecar.update(extra)
    with open(f"{path}.json", "w") as fh:
        json.dump(sidecar, fh, indent=2)
    return str(path)


def load_checkpoint(path, map_location="cpu"):
    """Rebuild (encoder, decoder, critic, config, sidecar) from disk."""
    with open(f"{path}.json") as fh:
        sidecar = json.load(fh)
    cfg = ModelConfig.from_dict(sidecar["model"])
    from .training import build_model  # registry lives with the trainer

    encoder, decoder, critic = build_model(sidecar.get("variant", "clpstnet"), cfg)
    state = torch.load(path, map_location=map_location, weights_only=True)
    encoder.load_state_dict(state["encoder"])
    decoder.load_state_dict(state["decoder"])
    critic.load_state_dict(state["critic"])
    encoder.eval()
    decoder.eval()
    critic.eval()
    return encoder, decoder, critic, cfg, sidecar
