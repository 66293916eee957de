"""Alternating adversarial training loop and the ablation model registry.

One logical thread owns the weights.  The codec (encoder + decoder) trains
with Adam on the composite objective every batch; the critic trains with SGD
on true cover/stego labels once every ``critic_period`` batches, on the same
batch the codec just saw.  Fixed seed plus fixed manifest order gives
bit-identical loss traces, and resuming from a saved state continues the
trace exactly.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from . import losses, payload
from .blocks import ConvStack, InceptionBlock
from .errors import ConfigMismatch, EmptyDataset, NonFiniteLoss, UnknownVariant
from .losses import LossWeights, MsSsimParams, SsimParams
from .models import Critic, Decoder, Encoder, ModelConfig, save_checkpoint

__all__ = [
    "TrainConfig",
    "TrainingState",
    "VARIANT_NAMES",
    "build_model",
    "init_state",
    "train_step",
    "critic_step",
    "run_training",
    "save_training_state",
    "load_training_state",
    "pick_msssim_scales",
]


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer settings and schedule of one training run.

    ``payload_depth`` overrides the model config's depth when set, so one
    architecture file can be trained at several capacities.  A ``None``
    ``msssim_scales`` picks the largest scale count (up to 4) the training
    image size admits.
    """

    codec_lr: float = 1e-3
    codec_betas: tuple[float, float] = (0.9, 0.999)
    critic_lr: float = 1e-4 / 3
    critic_weight_decay: float = 1e-8
    critic_period: int = 5
    batch_size: int = 8
    max_epochs: int = 120
    image_size: tuple[int, int] = (128, 128)
    payload_depth: int | None = None
    seed: int = 0
    loss_weights: LossWeights = field(default_factory=LossWeights)
    msssim_scales: int | None = None
    grad_clip: float | None = None
    checkpoint_every: int = 1
    device: str = "cpu"

    def __post_init__(self):
        if self.codec_lr < 0 or self.critic_lr < 0:
            raise ValueError("learning rates must be >= 0")
        if self.critic_period < 1:
            raise ValueError("critic_period must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["codec_betas"] = list(self.codec_betas)
        d["image_size"] = list(self.image_size)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown train config key: {sorted(unknown)[0]!r}")
        kwargs = dict(data)
        if "codec_betas" in kwargs:
            kwargs["codec_betas"] = tuple(kwargs["codec_betas"])
        if "image_size" in kwargs:
            kwargs["image_size"] = tuple(kwargs["image_size"])
        if isinstance(kwargs.get("loss_weights"), dict):
            kwargs["loss_weights"] = LossWeights.from_dict(kwargs["loss_weights"])
        return cls(**kwargs)


def pick_msssim_scales(height: int, width: int, window: int = 11, cap: int = 4) -> int:
    """Largest scale count the image supports, capped for evaluation use."""
    scales = 1
    while scales < cap and min(height, width) >= window * 2**scales:
        scales += 1
    return scales


def _conv_multiscale(cfg: ModelConfig):
    return lambda cin, cout, dil: ConvStack(cin, cout, depth=2, negative_slope=cfg.negative_slope)


def _conv_dense(cfg: ModelConfig):
    span = cfg.growth * 4
    return lambda cin: ConvStack(cin, cin + span, depth=4, negative_slope=cfg.negative_slope)


def _inception_multiscale(cfg: ModelConfig):
    return lambda cin, cout, dil: InceptionBlock(cin, cout, cfg.negative_slope)


def _all_dilations(cfg: ModelConfig, pair: tuple[int, int]) -> ModelConfig:
    return dataclasses.replace(
        cfg,
        down_dilations=(pair,) * 3,
        bottleneck_dilations=(pair,) * 2,
        up_dilations=(pair,) * 3,
        decoder_dilations=(pair,) * 3,
    )


# variant -> (encoder multiscale, encoder dense, decoder multiscale, dilation pair)
_VARIANTS = {
    "clpstnet": (None, None, None, None),
    "conv_baseline": (_conv_multiscale, _conv_dense, _conv_multiscale, None),
    "progressive_decoder_only": (_conv_multiscale, _conv_dense, None, None),
    "inception_only": (_inception_multiscale, _conv_dense, _inception_multiscale, None),
    "inception_dense": (_inception_multiscale, None, _inception_multiscale, None),
    "dilation_3": (None, None, None, (3, 3)),
    "dilation_6": (None, None, None, (6, 6)),
    "dilation_3_6": (None, None, None, (3, 6)),
}

VARIANT_NAMES = tuple(_VARIANTS)


def build_model(variant: str, cfg: ModelConfig):
    """Construct (encoder, decoder, critic) for a registered variant.

    The baseline swaps every multi-scale and dense block for plain 3x3
    stacks of matched depth; the inception variants drop the dilated paths;
    the dilation variants pin every dilation pair to one value.
    """
    if variant not in _VARIANTS:
        raise UnknownVariant(
            f"unknown variant {variant!r}; registered: {', '.join(VARIANT_NAMES)}"
        )
    enc_msb, enc_dense, dec_msb, dilation = _VARIANTS[variant]
    if dilation is not None:
        cfg = _all_dilations(cfg, dilation)
    encoder = Encoder(
        cfg,
        multiscale=enc_msb(cfg) if enc_msb else None,
        dense=enc_dense(cfg) if enc_dense else None,
    )
    decoder = Decoder(cfg, multiscale=dec_msb(cfg) if dec_msb else None)
    critic = Critic(highpass=cfg.critic_highpass)
    return encoder, decoder, critic


@dataclass
class TrainingState:
    """Everything needed to continue a run: weights, optimizers, RNG."""

    encoder: Encoder
    decoder: Decoder
    critic: Critic
    codec_opt: torch.optim.Adam
    critic_opt: torch.optim.SGD
    model_cfg: ModelConfig
    train_cfg: TrainConfig
    variant: str
    epoch: int = 0
    batches: int = 0
    best_psnr: float = float("-inf")
    generator: torch.Generator = None

    def loss_params(self, height: int, width: int):
        scales = self.train_cfg.msssim_scales or pick_msssim_scales(height, width)
        return SsimParams(), MsSsimParams(scales=scales)


def init_state(variant: str, model_cfg: ModelConfig, train_cfg: TrainConfig) -> TrainingState:
    """Build models and optimizers with all RNG seeded from the config."""
    if train_cfg.payload_depth is not None:
        model_cfg = dataclasses.replace(model_cfg, payload_depth=train_cfg.payload_depth)
    torch.manual_seed(train_cfg.seed)
    encoder, decoder, critic = build_model(variant, model_cfg)
    device = torch.device(train_cfg.device)
    encoder.to(device)
    decoder.to(device)
    critic.to(device)
    codec_opt = torch.optim.Adam(
        list(encoder.parameters()) + list(decoder.parameters()),
        lr=train_cfg.codec_lr,
        betas=train_cfg.codec_betas,
    )
    critic_opt = torch.optim.SGD(
        critic.parameters(),
        lr=train_cfg.critic_lr,
        weight_decay=train_cfg.critic_weight_decay,
    )
    generator = torch.Generator(device="cpu")
    generator.manual_seed(train_cfg.seed)
    return TrainingState(
        encoder=encoder,
        decoder=decoder,
        critic=critic,
        codec_opt=codec_opt,
        critic_opt=critic_opt,
        model_cfg=model_cfg,
        train_cfg=train_cfg,
        variant=variant,
        generator=generator,
    )


def sample_secrets(state: TrainingState, n: int, height: int, width: int) -> torch.Tensor:
    """Fresh i.i.d. Bernoulli(0.5) secret planes for one batch."""
    d = state.model_cfg.payload_depth
    bits = torch.randint(0, 2, (n, d, height, width), generator=state.generator)
    return bits.to(dtype=torch.float32, device=next(state.encoder.parameters()).device)


def train_step(state: TrainingState, covers: torch.Tensor, secrets: torch.Tensor):
    """One codec update: forward, composite loss, backward, Adam step.

    The critic is evaluated (frozen, eval mode) for the fooling term, so its
    weights and running statistics are untouched.  Returns the loss and
    metric components plus the detached containers for a following critic
    step.  Raises :class:`NonFiniteLoss` naming the component that diverged.
    """
    state.encoder.train()
    state.decoder.train()
    state.critic.eval()
    w = state.train_cfg.loss_weights
    sp, mp = state.loss_params(covers.shape[-2], covers.shape[-1])

    containers = state.encoder(torch.cat([covers, secrets], dim=1))
    logits = state.decoder(containers)
    terms = losses.embedding_terms(covers, containers, sp, mp)
    le = (
        w.lambda_mse * terms["mse"]
        + w.lambda_ssim * (1.0 - terms["ssim"])
        + w.lambda_msssim * (1.0 - terms["msssim"])
    )
    ld = losses.decode_loss(secrets, logits)
    critic_logits = state.critic(containers)
    ls = losses.steganalysis_loss(critic_logits, "cover")
    components = {"embedding": le, "decode": ld, "steganalysis": ls}
    for name, value in components.items():
        if not torch.isfinite(value):
            raise NonFiniteLoss(
                f"{name} loss diverged to {float(value.detach())} at batch {state.batches}"
            )
    loss = le + w.decode_weight * ld + w.critic_weight * ls

    state.codec_opt.zero_grad(set_to_none=True)
    loss.backward()
    if state.train_cfg.grad_clip is not None:
        torch.nn.utils.clip_grad_norm_(
            [p for group in state.codec_opt.param_groups for p in group["params"]],
            state.train_cfg.grad_clip,
        )
    state.codec_opt.step()
    state.batches += 1

    with torch.no_grad():
        detached = containers.detach()
        stego_prob = torch.softmax(critic_logits.detach(), dim=-1)[:, 1].mean()
        record = {
            "total": float(loss),
            "embedding": float(le),
            "decode": float(ld),
            "steganalysis": float(ls),
            "mse": float(terms["mse"]),
            "ssim": float(terms["ssim"]),
            "msssim": float(terms["msssim"]),
            "rmse": float(torch.sqrt(terms["mse"])),
            "psnr": losses.psnr(covers, detached),
            "accuracy": losses.decode_accuracy(
                secrets.cpu().numpy(), (logits.detach().cpu().numpy() >= 0.0)
            ),
            "critic_score": float(stego_prob),
        }
    return record, detached


def critic_step(state: TrainingState, covers: torch.Tensor, containers: torch.Tensor):
    """Scheduled critic update on true labels; a no-op off-schedule.

    Updates only when the global batch counter is a multiple of the critic
    period, so over N batches exactly floor(N / period) updates happen.
    Codec weights are never touched.
    """
    if state.batches == 0 or state.batches % state.train_cfg.critic_period != 0:
        return {"updated": False, "critic_loss": None}
    state.critic.train()
    logits_cover = state.critic(covers)
    logits_stego = state.critic(containers.detach())
    loss = 0.5 * (
        losses.steganalysis_loss(logits_cover, "cover")
        + losses.steganalysis_loss(logits_stego, "stego")
    )
    state.critic_opt.zero_grad(set_to_none=True)
    loss.backward()
    state.critic_opt.step()
    state.critic.eval()
    return {"updated": True, "critic_loss": float(loss.detach())}


def load_manifest(manifest_path) -> list[str]:
    """Newline-delimited image paths; blank lines ignored."""
    with open(manifest_path) as fh:
        paths = [line.strip() for line in fh if line.strip()]
    if not paths:
        raise EmptyDataset(f"manifest {manifest_path} lists no images")
    return paths


def load_cover_batch(paths, image_size) -> torch.Tensor:
    """Stack manifest images into one (N, 3, H, W) float tensor."""
    covers = [payload.load_image(p, target=image_size) for p in paths]
    return torch.from_numpy(np.stack(covers))


def run_training(
    train_cfg: TrainConfig,
    model_cfg: ModelConfig,
    manifest_path,
    out_dir,
    variant: str = "clpstnet",
    resume=None,
    max_steps: int | None = None,
):
    """Train for the configured number of epochs, logging and checkpointing.

    Writes one JSON line of averaged loss/metric components per epoch to
    ``metrics.jsonl``, keeps the best-PSNR weights at ``best.pt`` and a
    resumable state at ``last.pt``.  ``max_steps`` optionally caps the total
    number of codec updates (for desk-scale runs).
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = load_manifest(manifest_path)
    if resume is not None:
        state = load_training_state(resume)
        expected = model_cfg
        if train_cfg.payload_depth is not None:
            expected = dataclasses.replace(model_cfg, payload_depth=train_cfg.payload_depth)
        if state.model_cfg != expected:
            raise ConfigMismatch(
                "resume checkpoint model config does not match the requested config "
                f"(saved depth {state.model_cfg.payload_depth}, base {state.model_cfg.base_channels})"
            )
        # The saved schedule owns every determinism-relevant field; only the
        # epoch budget and housekeeping knobs may change on resume.
        saved, requested = state.train_cfg.to_dict(), train_cfg.to_dict()
        for key in ("max_epochs", "checkpoint_every", "device"):
            saved.pop(key), requested.pop(key)
        if saved != requested:
            changed = sorted(k for k in saved if saved[k] != requested[k])
            raise ConfigMismatch(f"resume train config mismatch in: {', '.join(changed)}")
        state.train_cfg = dataclasses.replace(
            state.train_cfg,
            max_epochs=train_cfg.max_epochs,
            checkpoint_every=train_cfg.checkpoint_every,
            device=train_cfg.device,
        )
        train_cfg = state.train_cfg
    else:
        state = init_state(variant, model_cfg, train_cfg)

    covers_all = load_cover_batch(paths, train_cfg.image_size).to(train_cfg.device)
    n = covers_all.shape[0]
    h, w = covers_all.shape[-2:]

    metrics_path = os.path.join(out_dir, "metrics.jsonl")
    best_path = os.path.join(out_dir, "best.pt")
    last_path = os.path.join(out_dir, "last.pt")
    log_mode = "a" if resume is not None else "w"
    history = []

    def save_best():
        save_checkpoint(
            best_path,
            state.encoder,
            state.decoder,
            state.critic,
            state.model_cfg,
            variant=state.variant,
            extra={"seed": train_cfg.seed, "epoch": state.epoch, "best_psnr": state.best_psnr},
        )

    if resume is None:
        save_best()  # initial weights, so a zero-epoch budget still yields a checkpoint

    stop = False
    with open(metrics_path, log_mode) as log:
        while state.epoch < train_cfg.max_epochs and not stop:
            order = torch.randperm(n, generator=state.generator).tolist()
            sums, batches = {}, 0
            for start in range(0, n, train_cfg.batch_size):
                idx = order[start : start + train_cfg.batch_size]
                covers = covers_all[idx]
                secrets = sample_secrets(state, len(idx), h, w)
                record, containers = train_step(state, covers, secrets)
                critic_step(state, covers, containers)
                for key, value in record.items():
                    sums[key] = sums.get(key, 0.0) + value
                batches += 1
                if max_steps is not None and state.batches >= max_steps:
                    stop = True
                    break
            state.epoch += 1
            epoch_record = {"epoch": state.epoch, "seed": train_cfg.seed}
            epoch_record.update({k: v / batches for k, v in sums.items()})
            history.append(epoch_record)
            log.write(json.dumps(_jsonable(epoch_record)) + "\n")
            log.flush()
            if epoch_record["psnr"] > state.best_psnr:
                state.best_psnr = epoch_record["psnr"]
                save_best()
            if state.epoch % train_cfg.checkpoint_every == 0 or stop:
                save_training_state(state, last_path)
    save_training_state(state, last_path)
    return {"best": best_path, "last": last_path, "metrics": metrics_path, "history": history}


def _jsonable(record: dict) -> dict:
    out = {}
    for key, value in record.items():
        if isinstance(value, float) and not np.isfinite(value):
            out[key] = "inf" if value > 0 else "-inf"
        else:
            out[key] = value
    return out


def save_training_state(state: TrainingState, path) -> str:
    """Snapshot weights, optimizers and RNG so training can continue."""
    torch.save(
        {
            "variant": state.variant,
            "model_cfg": state.model_cfg.to_dict(),
            "train_cfg": state.train_cfg.to_dict(),
            "epoch": state.epoch,
            "batches": state.batches,
            "best_psnr": state.best_psnr,
            "encoder": state.encoder.state_dict(),
            "decoder": state.decoder.state_dict(),
            "critic": state.critic.state_dict(),
            "codec_opt": state.codec_opt.state_dict(),
            "critic_opt": state.critic_opt.state_dict(),
            "generator": state.generator.get_state(),
            "torch_rng": torch.get_rng_state(),
        },
        path,
    )
    return str(path)


def load_training_state(path) -> TrainingState:
    """Rebuild a :class:`TrainingState` saved by :func:`save_training_state`."""
    blob = torch.load(path, map_location="cpu", weights_only=False)
    model_cfg = ModelConfig.from_dict(blob["model_cfg"])
    train_cfg = TrainConfig.from_dict(blob["train_cfg"])
    state = init_state(blob["variant"], model_cfg, train_cfg)
    state.encoder.load_state_dict(blob["encoder"])
    state.decoder.load_state_dict(blob["decoder"])
    state.critic.load_state_dict(blob["critic"])
    state.codec_opt.load_state_dict(blob["codec_opt"])
    state.critic_opt.load_state_dict(blob["critic_opt"])
    state.generator.set_state(blob["generator"])
    torch.set_rng_state(blob["torch_rng"])
    state.epoch = blob["epoch"]
    state.batches = blob["batches"]
    state.best_psnr = blob["best_psnr"]
    return state
