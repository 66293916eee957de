"""Differentiable image losses and the evaluation metrics built on them.

Structural similarity follows the three-term form: luminance, contrast and
structure, each with its own stability constant and exponent.  With the
default exponents (all 1) and ``c3 = c2 / 2`` the product reduces to the
familiar two-term SSIM.  The multi-scale variant evaluates contrast and
structure at every scale (2x average pooling between scales) and luminance
at the coarsest one, combining the per-scale means with the standard
five-scale exponent vector.

All loss functions accept torch tensors or numpy arrays shaped ``(C, H, W)``
or ``(N, C, H, W)``; torch inputs keep their autograd graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ImageTooSmall, NonFinite, ShapeMismatch, WindowTooLarge

__all__ = [
    "SsimParams",
    "MsSsimParams",
    "LossWeights",
    "ssim",
    "msssim",
    "mse",
    "rmse",
    "psnr",
    "embedding_terms",
    "embedding_loss",
    "decode_loss",
    "steganalysis_loss",
    "total_loss",
    "decode_accuracy",
]

# Per-scale exponents of the standard five-scale formulation.
_MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


@dataclass(frozen=True)
class SsimParams:
    """Constants and exponents of the structural similarity index.

    ``mode`` selects local statistics over a Gaussian window ("gaussian",
    the default) or whole-image statistics ("global", used by closed-form
    oracles).  Constants assume unit dynamic range.
    """

    c1: float = 0.01**2
    c2: float = 0.03**2
    c3: float = 0.03**2 / 2
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    window_size: int = 11
    sigma: float = 1.5
    mode: str = "gaussian"

    def __post_init__(self):
        if self.mode not in ("gaussian", "global"):
            raise ValueError(f"mode must be 'gaussian' or 'global', got {self.mode!r}")
        if min(self.alpha, self.beta, self.gamma) <= 0:
            raise ValueError("ssim exponents must be positive")


@dataclass(frozen=True)
class MsSsimParams:
    """Scale count, per-scale exponents and window of multi-scale SSIM."""

    scales: int = 5
    weights: tuple[float, ...] | None = None
    window_size: int = 11
    sigma: float = 1.5

    def __post_init__(self):
        if self.scales < 1:
            raise ValueError(f"scales must be >= 1, got {self.scales}")
        if self.weights is not None and len(self.weights) != self.scales:
            raise ValueError("need one weight per scale")

    def scale_weights(self) -> tuple[float, ...]:
        """Exponent per scale, normalized to sum to 1."""
        w = self.weights if self.weights is not None else _MSSSIM_WEIGHTS[: self.scales]
        if len(w) < self.scales:
            raise ValueError(f"no default weights for {self.scales} scales")
        total = sum(w)
        return tuple(v / total for v in w)

    def min_size(self) -> int:
        """Smallest spatial dim the scale pyramid admits."""
        return self.window_size * 2 ** (self.scales - 1)


@dataclass(frozen=True)
class LossWeights:
    """Balance factors of the composite objective.

    ``lambda_*`` weight the embedding terms (attached to the named metric,
    not positional); ``decode_weight`` and ``critic_weight`` balance bit
    recovery and steganalysis against embedding quality.
    """

    lambda_ssim: float = 0.5
    lambda_msssim: float = 0.5
    lambda_mse: float = 0.3
    decode_weight: float = 1.0
    critic_weight: float = 0.1

    def __post_init__(self):
        if min(self.lambda_ssim, self.lambda_msssim, self.lambda_mse) < 0:
            raise ValueError("embedding weights must be >= 0")
        if self.decode_weight < 0 or self.critic_weight < 0:
            raise ValueError("decode/critic weights must be >= 0")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "LossWeights":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown loss weight key: {sorted(unknown)[0]!r}")
        return cls(**data)


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    arr = np.asarray(x)
    if arr.dtype == np.float64:
        return torch.as_tensor(arr)
    return torch.as_tensor(arr, dtype=torch.float32)


def _as_batched_pair(x, y):
    tx, ty = _as_tensor(x), _as_tensor(y)
    if tx.shape != ty.shape:
        raise ShapeMismatch(f"shapes differ: {tuple(tx.shape)} vs {tuple(ty.shape)}")
    if tx.dim() == 3:
        tx, ty = tx.unsqueeze(0), ty.unsqueeze(0)
    if tx.dim() != 4:
        raise ShapeMismatch(f"expected (C,H,W) or (N,C,H,W), got {tuple(tx.shape)}")
    return tx, ty


def _gaussian_window(size: int, sigma: float, channels: int, dtype, device):
    coords = torch.arange(size, dtype=dtype, device=device) - (size - 1) / 2.0
    g = torch.exp(-(coords**2) / (2 * sigma**2))
    g = g / g.sum()
    window = torch.outer(g, g)
    return window.expand(channels, 1, size, size).contiguous()


def _pow(t: torch.Tensor, e: float) -> torch.Tensor:
    if e == 1.0:
        return t
    return torch.clamp(t, min=1e-8) ** e


def _ssim_maps(x: torch.Tensor, y: torch.Tensor, p: SsimParams):
    """Per-window luminance, contrast and structure maps of one image pair.

    In "global" mode the whole image is a single window, so the maps are
    one value per channel.
    """
    channels = x.shape[1]
    if p.mode == "global":
        mu_x = x.mean(dim=(-2, -1), keepdim=True)
        mu_y = y.mean(dim=(-2, -1), keepdim=True)
        var_x = (x * x).mean(dim=(-2, -1), keepdim=True) - mu_x**2
        var_y = (y * y).mean(dim=(-2, -1), keepdim=True) - mu_y**2
        cov = (x * y).mean(dim=(-2, -1), keepdim=True) - mu_x * mu_y
    else:
        h, w = x.shape[-2:]
        if h < p.window_size or w < p.window_size:
            raise WindowTooLarge(
                f"image {h}x{w} is smaller than the {p.window_size}x{p.window_size} window"
            )
        window = _gaussian_window(p.window_size, p.sigma, channels, x.dtype, x.device)
        mu_x = F.conv2d(x, window, groups=channels)
        mu_y = F.conv2d(y, window, groups=channels)
        var_x = F.conv2d(x * x, window, groups=channels) - mu_x**2
        var_y = F.conv2d(y * y, window, groups=channels) - mu_y**2
        cov = F.conv2d(x * y, window, groups=channels) - mu_x * mu_y

    var_x = torch.clamp(var_x, min=0.0)
    var_y = torch.clamp(var_y, min=0.0)
    # The epsilon keeps sqrt differentiable on flat windows (zero variance);
    # it perturbs the result by < 1e-8, well inside the metric tolerances.
    sig_x = torch.sqrt(var_x + 1e-12)
    sig_y = torch.sqrt(var_y + 1e-12)
    lum = (2 * mu_x * mu_y + p.c1) / (mu_x**2 + mu_y**2 + p.c1)
    con = (2 * sig_x * sig_y + p.c2) / (var_x + var_y + p.c2)
    struct = (cov + p.c3) / (sig_x * sig_y + p.c3)
    return lum, con, struct


def ssim(x, y, params: SsimParams | None = None) -> torch.Tensor:
    """Structural similarity of two images; 1 means identical.

    The mean of the windowed similarity map, differentiable in both inputs.
    """
    p = params or SsimParams()
    tx, ty = _as_batched_pair(x, y)
    lum, con, struct = _ssim_maps(tx, ty, p)
    return (_pow(lum, p.alpha) * _pow(con, p.beta) * _pow(struct, p.gamma)).mean()


def msssim(x, y, params: MsSsimParams | None = None) -> torch.Tensor:
    """Multi-scale structural similarity; 1 means identical.

    Per-scale contrast/structure means are raised to the normalized scale
    exponents; luminance enters at the coarsest scale only.  Raises
    :class:`ImageTooSmall` when the image cannot support the pyramid.
    """
    p = params or MsSsimParams()
    tx, ty = _as_batched_pair(x, y)
    h, w = tx.shape[-2:]
    need = p.min_size()
    if min(h, w) < need:
        raise ImageTooSmall(
            f"{p.scales}-scale msssim with window {p.window_size} needs images "
            f">= {need}px on each side, got {h}x{w}"
        )
    weights = p.scale_weights()
    sp = SsimParams(window_size=p.window_size, sigma=p.sigma)
    result = None
    for j in range(p.scales):
        lum, con, struct = _ssim_maps(tx, ty, sp)
        term = _pow(con.mean(), weights[j]) * _pow(struct.mean(), weights[j])
        result = term if result is None else result * term
        if j == p.scales - 1:
            result = result * _pow(lum.mean(), weights[j])
        else:
            tx = F.avg_pool2d(tx, 2)
            ty = F.avg_pool2d(ty, 2)
    return result


def mse(x, y) -> torch.Tensor:
    """Mean squared error."""
    tx, ty = _as_batched_pair(x, y)
    return ((tx - ty) ** 2).mean()


def rmse(x, y) -> torch.Tensor:
    """Root mean squared error."""
    return torch.sqrt(mse(x, y))


def psnr(x, y) -> float:
    """Peak signal-to-noise ratio in dB for unit-range images.

    Identical images report ``inf`` (serialized downstream as the string
    "inf" rather than an arbitrary cap).
    """
    r = float(rmse(x, y))
    if r == 0.0:
        return float("inf")
    return 20.0 * math.log10(1.0 / r)


def embedding_terms(
    cover,
    container,
    ssim_params: SsimParams | None = None,
    msssim_params: MsSsimParams | None = None,
) -> dict:
    """The three raw similarity terms the embedding loss is built from."""
    return {
        "mse": mse(cover, container),
        "ssim": ssim(cover, container, ssim_params),
        "msssim": msssim(cover, container, msssim_params),
    }


def embedding_loss(
    cover,
    container,
    weights: LossWeights | None = None,
    ssim_params: SsimParams | None = None,
    msssim_params: MsSsimParams | None = None,
) -> torch.Tensor:
    """Composite visual loss between cover and container.

    Weighted sum of MSE, one-minus-SSIM and one-minus-MS-SSIM; zero exactly
    when the images agree.  Terms with zero weight are skipped, so their
    size preconditions never fire.
    """
    w = weights or LossWeights()
    terms = w.lambda_mse * mse(cover, container)
    if w.lambda_ssim:
        terms = terms + w.lambda_ssim * (1.0 - ssim(cover, container, ssim_params))
    if w.lambda_msssim:
        terms = terms + w.lambda_msssim * (1.0 - msssim(cover, container, msssim_params))
    return terms


def decode_loss(secret, logits) -> torch.Tensor:
    """Mean binary cross-entropy of the recovered logits against the bits."""
    target = _as_tensor(secret)
    pred = _as_tensor(logits)
    if target.shape != pred.shape:
        raise ShapeMismatch(f"shapes differ: {tuple(target.shape)} vs {tuple(pred.shape)}")
    return F.binary_cross_entropy_with_logits(pred, target.to(pred.dtype))


def steganalysis_loss(score_logits, target_class) -> torch.Tensor:
    """Cross-entropy of the critic's two-logit head against a class label.

    ``target_class`` is "cover"/0 or "stego"/1.  The encoder trains against
    the cover label on containers (fooling objective); the critic trains on
    true labels.
    """
    logits = _as_tensor(score_logits)
    if logits.shape[-1] != 2:
        raise ShapeMismatch(f"expected two logits per item, got shape {tuple(logits.shape)}")
    if isinstance(target_class, str):
        try:
            target = {"cover": 0, "stego": 1}[target_class]
        except KeyError:
            raise ValueError(f"target_class must be 'cover' or 'stego', got {target_class!r}")
    else:
        target = int(target_class)
        if target not in (0, 1):
            raise ValueError(f"target_class must be 0 or 1, got {target}")
    log_probs = F.log_softmax(logits, dim=-1)
    return -log_probs[..., target].mean()


def total_loss(embedding, decode, steganalysis, weights: LossWeights | None = None) -> torch.Tensor:
    """Combine the three components: Le + a*Ld + b*Ls."""
    w = weights or LossWeights()
    le, ld, ls = (_as_tensor(v) for v in (embedding, decode, steganalysis))
    for name, value in (("embedding", le), ("decode", ld), ("steganalysis", ls)):
        if not torch.isfinite(value).all():
            raise NonFinite(f"{name} loss is not finite: {float(value)}")
    return le + w.decode_weight * ld + w.critic_weight * ls


def decode_accuracy(secret, recovered) -> float:
    """Fraction of bit positions where the tensors agree."""
    a = np.asarray(secret)
    b = np.asarray(recovered)
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean((a >= 0.5) == (b >= 0.5)))
