"""Independent reference implementations the tests check the library against.

Everything here is deliberately written with numpy/scipy primitives and no
imports from the package's loss code, so a bug cannot hide on both sides of
a comparison.
"""

from __future__ import annotations

import numpy as np
import torch
from scipy.signal import convolve2d


def np_gaussian_window(size: int, sigma: float) -> np.ndarray:
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(coords**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def np_ssim_term_maps(x: np.ndarray, y: np.ndarray, size=11, sigma=1.5,
                      c1=0.01**2, c2=0.03**2, c3=0.03**2 / 2):
    """Windowed luminance/contrast/structure maps for one (C,H,W) pair."""
    window = np_gaussian_window(size, sigma)
    lums, cons, structs = [], [], []
    for ch in range(x.shape[0]):
        xc, yc = x[ch].astype(np.float64), y[ch].astype(np.float64)
        mu_x = convolve2d(xc, window, mode="valid")
        mu_y = convolve2d(yc, window, mode="valid")
        var_x = np.clip(convolve2d(xc * xc, window, mode="valid") - mu_x**2, 0, None)
        var_y = np.clip(convolve2d(yc * yc, window, mode="valid") - mu_y**2, 0, None)
        cov = convolve2d(xc * yc, window, mode="valid") - mu_x * mu_y
        sig_x, sig_y = np.sqrt(var_x), np.sqrt(var_y)
        lums.append((2 * mu_x * mu_y + c1) / (mu_x**2 + mu_y**2 + c1))
        cons.append((2 * sig_x * sig_y + c2) / (var_x + var_y + c2))
        structs.append((cov + c3) / (sig_x * sig_y + c3))
    return np.stack(lums), np.stack(cons), np.stack(structs)


def np_ssim(x: np.ndarray, y: np.ndarray, **kw) -> float:
    """Plain SSIM: mean over windows of the three-term product."""
    lum, con, struct = np_ssim_term_maps(x, y, **kw)
    return float((lum * con * struct).mean())


def global_constant_ssim(a: float, b: float, c1=0.01**2) -> float:
    """Closed form for two constant images: variance terms cancel to 1."""
    return (2 * a * b + c1) / (a * a + b * b + c1)


def central_difference_grad(fn, x: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """Central finite-difference gradient of a scalar function of ``x``."""
    flat = x.detach().clone().reshape(-1)
    grad = torch.zeros_like(flat)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            hi = float(fn(flat.reshape(x.shape)))
            flat[i] = orig - eps
            lo = float(fn(flat.reshape(x.shape)))
            flat[i] = orig
            grad[i] = (hi - lo) / (2 * eps)
    return grad.reshape(x.shape)


def relative_grad_error(fn, x: torch.Tensor, eps: float = 1e-5) -> float:
    """Norm-relative error between analytic and finite-difference gradients."""
    x = x.detach().clone().requires_grad_(True)
    out = fn(x)
    out.backward()
    analytic = x.grad.detach()
    numeric = central_difference_grad(fn, x, eps)
    denom = max(analytic.norm().item(), numeric.norm().item(), 1e-12)
    return float((analytic - numeric).norm().item() / denom)


def dilated_branch_support(center: tuple[int, int], dilation: int, shape: tuple[int, int]):
    """Expected impulse-response support of a 3x3 dilated conv by brute force.

    Enumerates the kernel tap offsets {-d, 0, d} in both axes around the
    impulse and keeps the in-bounds positions.
    """
    r, c = center
    h, w = shape
    support = set()
    for dr in (-dilation, 0, dilation):
        for dc in (-dilation, 0, dilation):
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w:
                support.add((rr, cc))
    return support
