"""Evaluation metrics: MSE, PSNR, SSIM, bit accuracy, feature normalization."""

from __future__ import annotations

import math

import torch

from .data import to_grayscale
from .errors import LengthMismatch, ShapeError, ShapeMismatch
from .networks import EPS, channel_stats

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def mse_loss(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean of squared elementwise differences (differentiable)."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"{tuple(a.shape)} vs {tuple(b.shape)}")
    return ((a - b) ** 2).mean()


def channel_normalize(f: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    """Per-channel spatial standardization: (f - mu) / (sigma + eps)."""
    mu, sigma = channel_stats(f, eps)
    return (f - mu) / (sigma + eps)


def bit_accuracy(recovered: torch.Tensor, original: torch.Tensor) -> float:
    """1 - mean absolute bit difference; both operands are {0,1} vectors."""
    if recovered.shape != original.shape:
        raise LengthMismatch(f"{tuple(recovered.shape)} vs {tuple(original.shape)}")
    return float(1.0 - (recovered.double() - original.double()).abs().mean().item())


def psnr(a: torch.Tensor, b: torch.Tensor) -> float:
    """Peak signal-to-noise ratio in dB on the 0-255 scale; 100 dB cap when
    the operands are identical."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"{tuple(a.shape)} vs {tuple(b.shape)}")
    diff = (a.double() - b.double()) * 255.0
    mse = (diff ** 2).mean().item()
    if mse == 0.0:
        return PSNR_CAP_DB
    return 10.0 * math.log10(255.0 ** 2 / mse)


def _gaussian_window(size: int, sigma: float, dtype: torch.dtype) -> torch.Tensor:
    half = (size - 1) / 2
    coords = torch.arange(size, dtype=dtype) - half
    g = torch.exp(-(coords ** 2) / (2 * sigma ** 2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim(a: torch.Tensor, b: torch.Tensor) -> float:
    """Mean local structural similarity on the grayscale pair.

    11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, dynamic range 1.0;
    window statistics are taken over fully valid positions only.
    """
    if a.shape != b.shape:
        raise ShapeMismatch(f"{tuple(a.shape)} vs {tuple(b.shape)}")
    x = to_grayscale(a).double()
    y = to_grayscale(b).double()
    if x.dim() == 3:
        x, y = x.unsqueeze(0), y.unsqueeze(0)
    if x.shape[-1] < SSIM_WINDOW or x.shape[-2] < SSIM_WINDOW:
        raise ShapeError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    win = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA, torch.float64).view(1, 1, SSIM_WINDOW, SSIM_WINDOW)

    mu_x = torch.nn.functional.conv2d(x, win)
    mu_y = torch.nn.functional.conv2d(y, win)
    xx = torch.nn.functional.conv2d(x * x, win) - mu_x ** 2
    yy = torch.nn.functional.conv2d(y * y, win) - mu_y ** 2
    xy = torch.nn.functional.conv2d(x * y, win) - mu_x * mu_y

    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (xx + yy + c2)
    return float((num / den).mean().item())
