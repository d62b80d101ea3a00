"""Overwrite-attack baseline: a global-feature additive watermarker.

This is the adversary stand-in for overwrite experiments: a small conv
network mixes the tiled payload with image features at full resolution and
adds a residual. It trains with no stylization in the loop, so its payload
lives in the global/structural features that style transfer discards.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .config import TrainingConfig
from .data import DatasetManifest, PairBatcher, sample_watermark_batch
from .errors import NonFiniteLoss
from .losses import bce_bits
from .metrics import mse_loss
from .networks import BitDecoder

BASELINE_IMAGE_WEIGHT = 12.0


class AdditiveEmbedder(nn.Module):
    """Eight-conv additive residual embedder over image + tiled payload."""

    def __init__(self, length: int, channels: int = 32):
        super().__init__()
        self.length = length
        layers: list[nn.Module] = [
            nn.Conv2d(3 + length, channels, 3, padding=1),
            nn.ReLU(inplace=True),
        ]
        for _ in range(6):
            layers.append(nn.Conv2d(channels, channels, 3, padding=1))
            layers.append(nn.ReLU(inplace=True))
        head = nn.Conv2d(channels, 3, 3, padding=1)
        nn.init.zeros_(head.weight)
        nn.init.zeros_(head.bias)
        layers.append(head)
        self.body = nn.Sequential(*layers)

    def forward(self, img: torch.Tensor, bits: torch.Tensor) -> torch.Tensor:
        squeeze = img.dim() == 3
        x = img.unsqueeze(0) if squeeze else img
        b = bits.unsqueeze(0) if bits.dim() == 1 else bits
        tiled = (b - 0.5).unsqueeze(-1).unsqueeze(-1).expand(
            x.shape[0], b.shape[1], x.shape[2], x.shape[3]
        )
        out = (x + self.body(torch.cat([x, tiled], dim=1))).clamp(0.0, 1.0)
        return out.squeeze(0) if squeeze else out


@dataclass
class BaselineWatermarker:
    embedder: AdditiveEmbedder
    decoder: BitDecoder
    length: int

    def embed(self, img: torch.Tensor, bits: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            return self.embedder(img, bits)

    def extract_bits(self, img: torch.Tensor) -> torch.Tensor:
        squeeze = img.dim() == 3
        x = img.unsqueeze(0) if squeeze else img
        with torch.no_grad():
            probs = self.decoder(x)
        bits = (probs > 0.5).to(probs.dtype)
        return bits.squeeze(0) if squeeze else bits


def train_baseline(
    cfg: TrainingConfig,
    manifests: dict[str, DatasetManifest],
    iters: int = 400,
    lr: float = 1e-3,
) -> BaselineWatermarker:
    """Short clean-image training: decode BCE plus an invisibility MSE term."""
    torch.manual_seed(cfg.seed + 51)
    embedder = AdditiveEmbedder(cfg.watermark_length)
    decoder = BitDecoder(cfg.watermark_length, widths=(32, 64), blocks=(2, 2))
    batcher = PairBatcher(manifests["train"], cfg.image_size, cfg.batch_size, cfg.seed + 53)
    rng = np.random.default_rng(cfg.seed + 59)
    opt = torch.optim.Adam(
        [*embedder.parameters(), *decoder.parameters()], lr=lr, betas=cfg.adam_betas
    )
    for it in range(1, iters + 1):
        sty, con, _ = batcher.next_batch()
        imgs = sty if it % 2 == 0 else con
        bits = sample_watermark_batch(rng, len(imgs), cfg.watermark_length)
        marked = embedder(imgs, bits)
        loss = bce_bits(decoder(marked), bits) + BASELINE_IMAGE_WEIGHT * mse_loss(marked, imgs)
        if not torch.isfinite(loss):
            raise NonFiniteLoss(f"baseline loss non-finite at iteration {it}")
        opt.zero_grad()
        loss.backward()
        opt.step()
    embedder.eval().requires_grad_(False)
    decoder.eval().requires_grad_(False)
    return BaselineWatermarker(embedder, decoder, cfg.watermark_length)


class _IdentityEmbedder(AdditiveEmbedder):
    def forward(self, img: torch.Tensor, bits: torch.Tensor) -> torch.Tensor:
        return img.clone()


def identity_watermarker(length: int) -> BaselineWatermarker:
    """No-op attacker: embeds nothing, decodes through an untrained net."""
    return BaselineWatermarker(
        _IdentityEmbedder(length, channels=4),
        BitDecoder(length, widths=(8,), blocks=(1,)),
        length,
    )
