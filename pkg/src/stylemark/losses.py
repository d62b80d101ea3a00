"""Training objectives for both stages."""

from __future__ import annotations

import torch

from .config import LossWeights
from .data import gray3
from .errors import LengthMismatch
from .metrics import channel_normalize, mse_loss
from .networks import ContentEncoder

BCE_CLAMP = 1e-7


def bce_bits(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy between predicted probabilities and bits."""
    if pred.shape != target.shape:
        raise LengthMismatch(f"{tuple(pred.shape)} vs {tuple(target.shape)}")
    p = pred.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP)
    return -(target * p.log() + (1.0 - target) * (1.0 - p).log()).mean()


def dsl_loss(
    i_wm: torch.Tensor, i_sty: torch.Tensor, extractor: ContentEncoder
) -> torch.Tensor:
    """Distribution squeeze: MSE of normalized deep grayscale structure
    features, pushing payload energy out of content structure."""
    f_wm = extractor(gray3(i_wm))[-1]
    f_ori = extractor(gray3(i_sty))[-1]
    return mse_loss(channel_normalize(f_wm), channel_normalize(f_ori))


def invisibility_loss(
    i_wm: torch.Tensor,
    i_sty: torch.Tensor,
    weights: LossWeights,
    extractor: ContentEncoder,
) -> torch.Tensor:
    out = weights.mse * mse_loss(i_wm, i_sty)
    if weights.dsl != 0.0:
        out = out + weights.dsl * dsl_loss(i_wm, i_sty, extractor)
    return out


def stage1_loss(
    w_sty: torch.Tensor,
    w_cs: torch.Tensor,
    w_ori: torch.Tensor,
    i_wm: torch.Tensor,
    i_sty: torch.Tensor,
    weights: LossWeights,
    extractor: ContentEncoder,
) -> torch.Tensor:
    wm_term = bce_bits(w_sty, w_ori) + bce_bits(w_cs, w_ori)
    return weights.wm * wm_term + weights.inv * invisibility_loss(
        i_wm, i_sty, weights, extractor
    )


def stage2_loss(
    w_sty: torch.Tensor,
    w_cs: torch.Tensor,
    w_sty_np: torch.Tensor,
    w_cs_np: torch.Tensor,
    w_ori: torch.Tensor,
) -> torch.Tensor:
    """Unweighted sum of the clean and noise-pool decoding BCE terms."""
    return (
        bce_bits(w_sty, w_ori)
        + bce_bits(w_cs, w_ori)
        + bce_bits(w_sty_np, w_ori)
        + bce_bits(w_cs_np, w_ori)
    )
