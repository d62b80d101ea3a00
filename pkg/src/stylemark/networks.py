"""Network components: feature pyramid encoders with multi-scale payload
injection, adaptive-statistics alignment, residual image reconstruction,
and the bit decoder.

All modules operate on batched tensors (B, C, H, W); images are float in
[0, 1]. Channel statistics are population statistics over spatial positions
with EPS inside every std computation.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeError, ShapeMismatch

EPS = 1e-5


def init_conv_relu(module: nn.Module) -> None:
    """Kaiming-normal (ReLU gain) init for every conv in a module tree.

    The default torch init attenuates activations badly over the 8+ conv
    stacks used here, stalling early training.
    """
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)


def channel_stats(x: torch.Tensor, eps: float = EPS) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-channel spatial mean and (eps-regularized) std of (B, C, H, W)."""
    if x.dim() != 4:
        raise ShapeError(f"expected (B, C, H, W), got shape {tuple(x.shape)}")
    mu = x.mean(dim=(2, 3), keepdim=True)
    var = x.var(dim=(2, 3), keepdim=True, unbiased=False)
    sigma = torch.sqrt(var + eps)
    return mu, sigma


def adain_align(f_style: torch.Tensor, f_content: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    """Replace content-feature channel statistics with the style operand's.

    out = sigma(style) * (content - mu(content)) / (sigma(content) + eps)
          + mu(style)
    """
    if f_style.shape[-3:] != f_content.shape[-3:]:
        raise ShapeMismatch(
            f"style {tuple(f_style.shape)} vs content {tuple(f_content.shape)}"
        )
    mu_s, sigma_s = channel_stats(f_style, eps)
    mu_c, sigma_c = channel_stats(f_content, eps)
    return sigma_s * (f_content - mu_c) / (sigma_c + eps) + mu_s


def watermark_channels(feature_channels: int) -> int:
    """Per-stage payload channel budget, proportional to feature width."""
    return max(4, feature_channels // 8)


class WatermarkProjector(nn.Module):
    """Projects an l-bit payload to C channels and tiles it spatially.

    Bits are recentered to {-0.5, +0.5} before the (bias-free) linear
    projection, so complementary payloads produce negated maps.
    """

    def __init__(self, length: int, channels: int):
        super().__init__()
        self.length = length
        self.proj = nn.Linear(length, channels, bias=False)

    def forward(self, bits: torch.Tensor, hw: tuple[int, int]) -> torch.Tensor:
        if bits.dim() == 1:
            bits = bits.unsqueeze(0)
        if bits.shape[1] != self.length:
            raise ShapeMismatch(f"expected {self.length} bits, got {bits.shape[1]}")
        vec = self.proj(bits - 0.5)
        h, w = hw
        return vec.unsqueeze(-1).unsqueeze(-1).expand(bits.shape[0], vec.shape[1], h, w)


class ConvStage(nn.Module):
    """One pyramid stage: stride-2 conv then a refining conv, both ReLU."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(in_channels, out_channels, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(out_channels, out_channels, 3, padding=1),
            nn.ReLU(inplace=True),
        )
        init_conv_relu(self.body)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.body(x)


def _check_divisible(x: torch.Tensor, depth: int) -> None:
    h, w = x.shape[-2:]
    if h % (1 << depth) or w % (1 << depth):
        raise ShapeError(f"spatial size {h}x{w} not divisible by 2^{depth}")


class ContentEncoder(nn.Module):
    """Structure-feature pyramid extractor; frozen after bootstrap."""

    def __init__(self, widths: tuple[int, ...] = (16, 32, 64, 128)):
        super().__init__()
        self.widths = tuple(widths)
        chans = [3, *widths]
        self.stages = nn.ModuleList(
            ConvStage(chans[i], chans[i + 1]) for i in range(len(widths))
        )

    def forward(self, img: torch.Tensor) -> list[torch.Tensor]:
        _check_divisible(img, len(self.stages))
        levels = []
        x = img
        for stage in self.stages:
            x = stage(x)
            levels.append(x)
        return levels


class StyleEncoder(nn.Module):
    """Stroke-feature pyramid with the payload concatenated at every level.

    Level k of the returned pyramid carries widths[k] feature channels plus
    watermark_channels(widths[k]) tiled payload channels; the concatenated
    map also feeds the next stage.
    """

    def __init__(self, length: int, widths: tuple[int, ...] = (16, 32, 64, 128)):
        super().__init__()
        self.widths = tuple(widths)
        self.wm_widths = tuple(watermark_channels(c) for c in widths)
        in_c = 3
        stages, projectors = [], []
        for c, cw in zip(self.widths, self.wm_widths):
            stages.append(ConvStage(in_c, c))
            projectors.append(WatermarkProjector(length, cw))
            in_c = c + cw
        self.stages = nn.ModuleList(stages)
        self.projectors = nn.ModuleList(projectors)

    @property
    def out_channels(self) -> int:
        return self.widths[-1] + self.wm_widths[-1]

    def forward(self, img: torch.Tensor, bits: torch.Tensor) -> list[torch.Tensor]:
        _check_divisible(img, len(self.stages))
        levels = []
        x = img
        for stage, proj in zip(self.stages, self.projectors):
            f = stage(x)
            wm = proj(bits, f.shape[-2:])
            x = torch.cat([f, wm], dim=1)
            levels.append(x)
        return levels


class Reconstructor(nn.Module):
    """Upsampling decoder from aligned deep features back to the image.

    Each stage re-concatenates the tiled payload, upsamples by 2 (nearest
    neighbor), and convolves. With residual mode on (default) the network
    emits a residual added to the carrier; the residual head starts near
    (not at) zero: an exactly zero head makes the output independent of the
    payload, a saddle the joint encoder/decoder objective escapes slowly.
    """

    def __init__(
        self,
        length: int,
        deep_channels: int,
        widths: tuple[int, ...] = (16, 32, 64, 128),
        use_residual: bool = True,
    ):
        super().__init__()
        self.use_residual = use_residual
        out_widths = [*reversed(widths[:-1]), widths[0]]
        stages, projectors = [], []
        in_c = deep_channels
        for out_c in out_widths:
            cw = watermark_channels(in_c) if use_residual else 0
            if use_residual:
                projectors.append(WatermarkProjector(length, cw))
            stages.append(
                nn.Sequential(
                    nn.Upsample(scale_factor=2, mode="nearest"),
                    nn.Conv2d(in_c + cw, out_c, 3, padding=1),
                    nn.ReLU(inplace=True),
                )
            )
            in_c = out_c
        self.stages = nn.ModuleList(stages)
        init_conv_relu(self.stages)
        self.projectors = nn.ModuleList(projectors)
        self.head = nn.Conv2d(in_c, 3, 3, padding=1)
        nn.init.normal_(self.head.weight, std=2e-2)
        nn.init.zeros_(self.head.bias)

    def forward(self, f_wm: torch.Tensor, img: torch.Tensor, bits: torch.Tensor) -> torch.Tensor:
        x = f_wm
        for i, stage in enumerate(self.stages):
            if self.use_residual:
                wm = self.projectors[i](bits, x.shape[-2:])
                x = torch.cat([x, wm], dim=1)
            x = stage(x)
        if x.shape[-2:] != img.shape[-2:]:
            raise ShapeError(
                f"decoded {tuple(x.shape[-2:])} does not match image {tuple(img.shape[-2:])}"
            )
        out = self.head(x)
        if self.use_residual:
            out = img + out
        return out.clamp(0.0, 1.0)


class StyleMarkEncoder(nn.Module):
    """Full embedding network: style pyramid with payload, statistics
    alignment against the carrier's own content features, reconstruction."""

    def __init__(
        self,
        length: int,
        content_encoder: ContentEncoder,
        widths: tuple[int, ...] = (16, 32, 64, 128),
        use_residual: bool = True,
    ):
        super().__init__()
        self.length = length
        self.content_encoder = content_encoder
        self.style_encoder = StyleEncoder(length, widths)
        self.adapter = nn.Conv2d(self.style_encoder.out_channels, widths[-1], 1)
        self.reconstructor = Reconstructor(length, widths[-1], widths, use_residual)

    def trainable_parameters(self):
        """Everything except the (frozen) content encoder."""
        yield from self.style_encoder.parameters()
        yield from self.adapter.parameters()
        yield from self.reconstructor.parameters()

    def forward(self, img: torch.Tensor, bits: torch.Tensor) -> torch.Tensor:
        f_con = self.content_encoder(img)[-1]
        g_deep = self.style_encoder(img, bits)[-1]
        f_wm = adain_align(self.adapter(g_deep), f_con)
        return self.reconstructor(f_wm, img, bits)


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.BatchNorm2d(channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.BatchNorm2d(channels),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.relu(x + self.body(x))


class BitDecoder(nn.Module):
    """Residual conv net -> global average pool -> fully connected -> sigmoid.

    Returns per-bit probabilities in (0, 1).
    """

    def __init__(
        self,
        length: int,
        widths: tuple[int, ...] = (32, 64, 128),
        blocks: tuple[int, ...] = (2, 3, 3),
    ):
        super().__init__()
        if len(widths) != len(blocks):
            raise ShapeError("widths and blocks must align")
        self.length = length
        layers: list[nn.Module] = []
        in_c = 3
        for c, n in zip(widths, blocks):
            layers.append(nn.Conv2d(in_c, c, 3, stride=2, padding=1))
            layers.append(nn.BatchNorm2d(c))
            layers.append(nn.ReLU(inplace=True))
            layers.extend(ResidualBlock(c) for _ in range(n))
            in_c = c
        self.features = nn.Sequential(*layers)
        init_conv_relu(self.features)
        self.fc = nn.Linear(in_c, length)

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        x = self.features(img)
        x = x.mean(dim=(2, 3))
        return torch.sigmoid(self.fc(x))


def threshold_bits(probs: torch.Tensor) -> torch.Tensor:
    """Per-bit probabilities -> {0,1} bits; exact 0.5 resolves to 0."""
    return (probs > 0.5).to(probs.dtype)
