"""Pixel-level distortions: the evaluation suite and the fine-tuning noise
pool. Every distortion maps [0,1] images to [0,1] images; randomness is
always drawn from an explicit numpy generator."""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .data import to_grayscale
from .errors import CodecFailure, EmptyPool, InvalidSpec

KINDS = (
    "identity",
    "brightness",
    "contrast",
    "hue",
    "saturation",
    "gaussian_noise",
    "gaussian_blur",
    "jpeg",
    "resize",
)


@dataclass(frozen=True)
class NoiseSpec:
    """Tagged description of one distortion.

    factor: blend/rotation factor for the color ops; sigma: noise scale
    (variance by default, see sigma_is_std) or blur sigma; kernel: odd blur
    kernel size; qf: JPEG quality; scale: resize ratio.
    """

    kind: str
    factor: float | None = None
    sigma: float | None = None
    kernel: int | None = None
    qf: int | None = None
    scale: float | None = None
    sigma_is_std: bool = False

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise InvalidSpec(f"unknown distortion kind {self.kind!r}")
        if self.kind in ("brightness", "contrast", "hue", "saturation") and self.factor is None:
            raise InvalidSpec(f"{self.kind} requires a factor")
        if self.kind == "gaussian_noise":
            if self.sigma is None or self.sigma < 0:
                raise InvalidSpec("gaussian_noise requires sigma >= 0")
        if self.kind == "gaussian_blur":
            if self.sigma is None or self.sigma < 0:
                raise InvalidSpec("gaussian_blur requires sigma >= 0")
            if self.kernel is None or self.kernel < 1 or self.kernel % 2 == 0:
                raise InvalidSpec("gaussian_blur requires an odd kernel >= 1")
        if self.kind == "jpeg":
            if self.qf is None or not 1 <= self.qf <= 100:
                raise InvalidSpec("jpeg requires qf in [1, 100]")
        if self.kind == "resize":
            if self.scale is None or not 0 < self.scale <= 1:
                raise InvalidSpec("resize requires scale in (0, 1]")

    @property
    def label(self) -> str:
        if self.kind == "brightness" or self.kind == "contrast" or self.kind == "saturation":
            return f"{self.kind}(f={self.factor:g})"
        if self.kind == "hue":
            return f"hue(f={self.factor:g})"
        if self.kind == "gaussian_noise":
            return f"gaussian_noise(sigma={self.sigma:g})"
        if self.kind == "gaussian_blur":
            return f"gaussian_blur({self.kernel},{self.sigma:g})"
        if self.kind == "jpeg":
            return f"jpeg(qf={self.qf})"
        if self.kind == "resize":
            return f"resize(p={self.scale:g})"
        return self.kind

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind}
        for key in ("factor", "sigma", "kernel", "qf", "scale"):
            if getattr(self, key) is not None:
                out[key] = getattr(self, key)
        if self.kind == "gaussian_noise":
            out["sigma_is_std"] = self.sigma_is_std
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "NoiseSpec":
        spec = cls(**data)
        spec.validate()
        return spec


def rgb_to_hsv(rgb: torch.Tensor) -> torch.Tensor:
    r, g, b = rgb.unbind(-3)
    maxc = rgb.max(dim=-3).values
    minc = rgb.min(dim=-3).values
    delta = maxc - minc
    safe_delta = torch.where(delta == 0, torch.ones_like(delta), delta)
    rc = (maxc - r) / safe_delta
    gc = (maxc - g) / safe_delta
    bc = (maxc - b) / safe_delta
    h = torch.where(
        maxc == r, bc - gc, torch.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc)
    )
    h = (h / 6.0) % 1.0
    h = torch.where(delta == 0, torch.zeros_like(h), h)
    s = torch.where(maxc == 0, torch.zeros_like(maxc), delta / maxc.clamp(min=1e-12))
    return torch.stack([h, s, maxc], dim=-3)


def hsv_to_rgb(hsv: torch.Tensor) -> torch.Tensor:
    h, s, v = hsv.unbind(-3)
    h6 = (h % 1.0) * 6.0
    i = torch.floor(h6)
    f = h6 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.long() % 6
    r = torch.where(i == 0, v, torch.where(i == 1, q, torch.where(i == 2, p,
        torch.where(i == 3, p, torch.where(i == 4, t, v)))))
    g = torch.where(i == 0, t, torch.where(i == 1, v, torch.where(i == 2, v,
        torch.where(i == 3, q, torch.where(i == 4, p, p)))))
    b = torch.where(i == 0, p, torch.where(i == 1, p, torch.where(i == 2, t,
        torch.where(i == 3, v, torch.where(i == 4, v, q)))))
    return torch.stack([r, g, b], dim=-3)


def gaussian_kernel_1d(size: int, sigma: float) -> np.ndarray:
    """Normalized float64 Gaussian taps; sums to 1 to ~machine precision."""
    half = (size - 1) / 2
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(coords ** 2) / (2 * max(sigma, 1e-12) ** 2))
    return g / g.sum()


def _blur(img: torch.Tensor, kernel: int, sigma: float) -> torch.Tensor:
    taps = torch.from_numpy(gaussian_kernel_1d(kernel, sigma)).to(img.dtype)
    c = img.shape[1]
    kh = taps.view(1, 1, kernel, 1).expand(c, 1, kernel, 1)
    kw = taps.view(1, 1, 1, kernel).expand(c, 1, 1, kernel)
    r = kernel // 2
    x = F.pad(img, (0, 0, r, r), mode="reflect")
    x = F.conv2d(x, kh, groups=c)
    x = F.pad(x, (r, r, 0, 0), mode="reflect")
    x = F.conv2d(x, kw, groups=c)
    return x


def jpeg_roundtrip(img: torch.Tensor, qf: int) -> torch.Tensor:
    """Encode through a real baseline JPEG codec at quality qf and decode.

    Accepts (3, H, W) or (B, 3, H, W); not differentiable.
    """
    if not 1 <= qf <= 100:
        raise InvalidSpec(f"jpeg qf must be in [1, 100], got {qf}")
    squeeze = img.dim() == 3
    batch = img.unsqueeze(0) if squeeze else img
    outs = []
    for one in batch:
        arr = (one.detach().clamp(0, 1).mul(255).round().to(torch.uint8)
               .permute(1, 2, 0).cpu().numpy())
        try:
            buf = io.BytesIO()
            Image.fromarray(arr, "RGB").save(buf, format="JPEG", quality=int(qf))
            buf.seek(0)
            with Image.open(buf) as im:
                back = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
        except Exception as exc:
            raise CodecFailure(f"jpeg round trip failed: {exc}") from exc
        outs.append(torch.from_numpy(back).permute(2, 0, 1))
    out = torch.stack(outs).to(img.dtype)
    return out.squeeze(0) if squeeze else out


def apply_distortion(
    spec: NoiseSpec, img: torch.Tensor, rng: np.random.Generator | None = None
) -> torch.Tensor:
    """Apply one distortion to a (3, H, W) or (B, 3, H, W) image in [0, 1].

    rng is consumed only by the stochastic kinds (gaussian_noise).
    """
    spec.validate()
    squeeze = img.dim() == 3
    x = img.unsqueeze(0) if squeeze else img

    if spec.kind == "identity":
        out = x.clone()
    elif spec.kind == "brightness":
        out = spec.factor * x
    elif spec.kind == "contrast":
        m = to_grayscale(x).mean(dim=(1, 2, 3), keepdim=True)
        out = m + spec.factor * (x - m)
    elif spec.kind == "saturation":
        g = to_grayscale(x)
        out = g + spec.factor * (x - g)
    elif spec.kind == "hue":
        hsv = rgb_to_hsv(x.clamp(0, 1))
        h, s, v = hsv.unbind(-3)
        out = hsv_to_rgb(torch.stack([(h + spec.factor) % 1.0, s, v], dim=-3))
    elif spec.kind == "gaussian_noise":
        if rng is None:
            raise InvalidSpec("gaussian_noise requires an rng")
        std = spec.sigma if spec.sigma_is_std else float(np.sqrt(spec.sigma))
        noise = torch.from_numpy(
            rng.standard_normal(tuple(x.shape)).astype(np.float32) * std
        ).to(x.dtype)
        out = x + noise
    elif spec.kind == "gaussian_blur":
        out = _blur(x, spec.kernel, spec.sigma)
    elif spec.kind == "jpeg":
        out = jpeg_roundtrip(x, spec.qf)
    elif spec.kind == "resize":
        h, w = x.shape[-2:]
        dh = max(1, round(spec.scale * h))
        dw = max(1, round(spec.scale * w))
        down = F.interpolate(x, size=(dh, dw), mode="bilinear", align_corners=False)
        out = F.interpolate(down, size=(h, w), mode="bilinear", align_corners=False)
    else:  # unreachable after validate()
        raise InvalidSpec(spec.kind)

    out = out.clamp(0.0, 1.0)
    return out.squeeze(0) if squeeze else out


def sample_from_pool(pool: Sequence[NoiseSpec], rng: np.random.Generator) -> NoiseSpec:
    """Uniform draw of one spec; callers draw once per mini-batch."""
    if not pool:
        raise EmptyPool("noise pool is empty")
    return pool[int(rng.integers(0, len(pool)))]


def stage2_noise_pool(sigma_is_std: bool = False) -> list[NoiseSpec]:
    """The fine-tuning pool: Gaussian noise, JPEG, Gaussian blur."""
    return [
        NoiseSpec(kind="gaussian_noise", sigma=0.005, sigma_is_std=sigma_is_std),
        NoiseSpec(kind="jpeg", qf=50),
        NoiseSpec(kind="gaussian_blur", kernel=3, sigma=1.0),
    ]


def evaluation_suite(sigma_is_std: bool = False) -> list[NoiseSpec]:
    """The full common-distortion evaluation suite and its default knobs."""
    return [
        NoiseSpec(kind="brightness", factor=0.5),
        NoiseSpec(kind="contrast", factor=0.5),
        NoiseSpec(kind="hue", factor=0.1),
        NoiseSpec(kind="gaussian_noise", sigma=0.005, sigma_is_std=sigma_is_std),
        NoiseSpec(kind="gaussian_blur", kernel=3, sigma=1.0),
        NoiseSpec(kind="jpeg", qf=50),
        NoiseSpec(kind="resize", scale=0.5),
        NoiseSpec(kind="saturation", factor=0.5),
    ]
