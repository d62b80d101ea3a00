"""Corpus ingestion, payload sampling, manifests, and image-space primitives.

All images travel through the pipeline as float32 torch tensors of shape
(3, H, W) with values in [0, 1].
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, UnidentifiedImageError

from .errors import (
    InsufficientData,
    InvalidLength,
    UnreadableImage,
    UnsupportedColorMode,
)

logger = logging.getLogger(__name__)

# ITU-R BT.601 luma weights.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}


def load_image(path: str | Path, size: int) -> torch.Tensor:
    """Decode an 8-bit RGB raster and bilinearly resize it to size x size.

    Pixel values are divided by 255 into [0, 1]. RGBA alpha is dropped;
    any other color mode (CMYK, palette, grayscale) is rejected.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode == "RGBA":
                im = im.convert("RGB")
            if im.mode != "RGB":
                raise UnsupportedColorMode(f"{path}: unsupported mode {im.mode}")
            arr = np.asarray(im, dtype=np.float32) / 255.0
    except UnsupportedColorMode:
        raise
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise UnreadableImage(f"{path}: {exc}") from exc
    img = torch.from_numpy(arr).permute(2, 0, 1).contiguous()
    return resize_image(img, size)


def resize_image(img: torch.Tensor, size: int) -> torch.Tensor:
    """Plain bilinear resize (no antialias) of a (3, H, W) tensor in [0, 1]."""
    if img.shape[-2:] == (size, size):
        return img
    out = F.interpolate(
        img.unsqueeze(0), size=(size, size), mode="bilinear", align_corners=False
    ).squeeze(0)
    return out.clamp(0.0, 1.0)


def save_image(img: torch.Tensor, path: str | Path) -> None:
    """Write a (3, H, W) float tensor in [0, 1] as an 8-bit PNG."""
    arr = (img.detach().clamp(0, 1).mul(255).round().to(torch.uint8)
           .permute(1, 2, 0).cpu().numpy())
    Image.fromarray(arr, mode="RGB").save(Path(path), format="PNG")


def quantize_8bit(img: torch.Tensor) -> torch.Tensor:
    """Round to the 8-bit grid, as publishing the image as a file would."""
    return img.clamp(0, 1).mul(255).round().div(255)


def to_grayscale(img: torch.Tensor) -> torch.Tensor:
    """BT.601 luma of a (..., 3, H, W) tensor, shape (..., 1, H, W)."""
    r, g, b = img.unbind(dim=-3)
    luma = LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b
    return luma.unsqueeze(-3)


def gray3(img: torch.Tensor) -> torch.Tensor:
    """Grayscale replicated back to 3 channels (for the RGB extractor)."""
    luma = to_grayscale(img)
    return luma.expand(*img.shape[:-3], 3, *img.shape[-2:])


def sample_watermark(rng: np.random.Generator, length: int) -> torch.Tensor:
    """Draw `length` independent fair-coin bits as a float {0,1} vector."""
    if length < 1:
        raise InvalidLength(f"watermark length must be >= 1, got {length}")
    bits = rng.integers(0, 2, size=length)
    return torch.from_numpy(bits.astype(np.float32))


def sample_watermark_batch(rng: np.random.Generator, batch: int, length: int) -> torch.Tensor:
    if length < 1:
        raise InvalidLength(f"watermark length must be >= 1, got {length}")
    bits = rng.integers(0, 2, size=(batch, length))
    return torch.from_numpy(bits.astype(np.float32))


@dataclass
class DatasetManifest:
    """Deterministic (seed, split)-addressed list of style/content paths."""

    style_paths: list[str]
    content_paths: list[str]
    split: str
    seed: int

    def __len__(self) -> int:
        return len(self.style_paths)

    def to_dict(self) -> dict:
        return {
            "style_paths": list(self.style_paths),
            "content_paths": list(self.content_paths),
            "split": self.split,
            "seed": self.seed,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        return cls(**json.loads(Path(path).read_text()))


def _list_decodable(directory: str | Path) -> list[str]:
    """Sorted decodable image paths under directory; bad files are skipped."""
    paths = []
    for p in sorted(Path(directory).iterdir()):
        if p.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        try:
            with Image.open(p) as im:
                im.verify()
        except Exception as exc:
            logger.warning("skipping unreadable image %s: %s", p, exc)
            continue
        paths.append(str(p))
    return paths


def build_manifest(
    style_dir: str | Path,
    content_dir: str | Path,
    counts: tuple[int, int, int],
    seed: int,
) -> dict[str, DatasetManifest]:
    """Partition both corpora into disjoint train/val/test manifests.

    The shuffle and the style/content pairing are pure functions of the
    seed, so the same inputs always yield byte-identical manifests.
    """
    n_train, n_val, n_test = counts
    total = n_train + n_val + n_test
    style = _list_decodable(style_dir)
    content = _list_decodable(content_dir)
    if len(style) < total:
        raise InsufficientData(
            f"style dir has {len(style)} decodable images, need {total}"
        )
    if len(content) < total:
        raise InsufficientData(
            f"content dir has {len(content)} decodable images, need {total}"
        )
    rng = np.random.default_rng(seed)
    style_order = [style[i] for i in rng.permutation(len(style))]
    content_order = [content[i] for i in rng.permutation(len(content))]
    manifests = {}
    offsets = {"train": (0, n_train), "val": (n_train, n_val), "test": (n_train + n_val, n_test)}
    for split, (start, count) in offsets.items():
        manifests[split] = DatasetManifest(
            style_paths=style_order[start : start + count],
            content_paths=content_order[start : start + count],
            split=split,
            seed=seed,
        )
    return manifests


class PairBatcher:
    """Serves (style, content) batches from a manifest, fully in memory.

    Style images cycle in a freshly shuffled order each epoch; content
    images are drawn uniformly per iteration, so style/content pairing is
    re-randomized continuously. Both streams derive from the given seed.
    """

    def __init__(self, manifest: DatasetManifest, size: int, batch_size: int, seed: int):
        if len(manifest) == 0:
            raise InsufficientData(f"manifest for split {manifest.split} is empty")
        self.styles = torch.stack([load_image(p, size) for p in manifest.style_paths])
        self.contents = torch.stack([load_image(p, size) for p in manifest.content_paths])
        self.batch_size = batch_size
        self.rng = np.random.default_rng(seed)
        self._epoch_order: list[int] = []

    def _next_style_indices(self) -> np.ndarray:
        while len(self._epoch_order) < self.batch_size:
            self._epoch_order.extend(self.rng.permutation(len(self.styles)).tolist())
        picked = self._epoch_order[: self.batch_size]
        del self._epoch_order[: self.batch_size]
        return np.asarray(picked)

    def next_batch(self) -> tuple[torch.Tensor, torch.Tensor, np.ndarray]:
        """Returns (style batch, content batch, style indices)."""
        idx = self._next_style_indices()
        cidx = self.rng.integers(0, len(self.contents), size=self.batch_size)
        return self.styles[idx], self.contents[cidx], idx
