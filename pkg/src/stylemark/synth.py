"""Procedural desk-scale corpora: painterly style images and structured
content scenes.

Real deployments point the pipeline at directories of actual artwork and
photos; these generators exist so the test and demo runs have deterministic,
license-free data with enough texture/structure variety to train on.
"""

from __future__ import annotations

import colorsys
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFilter


def _palette(rng: np.random.Generator, n: int) -> list[tuple[int, int, int]]:
    base_hue = rng.uniform(0, 1)
    colors = []
    for _ in range(n):
        h = (base_hue + rng.normal(0, 0.18)) % 1.0
        s = rng.uniform(0.35, 0.95)
        v = rng.uniform(0.35, 0.95)
        r, g, b = colorsys.hsv_to_rgb(h, s, v)
        colors.append((int(r * 255), int(g * 255), int(b * 255)))
    return colors


def _gradient(rng: np.random.Generator, size: int) -> np.ndarray:
    c0 = rng.uniform(0.1, 0.9, size=3)
    c1 = rng.uniform(0.1, 0.9, size=3)
    angle = rng.uniform(0, 2 * np.pi)
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    t = (np.cos(angle) * xx + np.sin(angle) * yy + 1) / 2
    return c0[None, None, :] + t[..., None] * (c1 - c0)[None, None, :]


def style_image(seed: int, size: int = 128) -> Image.Image:
    """One painterly style image: gradient wash, soft blobs, broad strokes.

    Deliberately low-entropy (smooth, wide elements) so the compact
    desk-scale feature bottleneck can generalize from a handful of images.
    """
    rng = np.random.default_rng(np.random.SeedSequence([97, seed]))
    base = (_gradient(rng, size).clip(0, 1) * 255).astype(np.uint8)
    im = Image.fromarray(base, "RGB")
    draw = ImageDraw.Draw(im)
    colors = _palette(rng, 6)

    for _ in range(int(rng.integers(3, 7))):
        cx, cy = rng.uniform(0, size, 2)
        rx, ry = rng.uniform(size * 0.12, size * 0.4, 2)
        draw.ellipse([cx - rx, cy - ry, cx + rx, cy + ry],
                     fill=colors[int(rng.integers(0, len(colors)))])

    # Broad oriented strokes: each image has its own dominant direction,
    # standing in for brushwork.
    theta0 = rng.uniform(0, np.pi)
    for _ in range(int(rng.integers(8, 18))):
        x, y = rng.uniform(0, size, 2)
        theta = theta0 + rng.normal(0, 0.3)
        length = rng.uniform(size * 0.12, size * 0.35)
        dx, dy = np.cos(theta) * length, np.sin(theta) * length
        width = int(rng.integers(max(2, size // 24), max(3, size // 10)))
        draw.line([x - dx, y - dy, x + dx, y + dy],
                  fill=colors[int(rng.integers(0, len(colors)))], width=width)

    im = im.filter(ImageFilter.GaussianBlur(radius=size * rng.uniform(0.015, 0.03)))
    grain = rng.normal(0, rng.uniform(0.5, 1.5), size=(size, size, 3))
    arr = np.asarray(im, dtype=np.float32) + grain
    return Image.fromarray(arr.clip(0, 255).astype(np.uint8), "RGB")


def content_image(seed: int, size: int = 128) -> Image.Image:
    """One structured content scene: sky/ground split plus simple solids."""
    rng = np.random.default_rng(np.random.SeedSequence([131, seed]))
    base = (_gradient(rng, size).clip(0, 1) * 255).astype(np.uint8)
    im = Image.fromarray(base, "RGB")
    draw = ImageDraw.Draw(im)
    colors = _palette(rng, 5)

    horizon = int(size * rng.uniform(0.45, 0.75))
    draw.rectangle([0, horizon, size, size], fill=colors[0])

    for _ in range(int(rng.integers(2, 5))):
        w = rng.uniform(size * 0.1, size * 0.25)
        h = rng.uniform(size * 0.12, size * 0.45)
        x = rng.uniform(0, size - w)
        draw.rectangle([x, horizon - h, x + w, horizon],
                       fill=colors[int(rng.integers(0, len(colors)))])

    cx, cy = rng.uniform(size * 0.1, size * 0.9), rng.uniform(size * 0.05, horizon * 0.8)
    r = rng.uniform(size * 0.06, size * 0.16)
    draw.ellipse([cx - r, cy - r, cx + r, cy + r],
                 fill=colors[int(rng.integers(0, len(colors)))])

    im = im.filter(ImageFilter.GaussianBlur(radius=size * rng.uniform(0.008, 0.02)))
    grain = rng.normal(0, rng.uniform(0.5, 1.5), size=(size, size, 3))
    arr = np.asarray(im, dtype=np.float32) + grain
    return Image.fromarray(arr.clip(0, 255).astype(np.uint8), "RGB")


def generate_corpus(
    out_dir: str | Path,
    n_style: int,
    n_content: int,
    seed: int = 0,
    size: int = 128,
) -> tuple[Path, Path]:
    """Write style/ and content/ PNG directories; returns the two paths."""
    out = Path(out_dir)
    style_dir = out / "style"
    content_dir = out / "content"
    style_dir.mkdir(parents=True, exist_ok=True)
    content_dir.mkdir(parents=True, exist_ok=True)
    for i in range(n_style):
        path = style_dir / f"style_{i:05d}.png"
        if not path.exists():
            style_image(seed * 1_000_003 + i, size).save(path)
    for i in range(n_content):
        path = content_dir / f"content_{i:05d}.png"
        if not path.exists():
            content_image(seed * 1_000_003 + i, size).save(path)
    return style_dir, content_dir
