"""Style-transfer engine: the differentiable in-loop stylizer and a plug-in
harness for external stylizers used only at evaluation time."""

from __future__ import annotations

import json
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn as nn

from .data import load_image, save_image
from .errors import ExternalStylizerFailure, ShapeError, StylemarkError
from .networks import ContentEncoder, adain_align, init_conv_relu

EXTERNAL_TIMEOUT_S = 60.0


class AdainGenerator(nn.Module):
    """Renders an image from deep aligned features: per stage nearest x2
    upsample + conv, sigmoid output. width_mult scales internal widths so
    differently sized variants can stand in for unseen stylizers."""

    def __init__(
        self,
        deep_channels: int,
        widths: tuple[int, ...] = (16, 32, 64, 128),
        width_mult: float = 1.0,
    ):
        super().__init__()
        out_widths = [max(8, int(c * width_mult)) for c in [*reversed(widths[:-1]), widths[0]]]
        layers: list[nn.Module] = []
        in_c = deep_channels
        for out_c in out_widths:
            layers.append(nn.Upsample(scale_factor=2, mode="nearest"))
            layers.append(nn.Conv2d(in_c, out_c, 3, padding=1))
            layers.append(nn.ReLU(inplace=True))
            in_c = out_c
        layers.append(nn.Conv2d(in_c, 3, 3, padding=1))
        self.body = nn.Sequential(*layers)
        init_conv_relu(self.body)

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.body(feats))


def adain_stylize(
    extractor: ContentEncoder,
    generator: AdainGenerator,
    style: torch.Tensor,
    content: torch.Tensor,
) -> torch.Tensor:
    """Differentiable statistics-transfer stylization (batched or single)."""
    squeeze = style.dim() == 3
    s = style.unsqueeze(0) if squeeze else style
    c = content.unsqueeze(0) if squeeze else content
    if s.shape[-2:] != c.shape[-2:]:
        raise ShapeError(f"style {tuple(s.shape)} vs content {tuple(c.shape)}")
    t = adain_align(extractor(s)[-1], extractor(c)[-1])
    out = generator(t)
    return out.squeeze(0) if squeeze else out


@dataclass(frozen=True)
class StylizerHandle:
    name: str
    kind: str  # whitebox_adain | external_checkpoint | external_command
    differentiable: bool


class StylizerRegistry:
    """Named stylizers for training and evaluation.

    Exactly one whitebox_adain entry (the training target) may exist, and it
    is the only differentiable one. Checkpoint-backed variants run under
    no_grad; command-backed entries follow the protocol
    `cmd <style.png> <content.png> <out.png>`.
    """

    def __init__(self):
        self._entries: dict[str, tuple[StylizerHandle, object]] = {}

    def register_whitebox(self, name: str, extractor: ContentEncoder, generator: AdainGenerator) -> None:
        if any(h.kind == "whitebox_adain" for h, _ in self._entries.values()):
            raise StylemarkError("a whitebox training stylizer is already registered")
        handle = StylizerHandle(name, "whitebox_adain", differentiable=True)
        self._entries[name] = (handle, (extractor, generator))

    def register_checkpoint_variant(self, name: str, extractor: ContentEncoder, generator: AdainGenerator) -> None:
        handle = StylizerHandle(name, "external_checkpoint", differentiable=False)
        self._entries[name] = (handle, (extractor, generator))

    def register_command(self, name: str, command: list[str], image_size: int) -> None:
        handle = StylizerHandle(name, "external_command", differentiable=False)
        self._entries[name] = (handle, (list(command), image_size))

    def names(self) -> list[str]:
        return list(self._entries)

    def handle(self, name: str) -> StylizerHandle:
        if name not in self._entries:
            raise KeyError(f"stylizer {name!r} is not registered")
        return self._entries[name][0]

    @property
    def whitebox_name(self) -> str:
        for handle, _ in self._entries.values():
            if handle.kind == "whitebox_adain":
                return handle.name
        raise StylemarkError("no whitebox stylizer registered")

    def stylize(self, name: str, style: torch.Tensor, content: torch.Tensor) -> torch.Tensor:
        handle, impl = self._entries[name] if name in self._entries else (None, None)
        if handle is None:
            raise KeyError(f"stylizer {name!r} is not registered")
        if handle.kind == "whitebox_adain":
            extractor, generator = impl
            return adain_stylize(extractor, generator, style, content)
        if handle.kind == "external_checkpoint":
            extractor, generator = impl
            with torch.no_grad():
                return adain_stylize(extractor, generator, style, content)
        command, image_size = impl
        return _run_external(command, style, content, image_size)

    def load_commands(self, registry_path: str | Path, image_size: int) -> None:
        """Merge external command entries from a JSON registry file."""
        data = json.loads(Path(registry_path).read_text())
        for name, entry in data.items():
            kind = entry.get("kind")
            if kind == "external_command":
                self.register_command(name, entry["command"], image_size)
            else:
                raise StylemarkError(
                    f"registry entry {name!r}: only external_command entries "
                    f"may be declared in a registry file (got {kind!r})"
                )


def _run_external(
    command: list[str], style: torch.Tensor, content: torch.Tensor, image_size: int
) -> torch.Tensor:
    """Invoke `cmd style.png content.png out.png` in a private temp dir."""
    if style.dim() != 3 or content.dim() != 3:
        raise ShapeError("external stylizers take single (3, H, W) images")
    with tempfile.TemporaryDirectory(prefix="stylemark-ext-") as tmp:
        tmp_path = Path(tmp)
        style_path = tmp_path / "style.png"
        content_path = tmp_path / "content.png"
        out_path = tmp_path / "out.png"
        save_image(style, style_path)
        save_image(content, content_path)
        argv = [*command, str(style_path), str(content_path), str(out_path)]
        try:
            proc = subprocess.run(
                argv, capture_output=True, timeout=EXTERNAL_TIMEOUT_S, check=False
            )
        except (subprocess.TimeoutExpired, OSError) as exc:
            raise ExternalStylizerFailure(f"{argv[0]}: {exc}") from exc
        if proc.returncode != 0:
            raise ExternalStylizerFailure(
                f"{argv[0]} exited {proc.returncode}: {proc.stderr.decode(errors='replace')[:500]}"
            )
        try:
            return load_image(out_path, image_size)
        except StylemarkError as exc:
            raise ExternalStylizerFailure(f"unreadable stylizer output: {exc}") from exc
