"""Aggregate of all trained parts plus convenience embed/extract entry points."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .config import TrainingConfig
from .data import quantize_8bit
from .networks import BitDecoder, ContentEncoder, StyleMarkEncoder, threshold_bits
from .stylizer import AdainGenerator, StylizerRegistry

# Generator lineup: the in-loop target plus two held-out variants that stand
# in for unseen stylizers (different init seed / different widths).
GENERATOR_SPECS: dict[str, float] = {
    "adain": 1.0,
    "variant_seed": 1.0,
    "variant_wide": 1.5,
}
WHITEBOX_NAME = "adain"


@dataclass
class StylemarkSystem:
    config: TrainingConfig
    extractor: ContentEncoder
    encoder: StyleMarkEncoder
    decoder: BitDecoder
    generators: dict[str, AdainGenerator] = field(default_factory=dict)
    generator_specs: dict[str, float] = field(default_factory=dict)

    def eval_mode(self) -> "StylemarkSystem":
        for module in self.modules().values():
            module.eval()
        return self

    def modules(self) -> dict[str, torch.nn.Module]:
        out: dict[str, torch.nn.Module] = {
            "extractor": self.extractor,
            "encoder": self.encoder,
            "decoder": self.decoder,
        }
        for name, gen in self.generators.items():
            out[f"generator.{name}"] = gen
        return out

    def embed(self, img: torch.Tensor, bits: torch.Tensor) -> torch.Tensor:
        """Watermarked image, same shape as img, values in [0, 1]."""
        squeeze = img.dim() == 3
        x = img.unsqueeze(0) if squeeze else img
        b = bits.unsqueeze(0) if bits.dim() == 1 else bits
        out = self.encoder(x, b)
        return out.squeeze(0) if squeeze else out

    def embed_published(self, img: torch.Tensor, bits: torch.Tensor) -> torch.Tensor:
        """Embed plus the 8-bit quantization every published file undergoes."""
        with torch.no_grad():
            return quantize_8bit(self.embed(img, bits))

    def extract_probs(self, img: torch.Tensor) -> torch.Tensor:
        squeeze = img.dim() == 3
        x = img.unsqueeze(0) if squeeze else img
        with torch.no_grad():
            probs = self.decoder(x)
        return probs.squeeze(0) if squeeze else probs

    def extract_bits(self, img: torch.Tensor) -> torch.Tensor:
        return threshold_bits(self.extract_probs(img))

    def stylizer_registry(self) -> StylizerRegistry:
        registry = StylizerRegistry()
        for name, gen in self.generators.items():
            if name == WHITEBOX_NAME:
                registry.register_whitebox(name, self.extractor, gen)
            else:
                registry.register_checkpoint_variant(name, self.extractor, gen)
        return registry


def build_system(
    cfg: TrainingConfig, generator_specs: dict[str, float] | None = None
) -> StylemarkSystem:
    """Construct a fresh (untrained) system; weight init is seeded by cfg."""
    torch.manual_seed(cfg.seed)
    widths = cfg.channel_widths
    extractor = ContentEncoder(widths)
    encoder = StyleMarkEncoder(
        cfg.watermark_length, extractor, widths, use_residual=cfg.use_residual
    )
    decoder_widths = tuple(widths[-len(cfg.decoder_blocks):])
    decoder = BitDecoder(cfg.watermark_length, decoder_widths, cfg.decoder_blocks)
    specs = dict(generator_specs if generator_specs is not None else GENERATOR_SPECS)
    generators = {}
    for i, (name, mult) in enumerate(sorted(specs.items())):
        torch.manual_seed(cfg.seed * 1009 + i + 1)
        generators[name] = AdainGenerator(widths[-1], widths, mult)
    return StylemarkSystem(cfg, extractor, encoder, decoder, generators, specs)
