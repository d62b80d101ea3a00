"""Robust style-feature watermarking: embed an invisible bit payload into an
art style image so it survives arbitrary style transfer, then extract and
attribute it."""

__version__ = "0.1.0"
