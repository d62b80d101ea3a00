"""Training configuration, loss weights, and the desk/full-scale presets."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class LossWeights:
    """Balancing weights for the training objectives.

    Defaults follow the reference full-scale setup: mse 1, dsl 0.2,
    inv 1, wm 0.002.
    """

    mse: float = 1.0
    dsl: float = 0.2
    inv: float = 1.0
    wm: float = 0.002

    def validate(self) -> None:
        for name in ("mse", "dsl", "inv", "wm"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be nonnegative")


@dataclass
class TrainingConfig:
    """Every knob of the two-stage training run plus the bootstrap."""

    # Core schedule (full-scale defaults).
    stage1_iters: int = 4000
    stage2_iters: int = 200
    batch_size: int = 16
    learning_rate: float = 1e-5
    stage2_learning_rate: float | None = None  # None -> learning_rate
    adam_betas: tuple[float, float] = (0.9, 0.999)
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0

    # Geometry / capacity.
    image_size: int = 64
    watermark_length: int = 30
    channel_widths: tuple[int, ...] = (16, 32, 64, 128)
    decoder_blocks: tuple[int, ...] = (2, 3, 3)
    desk_scale: bool = True

    # Dataset split sizes (train, val, test) used when building manifests.
    counts: tuple[int, int, int] = (8, 2, 2)

    # Bootstrap pretraining of the frozen extractor and stylizer generators.
    bootstrap_ae_iters: int = 700
    bootstrap_gen_iters: int = 700
    bootstrap_variant_iters: int = 500
    bootstrap_lr: float = 1e-3
    bootstrap_style_weight: float = 1.0

    # Stage-2 noise pool interpretation and ablation toggles.
    noise_sigma_is_std: bool = False
    use_residual: bool = True
    freeze_content_encoder: bool = True

    # Validation cadence.
    stage1_val_every: int = 100
    stage2_val_every: int = 20

    deterministic: bool = False

    def __post_init__(self) -> None:
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        self.adam_betas = tuple(self.adam_betas)  # type: ignore[assignment]
        self.channel_widths = tuple(self.channel_widths)  # type: ignore[assignment]
        self.decoder_blocks = tuple(self.decoder_blocks)  # type: ignore[assignment]
        self.counts = tuple(self.counts)  # type: ignore[assignment]

    def validate(self) -> None:
        if self.stage1_iters < 0 or self.stage2_iters < 0:
            raise ValueError("iteration counts must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.watermark_length < 1:
            raise ValueError("watermark_length must be positive")
        if self.image_size % (2 ** len(self.channel_widths)) != 0:
            raise ValueError(
                f"image_size {self.image_size} must be divisible by "
                f"2^{len(self.channel_widths)}"
            )
        self.weights.validate()

    @property
    def stage2_lr(self) -> float:
        return self.stage2_learning_rate if self.stage2_learning_rate is not None else self.learning_rate

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainingConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "TrainingConfig":
        cfg = cls.from_dict(json.loads(Path(path).read_text()))
        cfg.validate()
        return cfg


def smoke_config(seed: int = 0) -> TrainingConfig:
    """Desk-scale smoke preset: 8 train pairs at 64x64, short schedule.

    The learning rate is raised well above the full-scale 1e-5: the desk
    networks are ~100x smaller and the schedule ~10x shorter, so the
    full-scale rate would leave the run far from convergence.
    """
    return TrainingConfig(
        stage1_iters=500,
        stage2_iters=120,
        batch_size=8,
        learning_rate=2e-3,
        stage2_learning_rate=5e-4,
        seed=seed,
        image_size=64,
        counts=(8, 2, 2),
        bootstrap_ae_iters=600,
        bootstrap_gen_iters=500,
        bootstrap_variant_iters=400,
        desk_scale=True,
    )


def acceptance_config(seed: int = 0) -> TrainingConfig:
    """Desk-scale generalization preset: 256 train pairs, longer schedule."""
    return TrainingConfig(
        stage1_iters=2000,
        stage2_iters=200,
        batch_size=16,
        learning_rate=1e-3,
        stage2_learning_rate=3e-4,
        seed=seed,
        image_size=64,
        counts=(256, 32, 32),
        bootstrap_ae_iters=1200,
        bootstrap_gen_iters=1000,
        bootstrap_variant_iters=700,
        desk_scale=True,
    )


def full_scale_config(seed: int = 0) -> TrainingConfig:
    """Documented full-scale setup (256x256, 2000 pairs); not run in tests."""
    return TrainingConfig(
        stage1_iters=4000,
        stage2_iters=200,
        batch_size=16,
        learning_rate=1e-5,
        seed=seed,
        image_size=256,
        channel_widths=(64, 128, 256, 512),
        decoder_blocks=(3, 4, 6, 3),
        counts=(2000, 500, 500),
        bootstrap_ae_iters=20000,
        bootstrap_gen_iters=20000,
        bootstrap_variant_iters=20000,
        desk_scale=False,
    )
