"""Architecture and training hyper-parameters with the small "desk" and full-size "paper" presets."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass


@dataclass(frozen=True)
class ModelConfig:
    # inputs
    n_frames: int = 8
    image_size: int = 32
    n_beams: int = 32
    n_antennas: int = 32
    beam_encoding: str = "onehot"   # "onehot" index grid, or "complex" (re, im) codeword grid
    # CNN branch over the beam grid
    cnn_filters: tuple[int, ...] = (8, 16, 16, 32)
    cnn_kernel: int = 3
    cnn_stride: int = 1
    cnn_dropout: float = 0.2
    # ViT branch over frames
    patch_size: int = 8
    embed_dim: int = 32
    encoder_layers: int = 2
    n_heads: int = 2
    mlp_hidden: int = 64
    # fusion and recurrent head
    fusion_dim: int = 64
    gru_sizes: tuple[int, ...] = (32, 16)
    gru_dropout: float = 0.3
    # baseline input
    max_boxes: int = 6

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ValueError(f"patch size {self.patch_size} does not divide image side {self.image_size}")
        if self.embed_dim % self.n_heads:
            raise ValueError(f"{self.n_heads} heads do not divide embedding width {self.embed_dim}")
        if self.beam_encoding not in ("onehot", "complex"):
            raise ValueError(f"beam_encoding must be 'onehot' or 'complex', got {self.beam_encoding!r}")
        if self.n_frames < 1 or self.n_beams < 1 or not self.gru_sizes or not self.cnn_filters:
            raise ValueError("n_frames, n_beams, gru_sizes, and cnn_filters must be non-empty/positive")
        for name in ("cnn_dropout", "gru_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")

    @property
    def n_tokens(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def beam_width(self) -> int:
        """Width of the per-frame beam encoding row."""
        return self.n_beams if self.beam_encoding == "onehot" else 2 * self.n_antennas

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    lr_cnn: float = 1e-3
    lr_vit: float = 1e-3
    lr_head: float = 3e-3
    clip_threshold: float | None = 1.0
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if min(self.lr_cnn, self.lr_vit, self.lr_head) < 0:
            raise ValueError("learning rates must be non-negative")
        if self.clip_threshold is not None and self.clip_threshold <= 0:
            raise ValueError("clip threshold must be positive when enabled")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


DESK = ModelConfig()
PAPER = ModelConfig(
    n_frames=8, image_size=224, n_beams=128, n_antennas=128,
    cnn_filters=(32, 64, 128, 256), patch_size=16, embed_dim=512, encoder_layers=6, n_heads=8,
    mlp_hidden=2048, fusion_dim=256, gru_sizes=(256, 128),
)
PAPER_TRAIN = TrainConfig(epochs=1000, batch_size=32, lr_cnn=1e-3, lr_vit=1e-5, lr_head=1e-4)
DESK_TRAIN = TrainConfig()


def model_preset(scale: str, **overrides) -> ModelConfig:
    presets = {"desk": DESK, "paper": PAPER}
    if scale not in presets:
        raise ValueError(f"unknown scale {scale!r}; choose from {sorted(presets)}")
    return presets[scale].replace(**overrides)


def train_preset(scale: str, **overrides) -> TrainConfig:
    presets = {"desk": DESK_TRAIN, "paper": PAPER_TRAIN}
    if scale not in presets:
        raise ValueError(f"unknown scale {scale!r}; choose from {sorted(presets)}")
    return presets[scale].replace(**overrides)
