"""CNN + ViT + GRU blockage predictor and the bounding-box baseline."""
from __future__ import annotations

import numpy as np

from ..channel import CodebookConfig, build_codebook
from ..numcore import ops
from ..numcore.nn import GRU, Conv2d, Dropout, EncoderBlock, LayerNorm, Linear, Module, Parameter
from ..numcore.tensor import ShapeError, Tensor
from .config import ModelConfig


def encode_beams(beams: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """(B, p) beam indices -> (B, 1, p, width) single-channel grid."""
    beams = np.asarray(beams)
    if beams.size and (beams.min() < 0 or beams.max() >= cfg.n_beams):
        raise ValueError(f"beam index out of range [0, {cfg.n_beams}): got {int(beams.min())}..{int(beams.max())}")
    if cfg.beam_encoding == "onehot":
        grid = ops.one_hot(beams, cfg.n_beams)
    else:
        vectors = build_codebook(CodebookConfig(cfg.n_beams, cfg.n_antennas)).vectors
        w = vectors[beams.astype(np.int64)]
        grid = np.concatenate([w.real, w.imag], axis=-1)
    return grid[:, None].astype(np.float64)


def extract_patches(images: np.ndarray, patch: int) -> np.ndarray:
    """(F, H, W) -> (F, tokens, patch*patch), tokens in row-major patch order."""
    F, H, W = images.shape
    if H % patch or W % patch:
        raise ShapeError(f"patch size {patch} does not divide image {H}x{W}")
    x = images.reshape(F, H // patch, patch, W // patch, patch).transpose(0, 1, 3, 2, 4)
    return x.reshape(F, (H // patch) * (W // patch), patch * patch)


class CNNBranch(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        pad = cfg.cnn_kernel // 2
        chans = (1,) + tuple(cfg.cnn_filters)
        self.convs = [Conv2d(chans[i], chans[i + 1], cfg.cnn_kernel, rng, stride=cfg.cnn_stride, padding=pad)
                      for i in range(len(cfg.cnn_filters))]
        self.drop = Dropout(cfg.cnn_dropout, rng)

    def forward(self, grid) -> Tensor:
        x = grid if isinstance(grid, Tensor) else Tensor(grid)
        for conv in self.convs:
            x = ops.relu(conv(x))
        return self.drop(ops.mean(x, axis=(2, 3)))


class ViTBranch(Module):
    """Per-frame patch embedding, learned positions, pre-norm encoders, token mean pool."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.patch_embed = Linear(cfg.patch_size ** 2, cfg.embed_dim, rng)
        self.pos = Parameter(rng.normal(0.0, 0.02, size=(cfg.n_tokens, cfg.embed_dim)))
        self.blocks = [EncoderBlock(cfg.embed_dim, cfg.n_heads, cfg.mlp_hidden, rng) for _ in range(cfg.encoder_layers)]
        self.norm = LayerNorm(cfg.embed_dim)

    def tokens(self, frames: np.ndarray) -> Tensor:
        """Encoder outputs before pooling, (F, tokens, embed)."""
        x = self.patch_embed(Tensor(extract_patches(np.asarray(frames, np.float64), self.cfg.patch_size))) + self.pos
        for block in self.blocks:
            x = block(x)
        return self.norm(x)

    def forward(self, frames: np.ndarray) -> Tensor:
        return ops.mean(self.tokens(frames), axis=1)


class GRUHead(Module):
    """Stacked unidirectional GRUs, dropout between layers, last state -> one logit."""

    def __init__(self, input_size: int, cfg: ModelConfig, rng: np.random.Generator):
        sizes = (input_size,) + tuple(cfg.gru_sizes)
        self.layers = [GRU(sizes[i], sizes[i + 1], rng) for i in range(len(cfg.gru_sizes))]
        self.drops = [Dropout(cfg.gru_dropout, rng) for _ in range(len(cfg.gru_sizes) - 1)]
        self.readout = Linear(sizes[-1], 1, rng)

    def logits(self, seq: Tensor) -> Tensor:
        x = seq
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.drops):
                x = self.drops[i](x)
        return ops.reshape(self.readout(x[:, -1]), (-1,))

    def forward(self, seq: Tensor) -> Tensor:
        return ops.sigmoid(self.logits(seq))


class ProposedModel(Module):
    """Beams through the CNN, frames through the ViT, fused per step, GRU over the window."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng([seed, 11])
        self.cfg = cfg
        self.cnn = CNNBranch(cfg, rng)
        self.vit = ViTBranch(cfg, rng)
        self.fusion = Linear(cfg.embed_dim + cfg.cnn_filters[-1], cfg.fusion_dim, rng)
        self.head = GRUHead(cfg.fusion_dim, cfg, rng)

    def component_of(self, name: str) -> str:
        return name.split(".", 1)[0]

    def fuse(self, cnn_feature: Tensor, frame_emb: Tensor) -> Tensor:
        B, p, _ = frame_emb.shape
        shared = ops.broadcast_to(ops.reshape(cnn_feature, (B, 1, -1)), (B, p, cnn_feature.shape[-1]))
        return self.fusion(ops.concat([frame_emb, shared], axis=-1))

    def logits(self, images: np.ndarray, beams: np.ndarray) -> Tensor:
        images = np.asarray(images)
        B, p, H, W = images.shape
        if p != self.cfg.n_frames or H != self.cfg.image_size or W != self.cfg.image_size:
            raise ShapeError(f"model expects (B, {self.cfg.n_frames}, {self.cfg.image_size}, {self.cfg.image_size}) "
                             f"images, got {images.shape}")
        if np.shape(beams) != (B, p):
            raise ShapeError(f"beams shape {np.shape(beams)} does not match images {images.shape}")
        feat = self.cnn(encode_beams(beams, self.cfg))
        emb = ops.reshape(self.vit(images.reshape(B * p, H, W)), (B, p, -1))
        return self.head.logits(self.fuse(feat, emb))

    def forward(self, images, beams) -> Tensor:
        return ops.sigmoid(self.logits(images, beams))


class BaselineModel(Module):
    """Per-frame box coordinates plus the beam encoding, fed to the same GRU head."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng([seed, 12])
        self.cfg = cfg
        self.head = GRUHead(4 * cfg.max_boxes + cfg.beam_width, cfg, rng)

    def component_of(self, name: str) -> str:
        return "head"

    def logits(self, boxes: np.ndarray, beams: np.ndarray) -> Tensor:
        boxes = np.asarray(boxes, np.float64)
        B, p = np.shape(beams)
        if boxes.shape != (B, p, 4 * self.cfg.max_boxes):
            raise ShapeError(f"boxes shape {boxes.shape} != expected {(B, p, 4 * self.cfg.max_boxes)}")
        beam_rows = encode_beams(beams, self.cfg)[:, 0]
        return self.head.logits(Tensor(np.concatenate([boxes, beam_rows], axis=-1)))

    def forward(self, boxes, beams) -> Tensor:
        return ops.sigmoid(self.logits(boxes, beams))


def box_features(frames, max_boxes: int) -> np.ndarray:
    """Flatten up to ``max_boxes`` boxes per frame, sorted by x_min, zero padded -> (p, 4*max_boxes)."""
    out = np.zeros((len(frames), 4 * max_boxes))
    for t, frame in enumerate(frames):
        coords = sorted((b.coords() for b in frame), key=lambda c: c)[:max_boxes]
        if coords:
            out[t, : 4 * len(coords)] = np.asarray(coords).ravel()
    return out


def _gru_count(n_in: int, H: int) -> int:
    return n_in * 3 * H + H * 2 * H + H * H + 3 * H


def parameter_count(cfg: ModelConfig, model: str = "proposed") -> int:
    """Closed-form trainable parameter count."""
    sizes = (cfg.fusion_dim if model == "proposed" else 4 * cfg.max_boxes + cfg.beam_width,) + tuple(cfg.gru_sizes)
    head = sum(_gru_count(sizes[i], sizes[i + 1]) for i in range(len(cfg.gru_sizes))) + sizes[-1] + 1
    if model == "baseline":
        return head
    k2 = cfg.cnn_kernel ** 2
    chans = (1,) + tuple(cfg.cnn_filters)
    cnn = sum(chans[i] * chans[i + 1] * k2 + chans[i + 1] for i in range(len(cfg.cnn_filters)))
    E, Hm = cfg.embed_dim, cfg.mlp_hidden
    block = 4 * E + (E * 3 * E + 3 * E) + (E * E + E) + (E * Hm + Hm) + (Hm * E + E)
    vit = (cfg.patch_size ** 2 * E + E) + cfg.n_tokens * E + cfg.encoder_layers * block + 2 * E
    fusion = (E + cfg.cnn_filters[-1]) * cfg.fusion_dim + cfg.fusion_dim
    return cnn + vit + fusion + head
