"""Audio/visual encoders, three-pass joint layer, decoder and downstream heads."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigurationError, InputError, ShapeError
from ..numerics import Tensor, broadcast_to, concat, no_grad
from ..tokenizer import (AUDIO, VISUAL, TokenBatch, embed, gather_tokens, mask_batch, patchify,
                         sincos_2d)
from .layers import Block, JointBlock, LayerNorm, Linear, Module, parameter


@dataclass
class ModelConfig:
    dim: int = 768
    heads: int = 12
    encoder_depth: int = 11
    decoder_dim: int = 384
    decoder_depth: int = 2
    decoder_heads: int = 12
    mlp_ratio: float = 4.0
    patch: int = 16
    mel_bins: int = 128
    s_length: int = 416
    frame_size: int = 224
    audio_channels: int = 1
    visual_channels: int = 3
    n_registers: int = 8
    use_global: bool = True
    classifier_depth: int = 2

    def __post_init__(self):
        for name in ("dim", "heads", "encoder_depth", "decoder_dim", "decoder_depth",
                     "decoder_heads", "patch", "mel_bins", "s_length", "frame_size"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.n_registers < 0:
            raise ConfigurationError(f"n_registers must be >= 0, got {self.n_registers}")
        if self.dim % self.heads or self.decoder_dim % self.decoder_heads:
            raise ConfigurationError("widths must be divisible by their head counts")
        if self.dim % 4 or self.decoder_dim % 4:
            raise ConfigurationError("sin-cos positional codes need widths divisible by 4")
        for name in ("mel_bins", "s_length", "frame_size"):
            if getattr(self, name) % self.patch:
                raise ConfigurationError(f"{name}={getattr(self, name)} not divisible by patch {self.patch}")

    @property
    def audio_grid(self) -> tuple[int, int]:
        return self.mel_bins // self.patch, self.s_length // self.patch

    @property
    def visual_grid(self) -> tuple[int, int]:
        g = self.frame_size // self.patch
        return g, g

    @property
    def audio_patch_dim(self) -> int:
        return self.patch * self.patch * self.audio_channels

    @property
    def visual_patch_dim(self) -> int:
        return self.patch * self.patch * self.visual_channels

    @property
    def prefix_len(self) -> int:
        """Global token (if any) plus registers at the head of each sequence."""
        return int(self.use_global) + self.n_registers

    @classmethod
    def toy(cls, **overrides) -> "ModelConfig":
        base = dict(dim=64, heads=4, encoder_depth=2, decoder_dim=32, decoder_depth=2,
                    decoder_heads=4, patch=8, mel_bins=32, s_length=32, frame_size=32)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)


class ClassifierHead(Module):
    """CLS token + small transformer over per-timestep features."""

    def __init__(self, in_dim: int, width: int, heads: int, num_classes: int, depth: int,
                 rng: np.random.Generator):
        self.in_dim = in_dim
        self.num_classes = num_classes
        self.inp = Linear(in_dim, width, rng)
        self.cls = parameter(rng.normal(0.0, 0.02, width))
        self.blocks = [Block(width, heads, rng) for _ in range(depth)]
        self.norm = LayerNorm(width)
        self.head = Linear(width, num_classes, rng)


class ModelState(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        self.seed = seed
        rng = np.random.default_rng(seed)
        d, dd = cfg.dim, cfg.decoder_dim

        self.embed_a = Linear(cfg.audio_patch_dim, d, rng)
        self.embed_v = Linear(cfg.visual_patch_dim, d, rng)
        self.modality_a = parameter(rng.normal(0.0, 0.02, d))
        self.modality_v = parameter(rng.normal(0.0, 0.02, d))
        if cfg.use_global:
            self.global_a = parameter(rng.normal(0.0, 0.02, (1, d)))
            self.global_v = parameter(rng.normal(0.0, 0.02, (1, d)))
        if cfg.n_registers:
            self.registers_a = parameter(rng.normal(0.0, 0.02, (cfg.n_registers, d)))
            self.registers_v = parameter(rng.normal(0.0, 0.02, (cfg.n_registers, d)))
        self.encoder_a = [Block(d, cfg.heads, rng, cfg.mlp_ratio) for _ in range(cfg.encoder_depth)]
        self.encoder_v = [Block(d, cfg.heads, rng, cfg.mlp_ratio) for _ in range(cfg.encoder_depth)]
        self.joint = JointBlock(d, cfg.heads, rng, cfg.mlp_ratio)

        self.decoder_embed = Linear(d, dd, rng)
        self.mask_token = parameter(rng.normal(0.0, 0.02, dd))
        self.decoder_modality_a = parameter(rng.normal(0.0, 0.02, dd))
        self.decoder_modality_v = parameter(rng.normal(0.0, 0.02, dd))
        self.decoder = [Block(dd, cfg.decoder_heads, rng, cfg.mlp_ratio) for _ in range(cfg.decoder_depth)]
        self.decoder_norm = LayerNorm(dd)
        self.decoder_pred_a = Linear(dd, cfg.audio_patch_dim, rng)
        self.decoder_pred_v = Linear(dd, cfg.visual_patch_dim, rng)

        self.classifier: ClassifierHead | None = None

        self.pos_a = sincos_2d(d, *cfg.audio_grid)
        self.pos_v = sincos_2d(d, *cfg.visual_grid)
        self.decoder_pos_a = sincos_2d(dd, *cfg.audio_grid)
        self.decoder_pos_v = sincos_2d(dd, *cfg.visual_grid)

    def pretrain_parameters(self) -> list[tuple[str, Tensor]]:
        return [(n, p) for n, p in self.named_parameters() if not n.startswith("classifier.")]

    def attach_classifier(self, in_dim: int, num_classes: int, seed: int | None = None) -> ClassifierHead:
        rng = np.random.default_rng(self.seed + 1 if seed is None else seed)
        self.classifier = ClassifierHead(in_dim, self.cfg.dim, self.cfg.heads, num_classes,
                                         self.cfg.classifier_depth, rng)
        return self.classifier

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


@dataclass
class EncodedPair:
    """Outputs of ``encode``; leading axis is the batch.

    ``h_audio``/``h_visual`` are the patch-token outputs of the single-modality
    joint passes; ``joint_tokens`` is the full third-pass output.
    """

    h_audio: Tensor
    h_visual: Tensor
    g_audio_out: Tensor
    g_visual_out: Tensor
    registers_audio: Tensor | None
    registers_visual: Tensor | None
    joint_tokens: Tensor
    batch_a: TokenBatch
    batch_v: TokenBatch
    prefix_len: int
    seq_len_a: int = field(default=0)
    seq_len_v: int = field(default=0)

    def joint_patches(self, modality: str) -> Tensor:
        p = self.prefix_len
        if modality == AUDIO:
            return self.joint_tokens[:, p:self.seq_len_a]
        return self.joint_tokens[:, self.seq_len_a + p:]


def tokenize(state: ModelState, frames: np.ndarray, windows: np.ndarray, ratio_a: float,
             ratio_v: float, rng: np.random.Generator | None = None) -> tuple[TokenBatch, TokenBatch]:
    """Patchify, mask and embed a batch. ``frames`` is ``(B, C, H, W)``, ``windows`` ``(B, mel, s_length)``."""
    cfg = state.cfg
    frames = np.asarray(frames, dtype=np.float64)
    windows = np.asarray(windows, dtype=np.float64)
    if frames.shape[1:] != (cfg.visual_channels, cfg.frame_size, cfg.frame_size):
        raise ShapeError(f"frames {frames.shape[1:]} do not match the model's visual input")
    if windows.shape[1:] != (cfg.mel_bins, cfg.s_length):
        raise ShapeError(f"windows {windows.shape[1:]} do not match the model's audio input")
    if rng is None:
        if ratio_a or ratio_v:
            raise InputError("masking requires an rng")
        rng = np.random.default_rng(0)
    b = frames.shape[0]
    pa = patchify(windows[:, None], cfg.patch)
    pv = patchify(frames, cfg.patch)
    ka, ma = mask_batch(b, pa.shape[1], ratio_a, rng)
    kv, mv = mask_batch(b, pv.shape[1], ratio_v, rng)
    batch_a = embed(pa, ka, ma, AUDIO, cfg.audio_grid, state.embed_a.w, state.embed_a.b,
                    state.pos_a, state.modality_a, cfg.patch)
    batch_v = embed(pv, kv, mv, VISUAL, cfg.visual_grid, state.embed_v.w, state.embed_v.b,
                    state.pos_v, state.modality_v, cfg.patch)
    return batch_a, batch_v


def _prefixed(tokens: Tensor, glob: Tensor | None, registers: Tensor | None) -> Tensor:
    b, _, d = tokens.shape
    parts = []
    if glob is not None:
        parts.append(broadcast_to(glob, (b, 1, d)))
    if registers is not None:
        parts.append(broadcast_to(registers, (b, registers.shape[0], d)))
    return concat(parts + [tokens], axis=1) if parts else tokens


def encode(batch_a: TokenBatch, batch_v: TokenBatch, state: ModelState) -> EncodedPair:
    cfg = state.cfg
    if batch_a.tokens.shape[-1] != cfg.dim or batch_v.tokens.shape[-1] != cfg.dim:
        raise ShapeError(f"token width {batch_a.tokens.shape[-1]}/{batch_v.tokens.shape[-1]} "
                         f"does not match model dim {cfg.dim}")
    glob_a = state.global_a if cfg.use_global else None
    glob_v = state.global_v if cfg.use_global else None
    regs_a = state.registers_a if cfg.n_registers else None
    regs_v = state.registers_v if cfg.n_registers else None

    za = _prefixed(batch_a.tokens, glob_a, regs_a)
    for blk in state.encoder_a:
        za = blk(za)
    zv = _prefixed(batch_v.tokens, glob_v, regs_v)
    for blk in state.encoder_v:
        zv = blk(zv)

    ha = state.joint(za, state.joint.ln_a)
    hv = state.joint(zv, state.joint.ln_v)
    joint = state.joint(concat([za, zv], axis=1), state.joint.ln_joint)

    p = cfg.prefix_len
    g0 = int(cfg.use_global)
    patches_a, patches_v = ha[:, p:], hv[:, p:]
    if cfg.use_global:
        ga, gv = ha[:, 0], hv[:, 0]
    else:
        ga, gv = patches_a.mean(axis=1), patches_v.mean(axis=1)
    return EncodedPair(
        h_audio=patches_a, h_visual=patches_v, g_audio_out=ga, g_visual_out=gv,
        registers_audio=ha[:, g0:p] if cfg.n_registers else None,
        registers_visual=hv[:, g0:p] if cfg.n_registers else None,
        joint_tokens=joint, batch_a=batch_a, batch_v=batch_v, prefix_len=p,
        seq_len_a=za.shape[1], seq_len_v=zv.shape[1])


def _decoder_sequence(state: ModelState, kept_tokens: Tensor, batch: TokenBatch,
                      pos: np.ndarray, modality_vec: Tensor) -> Tensor:
    b, k, dd = kept_tokens.shape
    m = batch.masked_indices.shape[1]
    parts = [kept_tokens]
    if m:
        parts.append(broadcast_to(state.mask_token, (b, m, dd)))
    seq = concat(parts, axis=1) if m else kept_tokens
    order = np.concatenate([batch.kept_indices, batch.masked_indices], axis=1)
    restore = np.argsort(order, axis=1)
    return gather_tokens(seq, restore) + Tensor(pos) + modality_vec


def decode(pair: EncodedPair, state: ModelState) -> tuple[Tensor, Tensor]:
    """Predict raw patches at every masked position: ``(B, masked, p*p*C)`` per modality."""
    ya = state.decoder_embed(pair.joint_patches(AUDIO))
    yv = state.decoder_embed(pair.joint_patches(VISUAL))
    seq_a = _decoder_sequence(state, ya, pair.batch_a, state.decoder_pos_a, state.decoder_modality_a)
    seq_v = _decoder_sequence(state, yv, pair.batch_v, state.decoder_pos_v, state.decoder_modality_v)
    n_a = seq_a.shape[1]
    x = concat([seq_a, seq_v], axis=1)
    for blk in state.decoder:
        x = blk(x)
    x = state.decoder_norm(x)
    out_a = state.decoder_pred_a(gather_tokens(x[:, :n_a], pair.batch_a.masked_indices))
    out_v = state.decoder_pred_v(gather_tokens(x[:, n_a:], pair.batch_v.masked_indices))
    return out_a, out_v


def pooled_repr(pair: EncodedPair, modality: str) -> Tensor:
    """Mean over patch outputs of a single-modality pass (globals and registers excluded)."""
    h = pair.h_audio if modality == AUDIO else pair.h_visual
    return h.mean(axis=-2)


def classify(sequences, state: ModelState, modality_select: str = "both") -> Tensor:
    """Class logits from per-timestep features.

    ``sequences`` is either an array ``(B, T, F)`` already matching the
    classifier's input width, or a pair ``(audio, visual)`` of ``(B, T, D)``
    arrays from which ``modality_select`` picks (``both`` concatenates along
    the feature axis).
    """
    head = state.classifier
    if head is None:
        raise ConfigurationError("no classifier attached; call attach_classifier first")
    x = select_modalities(sequences, modality_select)
    if x.ndim == 2:
        x = x[None]
    if x.shape[1] == 0:
        raise InputError("classify needs at least one timestep")
    if x.shape[2] != head.in_dim:
        raise ShapeError(f"feature width {x.shape[2]} does not match classifier input {head.in_dim}")
    h = head.inp(x if isinstance(x, Tensor) else Tensor(x))
    b = h.shape[0]
    h = concat([broadcast_to(head.cls, (b, 1, h.shape[2])), h], axis=1)
    for blk in head.blocks:
        h = blk(h)
    return head.head(head.norm(h)[:, 0])


def select_modalities(sequences, modality_select: str):
    if not isinstance(sequences, (tuple, list)):
        return sequences
    audio, visual = sequences
    if modality_select == AUDIO:
        return audio
    if modality_select == VISUAL:
        return visual
    if modality_select == "both":
        if isinstance(audio, Tensor) or isinstance(visual, Tensor):
            return concat([audio, visual], axis=-1)
        return np.concatenate([audio, visual], axis=-1)
    raise ConfigurationError(f"unknown modality selector {modality_select!r}")


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic interpolation weights with half-pixel centers, ``(n_out, n_in)``."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), lo] += 1.0 - frac
    m[np.arange(n_out), hi] += frac
    return m


def upsample_bilinear(grid_map: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinearly resize the last two axes of ``grid_map`` to ``size``."""
    mh = bilinear_matrix(grid_map.shape[-2], size[0])
    mw = bilinear_matrix(grid_map.shape[-1], size[1])
    return mh @ grid_map @ mw.T


def cosine_map(query: np.ndarray, tokens: np.ndarray) -> np.ndarray:
    """Cosine similarity of ``query (B, D)`` against ``tokens (B, N, D)``."""
    q = query / np.linalg.norm(query, axis=-1, keepdims=True)
    t = tokens / np.linalg.norm(tokens, axis=-1, keepdims=True)
    return np.clip(np.einsum("bd,bnd->bn", q, t), -1.0, 1.0)


def localization_map(pair: EncodedPair, out_size: tuple[int, int] | None = None):
    """Audio-global vs visual-patch cosine maps: ``(B, rows, cols)`` and upsampled ``(B, H, W)``."""
    bv = pair.batch_v
    if bv.masked_indices.shape[1] != 0:
        raise InputError("localization needs an unmasked visual forward pass (all patches)")
    rows, cols = bv.grid
    with no_grad():
        sims = cosine_map(pair.g_audio_out.data, pair.h_visual.data)
    coarse = sims.reshape(-1, rows, cols)
    if out_size is None:
        out_size = (rows * bv.patch, cols * bv.patch)
    return coarse, upsample_bilinear(coarse, out_size)


def forward_features(state: ModelState, frames: np.ndarray, windows: np.ndarray) -> EncodedPair:
    """Unmasked, gradient-free forward for evaluation."""
    with no_grad():
        ba, bv = tokenize(state, frames, windows, 0.0, 0.0)
        return encode(ba, bv, state)

