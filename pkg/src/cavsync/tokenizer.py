"""Patchification, random masking and token embedding."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError
from .numerics import Tensor, getitem

AUDIO = "audio"
VISUAL = "visual"


def patchify(x: np.ndarray, patch: int) -> np.ndarray:
    """Split ``(C, H, W)`` or ``(H, W)`` input into raster-ordered flat patches.

    Returns ``(H/p * W/p, p*p*C)``; each patch is flattened as ``(p, p, C)``.
    Leading batch axes are allowed when ``x`` has more than 3 dims.
    """
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[None]
    *lead, c, h, w = x.shape
    if h % patch or w % patch:
        raise ShapeError(f"input {h}x{w} is not divisible by patch size {patch}")
    gh, gw = h // patch, w // patch
    x = x.reshape(*lead, c, gh, patch, gw, patch)
    nd = len(lead)
    perm = tuple(range(nd)) + tuple(nd + k for k in (1, 3, 2, 4, 0))
    return x.transpose(perm).reshape(*lead, gh * gw, patch * patch * c)


def unpatchify(patches: np.ndarray, grid: tuple[int, int], patch: int, channels: int) -> np.ndarray:
    gh, gw = grid
    x = np.asarray(patches).reshape(gh, gw, patch, patch, channels)
    return x.transpose(4, 0, 2, 1, 3).reshape(channels, gh * patch, gw * patch)


def mask_count(n: int, ratio: float) -> int:
    """Number of masked patches: ``ratio * n`` rounded half away from zero."""
    return int(math.floor(ratio * n + 0.5))


def mask_random(n: int, ratio: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Unstructured masking. Both index arrays are returned sorted ascending."""
    if not 0.0 <= ratio < 1.0:
        raise ParameterError(f"masking ratio must lie in [0, 1), got {ratio}")
    n_mask = mask_count(n, ratio)
    perm = rng.permutation(n)
    return np.sort(perm[n_mask:]), np.sort(perm[:n_mask])


def mask_batch(batch: int, n: int, ratio: float, rng: np.random.Generator):
    """Per-sample masks stacked to ``(batch, kept)`` and ``(batch, masked)``."""
    kept, masked = zip(*(mask_random(n, ratio, rng) for _ in range(batch)))
    return np.stack(kept), np.stack(masked)


def sincos_2d(dim: int, rows: int, cols: int) -> np.ndarray:
    """Fixed 2D sin-cos codes, ``(rows*cols, dim)`` in raster order.

    Half of the channels encode the row, half the column.
    """
    if dim % 4:
        raise ShapeError(f"sin-cos embedding needs dim divisible by 4, got {dim}")
    quarter = dim // 4
    omega = 1.0 / 10000 ** (np.arange(quarter, dtype=np.float64) / quarter)
    rr, cc = np.meshgrid(np.arange(rows, dtype=np.float64), np.arange(cols, dtype=np.float64),
                         indexing="ij")

    def encode(pos):
        out = np.outer(pos.reshape(-1), omega)
        return np.concatenate([np.sin(out), np.cos(out)], axis=1)

    return np.concatenate([encode(rr), encode(cc)], axis=1)


@dataclass
class TokenBatch:
    """Tokens for one modality of a batch.

    ``tokens`` is ``(B, kept, dim)``; index arrays are ``(B, kept)`` and
    ``(B, masked)``; ``original_patches`` holds the raw patches at the masked
    positions, ``(B, masked, p*p*C)``.
    """

    tokens: Tensor
    kept_indices: np.ndarray
    masked_indices: np.ndarray
    original_patches: np.ndarray
    modality: str
    grid: tuple[int, int]
    patch: int = 16

    @property
    def num_patches(self) -> int:
        return self.grid[0] * self.grid[1]


def gather_tokens(x: Tensor, indices: np.ndarray) -> Tensor:
    """``x[b, indices[b]]`` for ``x`` of shape ``(B, N, D)``."""
    rows = np.arange(indices.shape[0])[:, None]
    return getitem(x, (rows, indices))


def embed(patches: np.ndarray, kept: np.ndarray, masked: np.ndarray, modality: str,
          grid: tuple[int, int], proj_w: Tensor, proj_b: Tensor, pos: np.ndarray,
          modality_vec: Tensor, patch: int = 16) -> TokenBatch:
    """Project kept patches and add positional and modality codes.

    ``patches`` is ``(B, N, p*p*C)``. Positional codes are indexed by each
    patch's position in the full grid, so masking does not shift them.
    """
    b, n, _ = patches.shape
    if grid[0] * grid[1] != n:
        raise ShapeError(f"grid {grid} does not match {n} patches")
    rows = np.arange(b)[:, None]
    kept_patches = Tensor(patches[rows, kept])
    tokens = kept_patches @ proj_w + proj_b + Tensor(pos[kept]) + modality_vec
    return TokenBatch(tokens=tokens, kept_indices=kept, masked_indices=masked,
                      original_patches=patches[rows, masked], modality=modality, grid=grid,
                      patch=patch)
