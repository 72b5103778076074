"""Frame-to-spectrogram temporal alignment.

Each of the ``T`` sampled frames is paired with a fixed-width spectrogram
window centered at the frame's relative position in the clip.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InputError


def align_window(i: int, T: int, S: int, s_length: int) -> tuple[int, int]:
    """Return ``(s_start, s_end)`` of the window for frame ``i``.

    The window is centered at ``floor(i * S / T)``. Windows that would cross
    the clip edges are shifted inward so the width stays ``s_length``.
    """
    if s_length > S:
        raise ConfigurationError(
            f"audio segment longer than clip: s_length={s_length} > S={S}")
    if not 0 <= i < T:
        raise InputError(f"frame index {i} outside [0, {T})")
    center = (i * S) // T
    start = center - s_length // 2
    start = min(max(start, 0), S - s_length)
    return start, start + s_length


def window_table(T: int, S: int, s_length: int) -> np.ndarray:
    """``(T, 2)`` int array of all windows for a clip."""
    return np.array([align_window(i, T, S, s_length) for i in range(T)], dtype=np.int64)


@dataclass
class AlignedPair:
    """One video: ``frames`` is ``(T, C, H, W)``, ``spectrogram`` is ``(mel, S)``."""

    frames: np.ndarray
    spectrogram: np.ndarray
    s_length: int
    clip_id: str = ""
    labels: tuple[int, ...] = ()
    frame_labels: np.ndarray | None = None
    audio_labels: np.ndarray | None = None
    object_masks: np.ndarray | None = None
    windows: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.frames.ndim != 4:
            raise InputError(f"{self.clip_id}: frames must be (T, C, H, W), got {self.frames.shape}")
        if self.spectrogram.ndim != 2:
            raise InputError(f"{self.clip_id}: spectrogram must be (mel, S), got {self.spectrogram.shape}")
        if self.s_length > self.S:
            raise ConfigurationError(
                f"{self.clip_id}: audio segment longer than clip "
                f"(s_length={self.s_length} > S={self.S})")
        self.windows = window_table(self.T, self.S, self.s_length)

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def S(self) -> int:
        return self.spectrogram.shape[1]

    def window(self, t: int) -> np.ndarray:
        start, end = self.windows[t]
        return self.spectrogram[:, start:end]


def sample_training_pair(pair: AlignedPair, rng: np.random.Generator):
    """Uniformly pick one frame and return ``(frame, window, t)``."""
    t = int(rng.integers(pair.T))
    return pair.frames[t], pair.window(t), t


def sample_all_pairs(pair: AlignedPair) -> list[tuple[np.ndarray, np.ndarray, int]]:
    return [(pair.frames[t], pair.window(t), t) for t in range(pair.T)]
