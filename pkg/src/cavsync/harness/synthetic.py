"""Synthetic paired audio/visual clips with known latent events.

Every clip is split into contiguous events, each with a latent class. Frames
show the class as a smooth colored pattern inside an object box; spectrogram
columns show it as a class-specific spectral profile. The audio is mixed
with an independent distractor event track at weight ``1 - rho``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..alignment import AlignedPair
from ..errors import ConfigurationError


@dataclass
class SyntheticConfig:
    num_videos: int = 256
    T: int = 16
    S: int = 128
    s_length: int = 32
    num_latent_classes: int = 8
    rho: float = 1.0
    events_per_video: int = 2
    noise_std: float = 0.1
    seed: int = 0
    template_seed: int = 0
    frame_size: int = 32
    channels: int = 3
    mel_bins: int = 32
    min_event_frames: int = 3

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigurationError(f"rho must lie in [0, 1], got {self.rho}")
        if self.s_length > self.S:
            raise ConfigurationError(f"audio segment longer than clip: {self.s_length} > {self.S}")
        if self.events_per_video < 1 or self.events_per_video * self.min_event_frames > self.T:
            raise ConfigurationError(
                f"cannot fit {self.events_per_video} events of >= {self.min_event_frames} frames in T={self.T}")
        if self.num_latent_classes < 2:
            raise ConfigurationError("need at least two latent classes")
        if self.num_videos < 0 or self.noise_std < 0:
            raise ConfigurationError("num_videos and noise_std must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def class_templates(cfg: SyntheticConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-class visual patterns ``(K, C, H, W)`` and spectral patterns ``(K, mel, S)``.

    Templates depend only on ``template_seed`` so train and held-out sets share classes.
    """
    rng = np.random.default_rng(cfg.template_seed)
    k, h = cfg.num_latent_classes, cfg.frame_size
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, h), indexing="ij")
    visual = np.empty((k, cfg.channels, h, h))
    for c in range(k):
        fy, fx = rng.integers(1, 4, size=2)
        phase = rng.uniform(0, 2 * np.pi, size=2)
        spatial = np.cos(2 * np.pi * fy * yy + phase[0]) * np.cos(2 * np.pi * fx * xx + phase[1])
        color = rng.choice([-1.0, 1.0], size=cfg.channels) * rng.uniform(0.6, 1.0, size=cfg.channels)
        visual[c] = color[:, None, None] * (0.5 + 0.5 * spatial)[None]

    mel = np.arange(cfg.mel_bins)
    cols = np.arange(cfg.S)
    audio = np.empty((k, cfg.mel_bins, cfg.S))
    centers = rng.permutation(np.linspace(2, cfg.mel_bins - 3, k))
    for c in range(k):
        width = rng.uniform(1.5, 3.0)
        profile = np.exp(-0.5 * ((mel - centers[c]) / width) ** 2)
        second = rng.uniform(0, cfg.mel_bins - 1)
        profile += 0.5 * np.exp(-0.5 * ((mel - second) / width) ** 2)
        rate = rng.integers(1, 5)
        modulation = 0.75 + 0.25 * np.cos(2 * np.pi * rate * cols / 16.0 + rng.uniform(0, 2 * np.pi))
        audio[c] = profile[:, None] * modulation[None]
    return visual, audio


def _event_track(cfg: SyntheticConfig, rng: np.random.Generator) -> np.ndarray:
    """Per-frame class ids with ``events_per_video`` contiguous events, neighbours distinct."""
    e, T, m = cfg.events_per_video, cfg.T, cfg.min_event_frames
    slack = T - e * m
    extra = np.diff(np.concatenate([[0], np.sort(rng.integers(0, slack + 1, size=e - 1)), [slack]]))
    lengths = m + extra
    classes = [int(rng.integers(cfg.num_latent_classes))]
    for _ in range(e - 1):
        choices = [c for c in range(cfg.num_latent_classes) if c != classes[-1]]
        classes.append(int(rng.choice(choices)))
    return np.repeat(classes, lengths)


def generate_synthetic(cfg: SyntheticConfig) -> list[AlignedPair]:
    visual_t, audio_t = class_templates(cfg)
    rng = np.random.default_rng(cfg.seed)
    h = cfg.frame_size
    box = h // 2
    col_frame = (np.arange(cfg.S) * cfg.T) // cfg.S
    mel_idx = np.arange(cfg.mel_bins)[:, None]
    out = []
    for v in range(cfg.num_videos):
        track = _event_track(cfg, rng)
        distractor = _event_track(cfg, rng)
        boundaries = np.flatnonzero(np.diff(track)) + 1
        starts = np.concatenate([[0], boundaries])
        corners = rng.integers(0, h - box + 1, size=(len(starts), 2))

        frames = rng.normal(0.0, cfg.noise_std, size=(cfg.T, cfg.channels, h, h))
        masks = np.zeros((cfg.T, h, h), dtype=bool)
        event_of_frame = np.searchsorted(starts, np.arange(cfg.T), side="right") - 1
        for t in range(cfg.T):
            y0, x0 = corners[event_of_frame[t]]
            masks[t, y0:y0 + box, x0:x0 + box] = True
            frames[t] += visual_t[track[t]] * masks[t][None]

        signal = audio_t[track[col_frame], mel_idx, np.arange(cfg.S)]
        noise_src = audio_t[distractor[col_frame], mel_idx, np.arange(cfg.S)]
        spec = cfg.rho * signal + (1.0 - cfg.rho) * noise_src
        spec = spec + rng.normal(0.0, cfg.noise_std, size=spec.shape)

        audio_labels = track if cfg.rho >= 0.5 else distractor
        out.append(AlignedPair(
            frames=frames.astype(np.float32), spectrogram=spec.astype(np.float32),
            s_length=cfg.s_length, clip_id=f"synth{cfg.seed}_{v:05d}",
            labels=tuple(sorted(set(int(c) for c in track))),
            frame_labels=track.astype(np.int64), audio_labels=np.asarray(audio_labels, dtype=np.int64),
            object_masks=masks))
    return out


def boundaries(labels: np.ndarray) -> np.ndarray:
    """Frame indices where the label changes (start of each new segment)."""
    labels = np.asarray(labels)
    return np.flatnonzero(labels[1:] != labels[:-1]) + 1
