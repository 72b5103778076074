"""Contrastive and masked-reconstruction objectives, optimizer and one training step."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .alignment import AlignedPair, sample_training_pair
from .errors import ConfigurationError, InputError, ParameterError, ShapeError
from .model import ModelState, decode, encode, tokenize
from .numerics import Tensor, as_tensor, l2_normalize, log_softmax_row

DIRECTIONS = ("v2a", "a2v", "symmetric")


def similarity_matrix(g_visual, g_audio) -> Tensor:
    """Cosine similarities ``s[i, j]`` between visual row i and audio row j."""
    return l2_normalize(as_tensor(g_visual)) @ l2_normalize(as_tensor(g_audio)).T


def _nce(sim: Tensor, temperature: float) -> Tensor:
    n = sim.shape[0]
    logp = log_softmax_row(sim, temperature)
    return -logp[np.arange(n), np.arange(n)].mean()


def contrastive_loss(g_visual, g_audio, temperature: float = 0.05,
                     direction: str = "symmetric") -> Tensor:
    """InfoNCE over a batch of paired global vectors.

    ``v2a`` treats each visual vector as a query against all audio vectors,
    ``a2v`` the reverse, ``symmetric`` averages the two.
    """
    g_visual, g_audio = as_tensor(g_visual), as_tensor(g_audio)
    if g_visual.shape != g_audio.shape or g_visual.ndim != 2:
        raise ShapeError(f"global vectors must be matching (N, D), got {g_visual.shape} and {g_audio.shape}")
    if g_visual.shape[0] < 2:
        raise InputError("contrastive loss needs at least two pairs (N >= 2)")
    if temperature <= 0:
        raise ParameterError(f"temperature must be > 0, got {temperature}")
    if direction not in DIRECTIONS:
        raise ParameterError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    sim = similarity_matrix(g_visual, g_audio)
    if direction == "v2a":
        return _nce(sim, temperature)
    if direction == "a2v":
        return _nce(sim.T, temperature)
    return (_nce(sim, temperature) + _nce(sim.T, temperature)) * 0.5


def _per_sample_mse(pred: Tensor, target, normalization: str) -> Tensor:
    pred = as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    b, m, e = pred.shape
    if m == 0:
        return Tensor(np.zeros(b))
    sq = ((pred - Tensor(target)) ** 2).sum(axis=(1, 2))
    if normalization == "element":
        return sq * (1.0 / (m * e))
    if normalization == "patch":
        return sq * (1.0 / m)
    raise ParameterError(f"normalization must be 'element' or 'patch', got {normalization!r}")


def reconstruction_loss(pred_a, target_a, pred_v, target_v,
                        normalization: str = "element") -> tuple[Tensor, Tensor, Tensor]:
    """Masked-patch MSE per modality, averaged over the batch.

    Inputs are ``(B, masked, patch_dim)``. ``element`` divides each sample's
    squared error by masked count times patch length; ``patch`` divides by the
    masked count only. Returns ``(L_a, L_v, L_r)`` with ``L_r = L_a + L_v``.
    """
    la = _per_sample_mse(pred_a, target_a, normalization)
    lv = _per_sample_mse(pred_v, target_v, normalization)
    if la.shape != lv.shape:
        raise ShapeError("audio and visual batches differ in size")
    return la.mean(), lv.mean(), (la + lv).mean()


@dataclass
class LossReport:
    contrastive: float
    recon_audio: float
    recon_visual: float
    total: float
    temperature: float
    lambda_c: float
    lambda_r: float
    direction: str
    lr: float | None = None
    loss: Tensor | None = field(default=None, repr=False, compare=False)

    @property
    def recon(self) -> float:
        return self.recon_audio + self.recon_visual

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("loss")
        return d


def _value(x) -> float:
    return float(x.data) if isinstance(x, Tensor) else float(x)


def total_loss(contrastive, recon_audio, recon_visual=0.0, lambda_c: float = 0.1,
               lambda_r: float = 1.0, temperature: float = 0.05,
               direction: str = "symmetric") -> LossReport:
    """Weighted sum ``lambda_c * L_c + lambda_r * (L_a + L_v)``."""
    if lambda_c < 0 or lambda_r < 0:
        raise ParameterError(f"loss weights must be >= 0, got {lambda_c}, {lambda_r}")
    total = as_tensor(contrastive) * lambda_c + (as_tensor(recon_audio) + as_tensor(recon_visual)) * lambda_r
    return LossReport(contrastive=_value(contrastive), recon_audio=_value(recon_audio),
                      recon_visual=_value(recon_visual), total=float(total.data),
                      temperature=temperature, lambda_c=lambda_c, lambda_r=lambda_r,
                      direction=direction, loss=total)


@dataclass
class TrainConfig:
    mask_ratio_a: float = 0.75
    mask_ratio_v: float = 0.75
    temperature: float = 0.05
    lambda_c: float = 0.1
    lambda_r: float = 1.0
    direction: str = "symmetric"
    recon_normalization: str = "element"

    def __post_init__(self):
        for name in ("mask_ratio_a", "mask_ratio_v"):
            r = getattr(self, name)
            if not 0.0 <= r < 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1), got {r}")
        if self.temperature <= 0:
            raise ConfigurationError(f"temperature must be > 0, got {self.temperature}")
        if self.lambda_c < 0 or self.lambda_r < 0:
            raise ConfigurationError("loss weights must be >= 0")
        if self.direction not in DIRECTIONS:
            raise ConfigurationError(f"direction must be one of {DIRECTIONS}")
        if self.recon_normalization not in ("element", "patch"):
            raise ConfigurationError("recon_normalization must be 'element' or 'patch'")


def compute_loss(state: ModelState, frames: np.ndarray, windows: np.ndarray, cfg: TrainConfig,
                 rng: np.random.Generator) -> LossReport:
    """Forward one batch of (frame, window) samples and build the loss graph."""
    batch_a, batch_v = tokenize(state, frames, windows, cfg.mask_ratio_a, cfg.mask_ratio_v, rng)
    pair = encode(batch_a, batch_v, state)
    lc = contrastive_loss(pair.g_visual_out, pair.g_audio_out, cfg.temperature, cfg.direction)
    pred_a, pred_v = decode(pair, state)
    la, lv, _ = reconstruction_loss(pred_a, batch_a.original_patches, pred_v,
                                    batch_v.original_patches, cfg.recon_normalization)
    return total_loss(lc, la, lv, cfg.lambda_c, cfg.lambda_r, cfg.temperature, cfg.direction)


@dataclass
class OptimizerConfig:
    lr: float = 2e-4
    weight_decay: float = 5e-7
    beta1: float = 0.95
    beta2: float = 0.999
    eps: float = 1e-8
    warmup_frac: float = 0.1
    total_steps: int = 1
    min_lr: float = 0.0

    def __post_init__(self):
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigurationError("lr and weight_decay must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigurationError("betas must lie in [0, 1)")
        if not 0 <= self.warmup_frac < 1:
            raise ConfigurationError("warmup_frac must lie in [0, 1)")
        if self.total_steps < 1:
            raise ConfigurationError("total_steps must be >= 1")


def learning_rate(cfg: OptimizerConfig, step: int) -> float:
    """Linear warmup then cosine decay; ``step`` counts from 0."""
    warmup = int(round(cfg.warmup_frac * cfg.total_steps))
    if step < warmup:
        return cfg.lr * (step + 1) / warmup
    span = max(cfg.total_steps - warmup, 1)
    progress = min((step - warmup) / span, 1.0)
    return cfg.min_lr + (cfg.lr - cfg.min_lr) * 0.5 * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Adam with decoupled weight decay over a fixed list of parameters."""

    def __init__(self, params: list[tuple[str, Tensor]], cfg: OptimizerConfig):
        self.params = params
        self.cfg = cfg
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for _, p in params]
        self.v = [np.zeros_like(p.data) for _, p in params]

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def step(self) -> float:
        cfg = self.cfg
        lr = learning_rate(cfg, self.step_count)
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - cfg.beta1 ** t
        c2 = 1.0 - cfg.beta2 ** t
        for (_, p), m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + cfg.eps)
            # fresh array per step: tensors already in a recorded graph stay untouched
            p.data = p.data - lr * (update + cfg.weight_decay * p.data)
        return lr


def train_step(samples: list[AlignedPair], state: ModelState, optimizer: AdamW, cfg: TrainConfig,
               rng: np.random.Generator) -> LossReport:
    """One forward/backward/update on a batch of videos, one random frame each."""
    if len(samples) < 2:
        raise InputError("train_step needs a batch of at least 2 samples (contrastive negatives)")
    frames, windows = [], []
    for pair in samples:
        frame, window, _ = sample_training_pair(pair, rng)
        frames.append(frame)
        windows.append(window)
    report = compute_loss(state, np.stack(frames), np.stack(windows), cfg, rng)
    optimizer.zero_grad()
    report.loss.backward()
    report.lr = optimizer.step()
    report.loss = None
    return report
