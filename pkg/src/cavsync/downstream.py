"""Retrieval, sound-prompted segmentation scoring, probing features and temporal segmentation."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.cluster.vq import kmeans2

from .errors import ConfigurationError, InputError, ParameterError
from .model import EncodedPair, pooled_repr
from .tokenizer import AUDIO

STRATEGIES = ("diag_mean", "diag_max", "block_mean", "block_max")
DIRECTIONS = ("V2A", "A2V")


def _aggregate(sim: np.ndarray, strategy: str) -> np.ndarray:
    """Reduce the trailing ``(T, T)`` axes of ``sim``."""
    if strategy == "diag_mean":
        return np.diagonal(sim, axis1=-2, axis2=-1).mean(axis=-1)
    if strategy == "diag_max":
        return np.diagonal(sim, axis1=-2, axis2=-1).max(axis=-1)
    if strategy == "block_mean":
        return sim.mean(axis=(-2, -1))
    if strategy == "block_max":
        return sim.max(axis=(-2, -1))
    raise ParameterError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")


def pair_similarity(v_q: np.ndarray, a_t: np.ndarray, strategy: str = "diag_mean") -> float:
    """Score one query sequence against one target sequence, both ``(T, D)``."""
    v_q, a_t = np.asarray(v_q, dtype=np.float64), np.asarray(a_t, dtype=np.float64)
    if v_q.shape[0] != a_t.shape[0]:
        raise InputError(f"token counts differ: {v_q.shape[0]} vs {a_t.shape[0]}")
    return float(_aggregate(v_q @ a_t.T, strategy))


def unit_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


@dataclass
class EmbeddingSequenceSet:
    """``visual`` and ``audio`` are ``(N, T, D)`` unit-norm global-token sequences."""

    visual: np.ndarray
    audio: np.ndarray
    ids: list

    def __post_init__(self):
        if self.visual.shape != self.audio.shape or self.visual.ndim != 3:
            raise InputError(f"visual {self.visual.shape} and audio {self.audio.shape} must match (N, T, D)")
        if len(self.ids) != self.visual.shape[0]:
            raise InputError("one id per video required")
        for name in ("visual", "audio"):
            norms = np.linalg.norm(getattr(self, name), axis=-1)
            if not np.allclose(norms, 1.0, atol=1e-6):
                raise InputError(f"{name} vectors must be unit norm")

    @classmethod
    def from_raw(cls, visual, audio, ids=None) -> "EmbeddingSequenceSet":
        visual, audio = unit_rows(visual), unit_rows(audio)
        return cls(visual, audio, list(range(visual.shape[0])) if ids is None else list(ids))

    @property
    def T(self) -> int:
        return self.visual.shape[1]


@dataclass
class RankingMatrix:
    R: np.ndarray
    direction: str
    strategy: str
    query_ids: list
    target_ids: list

    def ranked_targets(self, i: int) -> list:
        """Target ids for query ``i`` by descending score, ties to the lower index."""
        row = self.R[i]
        order = np.lexsort((np.arange(row.size), -row))
        return [self.target_ids[j] for j in order]


def build_ranking(emb: EmbeddingSequenceSet, direction: str = "V2A",
                  strategy: str = "diag_mean") -> RankingMatrix:
    if emb.visual.shape[0] < 2:
        raise InputError("ranking needs at least two videos")
    if direction == "V2A":
        queries, targets = emb.visual, emb.audio
    elif direction == "A2V":
        queries, targets = emb.audio, emb.visual
    else:
        raise ParameterError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    sim = np.einsum("itd,jsd->ijts", queries, targets)
    R = _aggregate(sim, strategy)
    if not np.all(np.isfinite(R)):
        raise FloatingPointError("non-finite retrieval scores")
    return RankingMatrix(R, direction, strategy, list(emb.ids), list(emb.ids))


def ranks_of_true_match(rm: RankingMatrix) -> np.ndarray:
    """Zero-based rank of each query's own id among its ranked targets."""
    out = np.empty(len(rm.query_ids), dtype=np.int64)
    for i, qid in enumerate(rm.query_ids):
        out[i] = rm.ranked_targets(i).index(qid)
    return out


def recall_at_k(rm: RankingMatrix, k: int) -> float:
    n = rm.R.shape[1]
    if not 1 <= k <= n:
        raise ParameterError(f"k must lie in [1, {n}], got {k}")
    return float(np.mean(ranks_of_true_match(rm) < k))


def retrieval_report(emb: EmbeddingSequenceSet, ks=(1, 5, 10)) -> dict:
    """Recall@k for both directions and all aggregation strategies."""
    n = emb.visual.shape[0]
    report = {}
    for direction in DIRECTIONS:
        report[direction] = {}
        for strategy in STRATEGIES:
            rm = build_ranking(emb, direction, strategy)
            ranks = ranks_of_true_match(rm)
            report[direction][strategy] = {f"R@{k}": float(np.mean(ranks < k)) for k in ks if k <= n}
    return report


# -- sound-prompted segmentation ---------------------------------------------
def average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """Area under the step precision-recall curve; tied scores form one threshold."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    n_pos = labels.sum()
    if n_pos == 0:
        raise InputError("average precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    last_of_tie = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tp = tp[last_of_tie]
    precision = tp / (last_of_tie + 1)
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def iou(pred_mask: np.ndarray, gt_mask: np.ndarray) -> float:
    pred_mask, gt_mask = np.asarray(pred_mask, bool), np.asarray(gt_mask, bool)
    union = np.logical_or(pred_mask, gt_mask).sum()
    return float(np.logical_and(pred_mask, gt_mask).sum() / union) if union else 1.0


def segmentation_scores(pred_map: np.ndarray, gt_mask: np.ndarray,
                        threshold: float | None = None) -> tuple[float, float] | None:
    """``(AP, IoU)`` of a score map against a binary mask.

    IoU binarizes at ``pred >= threshold``; by default the threshold is the
    map's own mean. Returns None (with a warning) when the mask is empty.
    """
    pred_map, gt_mask = np.asarray(pred_map, dtype=np.float64), np.asarray(gt_mask, bool)
    if pred_map.shape != gt_mask.shape:
        raise InputError(f"prediction {pred_map.shape} and mask {gt_mask.shape} differ")
    if not gt_mask.any():
        warnings.warn("empty ground-truth mask; class absent, skipped", stacklevel=2)
        return None
    thr = pred_map.mean() if threshold is None else threshold
    return average_precision(pred_map, gt_mask), iou(pred_map >= thr, gt_mask)


# -- probing ------------------------------------------------------------------
PROBE_SOURCES = ("global", "register_mean", "patch_mean")


def probe_features(pair: EncodedPair, source: str = "global", modality: str = AUDIO) -> np.ndarray:
    """Per-sample feature vectors ``(B, D)`` drawn from one token class."""
    audio = modality == AUDIO
    if source == "global":
        out = pair.g_audio_out if audio else pair.g_visual_out
    elif source == "register_mean":
        regs = pair.registers_audio if audio else pair.registers_visual
        if regs is None:
            raise ConfigurationError("register_mean probing needs a model with registers (n_reg > 0)")
        out = regs.mean(axis=-2)
    elif source == "patch_mean":
        out = pooled_repr(pair, modality)
    else:
        raise ParameterError(f"source must be one of {PROBE_SOURCES}, got {source!r}")
    return np.array(out.data)


# -- temporal segmentation ------------------------------------------------------
def relabel_by_first_occurrence(labels) -> np.ndarray:
    mapping: dict = {}
    return np.array([mapping.setdefault(l, len(mapping)) for l in labels], dtype=np.int64)


def temporal_segment(features: np.ndarray, k: int, seed: int = 0, max_iter: int = 50) -> np.ndarray:
    """Cluster ``T`` feature vectors into ``k`` groups.

    Average-linkage agglomerative clustering on cosine distance, with the cut
    height bisected over ``[0, 2]`` until exactly ``k`` clusters remain;
    seeded k-means if bisection does not hit ``k``.
    """
    x = np.asarray(features, dtype=np.float64)
    T = x.shape[0]
    if not 1 <= k <= T:
        raise ParameterError(f"k must lie in [1, {T}], got {k}")
    if k == 1:
        return np.zeros(T, dtype=np.int64)
    if k == T:
        return np.arange(T, dtype=np.int64)
    Z = linkage(x, method="average", metric="cosine")
    lo, hi = 0.0, 2.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        labels = fcluster(Z, t=mid, criterion="distance")
        n = labels.max()
        if n == k:
            return relabel_by_first_occurrence(labels)
        if n > k:
            lo = mid
        else:
            hi = mid
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # empty cluster on degenerate input
        _, labels = kmeans2(unit_rows(x), k, seed=seed, minit="points")
    return relabel_by_first_occurrence(labels)


def label_boundaries(labels) -> np.ndarray:
    labels = np.asarray(labels)
    return np.flatnonzero(labels[1:] != labels[:-1]) + 1


def boundary_recall(pred_labels, true_labels, tolerance: int = 1) -> float:
    """Fraction of true boundaries matched by a predicted boundary within ``tolerance`` frames."""
    true_b = label_boundaries(true_labels)
    if true_b.size == 0:
        return 1.0
    pred_b = label_boundaries(pred_labels)
    if pred_b.size == 0:
        return 0.0
    hits = [np.min(np.abs(pred_b - b)) <= tolerance for b in true_b]
    return float(np.mean(hits))
