"""Pretraining, evaluation, gradient checking and ablation sweeps."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..alignment import AlignedPair
from ..downstream import (EmbeddingSequenceSet, boundary_recall, label_boundaries, probe_features,
                          retrieval_report, segmentation_scores, temporal_segment)
from ..errors import ConfigurationError, InputError
from ..model import ModelState, classify, forward_features, localization_map
from ..numerics import Tensor, finite_diff_grad, log_softmax_row, no_grad, relative_error
from ..objectives import AdamW, LossReport, OptimizerConfig, compute_loss, train_step
from ..tokenizer import AUDIO, VISUAL
from .config import RunConfig
from .data import save_checkpoint
from .synthetic import generate_synthetic

log = logging.getLogger(__name__)


def dump_json(obj, path=None) -> str:
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


# -- pretraining ------------------------------------------------------------------
@dataclass
class PretrainResult:
    state: ModelState
    epochs: list[dict] = field(default_factory=list)
    steps: list[dict] = field(default_factory=list)
    checkpoint: Path | None = None


def _epoch_summary(epoch: int, reports: list[LossReport]) -> dict:
    keys = ("contrastive", "recon_audio", "recon_visual", "total")
    out = {k: float(np.mean([getattr(r, k) for r in reports])) for k in keys}
    out["epoch"] = epoch
    out["steps"] = len(reports)
    return out


def run_pretrain(cfg: RunConfig, data: list[AlignedPair] | None = None, out_dir=None,
                 state: ModelState | None = None) -> PretrainResult:
    """Train from ``cfg.seed``; writes ``checkpoint/`` and ``train_log.jsonl`` under ``out_dir``."""
    if data is None:
        data = generate_synthetic(cfg.synthetic_config("train"))
    if len(data) < cfg.batch_size:
        raise InputError(f"dataset of {len(data)} clips is smaller than batch size {cfg.batch_size}")
    state = state or ModelState(cfg.model_config(), cfg.seed)
    tcfg = cfg.train_config()
    steps_per_epoch = len(data) // cfg.batch_size
    opt = AdamW(state.pretrain_parameters(), cfg.optimizer_config(steps_per_epoch * cfg.epochs))
    rng = np.random.default_rng(cfg.seed)
    result = PretrainResult(state)
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(data))
        reports = []
        for s in range(steps_per_epoch):
            batch = [data[i] for i in order[s * cfg.batch_size:(s + 1) * cfg.batch_size]]
            rep = train_step(batch, state, opt, tcfg, rng)
            reports.append(rep)
            result.steps.append({"step": step, "epoch": epoch, "seed": cfg.seed, **rep.to_dict()})
            step += 1
        summary = _epoch_summary(epoch, reports)
        result.epochs.append(summary)
        log.info("epoch %d total %.4f contrastive %.4f recon %.4f", epoch, summary["total"],
                 summary["contrastive"], summary["recon_audio"] + summary["recon_visual"])
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.checkpoint = save_checkpoint(state, out / "checkpoint", step=step,
                                            run_config=cfg.to_dict())
        with open(out / "train_log.jsonl", "w") as fh:
            for rec in result.steps:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return result


# -- feature extraction -------------------------------------------------------------
def extract_sequences(state: ModelState, data: list[AlignedPair], videos_per_batch: int = 4) -> dict:
    """Per-video, per-timestep token summaries from unmasked forwards.

    Returns ``(N, T, D)`` arrays keyed ``{audio,visual}_{global,register_mean,patch_mean}``.
    """
    if not data:
        raise InputError("no videos to encode")
    T = data[0].T
    if any(p.T != T for p in data):
        raise InputError("all videos must have the same number of frames")
    sources = ["global", "patch_mean"] + (["register_mean"] if state.cfg.n_registers else [])
    out = {f"{m}_{s}": [] for m in (AUDIO, VISUAL) for s in sources}
    for start in range(0, len(data), videos_per_batch):
        chunk = data[start:start + videos_per_batch]
        frames = np.concatenate([p.frames for p in chunk])
        windows = np.stack([p.window(t) for p in chunk for t in range(T)])
        enc = forward_features(state, frames, windows)
        for m in (AUDIO, VISUAL):
            for s in sources:
                feats = probe_features(enc, s, m)
                out[f"{m}_{s}"].append(feats.reshape(len(chunk), T, -1))
    return {k: np.concatenate(v) for k, v in out.items()}


def embedding_set(state: ModelState, data: list[AlignedPair]) -> EmbeddingSequenceSet:
    seqs = extract_sequences(state, data)
    return EmbeddingSequenceSet.from_raw(seqs["visual_global"], seqs["audio_global"],
                                         [p.clip_id for p in data])


# -- evaluation -----------------------------------------------------------------------
def primary_label(pair: AlignedPair) -> int:
    """Class of the longest event (earliest wins ties)."""
    labels = pair.frame_labels
    if labels is None:
        if not pair.labels:
            raise InputError(f"clip {pair.clip_id} has no labels")
        return int(pair.labels[0])
    values, first, counts = np.unique(labels, return_index=True, return_counts=True)
    best = max(range(len(values)), key=lambda i: (counts[i], -first[i]))
    return int(values[best])


def _probe_inputs(seqs: dict, source: str, modality_select: str) -> np.ndarray:
    if modality_select == "both":
        return np.concatenate([seqs[f"audio_{source}"], seqs[f"visual_{source}"]], axis=-1)
    return seqs[f"{modality_select}_{source}"]


def train_probe(state: ModelState, features: np.ndarray, labels: np.ndarray, num_classes: int,
                epochs: int, lr: float, batch_size: int, seed: int) -> list[float]:
    """Fit the CLS-transformer head on frozen per-timestep features."""
    head = state.attach_classifier(features.shape[-1], num_classes, seed)
    params = list(head.named_parameters())
    steps = max(1, epochs * int(np.ceil(len(features) / batch_size)))
    opt = AdamW(params, OptimizerConfig(lr=lr, total_steps=steps, weight_decay=0.0))
    rng = np.random.default_rng(seed)
    losses = []
    for _ in range(epochs):
        order = rng.permutation(len(features))
        for s in range(0, len(features), batch_size):
            idx = order[s:s + batch_size]
            logits = classify(features[idx], state)
            logp = log_softmax_row(logits)
            loss = -logp[np.arange(len(idx)), labels[idx]].mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.data))
    return losses


def predict_probe(state: ModelState, features: np.ndarray) -> np.ndarray:
    with no_grad():
        return np.argmax(classify(features, state).data, axis=-1)


def _localize(cfg: RunConfig, state: ModelState, data: list[AlignedPair], dump_dir=None) -> dict:
    per_class: dict[int, list[tuple[float, float]]] = {}
    maps = 0
    if dump_dir is not None:
        Path(dump_dir).mkdir(parents=True, exist_ok=True)
    for pair in data:
        if pair.object_masks is None or pair.audio_labels is None or pair.frame_labels is None:
            raise InputError(f"clip {pair.clip_id} lacks object masks or labels for localization")
        t = pair.T // 2
        enc = forward_features(state, pair.frames[t:t + 1], pair.window(t)[None])
        _, full = localization_map(enc, out_size=pair.frames.shape[-2:])
        maps += 1
        if dump_dir is not None:
            _dump_map(Path(dump_dir) / f"{pair.clip_id}_t{t:03d}", full[0])
        if pair.audio_labels[t] != pair.frame_labels[t]:
            continue
        scores = segmentation_scores(full[0], pair.object_masks[t], cfg.iou_threshold)
        if scores is not None:
            per_class.setdefault(int(pair.audio_labels[t]), []).append(scores)
    if not per_class:
        return {"maps": maps, "mAP": None, "mIoU": None, "classes": 0}
    ap = [np.mean([s[0] for s in v]) for v in per_class.values()]
    ious = [np.mean([s[1] for s in v]) for v in per_class.values()]
    return {"maps": maps, "mAP": float(np.mean(ap)), "mIoU": float(np.mean(ious)),
            "classes": len(per_class)}


def _dump_map(stem: Path, image: np.ndarray) -> None:
    from ..numerics import save_cavt
    save_cavt(stem.with_suffix(".cavt"), image)
    gray = np.clip((image + 1.0) * 127.5, 0, 255).astype(np.uint8)
    h, w = gray.shape
    stem.with_suffix(".pgm").write_bytes(f"P5\n{w} {h}\n255\n".encode() + gray.tobytes())


def _segment(cfg: RunConfig, seqs: dict, data: list[AlignedPair]) -> dict:
    feats = _probe_inputs(seqs, "global", cfg.segment_modality)
    recalls, exact = [], []
    for pair, f in zip(data, feats):
        truth = pair.audio_labels if cfg.segment_modality == AUDIO else pair.frame_labels
        if truth is None:
            raise InputError(f"clip {pair.clip_id} lacks per-timestep labels for segmentation")
        k = len(label_boundaries(truth)) + 1
        pred = temporal_segment(f, min(k, pair.T), seed=cfg.seed)
        recalls.append(boundary_recall(pred, truth, tolerance=1))
        exact.append(float(np.array_equal(pred, _first_occurrence(truth))))
    return {"boundary_recall@1": float(np.mean(recalls)), "exact": float(np.mean(exact)),
            "videos": len(data), "modality": cfg.segment_modality}


def _first_occurrence(labels) -> np.ndarray:
    mapping: dict = {}
    return np.array([mapping.setdefault(int(l), len(mapping)) for l in labels])


def run_eval(cfg: RunConfig, state: ModelState, task: str | None = None,
             eval_data: list[AlignedPair] | None = None,
             train_data: list[AlignedPair] | None = None, dump_dir=None) -> dict:
    """Task metrics as a JSON-ready dict."""
    task = task or cfg.task
    if state.cfg != cfg.model_config():
        raise ConfigurationError("checkpoint architecture does not match the run configuration")
    if eval_data is None:
        eval_data = generate_synthetic(cfg.synthetic_config("eval"))
    metrics: dict = {"task": task, "seed": cfg.seed, "num_videos": len(eval_data)}
    if task == "retrieve":
        emb = embedding_set(state, eval_data)
        metrics["chance_R@1"] = 1.0 / len(eval_data)
        metrics["retrieval"] = retrieval_report(emb)
    elif task == "classify":
        if train_data is None:
            train_data = generate_synthetic(cfg.synthetic_config("train"))
        tr = _probe_inputs(extract_sequences(state, train_data), cfg.probe_source, cfg.modality_select)
        te = _probe_inputs(extract_sequences(state, eval_data), cfg.probe_source, cfg.modality_select)
        ytr = np.array([primary_label(p) for p in train_data])
        yte = np.array([primary_label(p) for p in eval_data])
        num_classes = int(max(ytr.max(), yte.max()) + 1)
        losses = train_probe(state, tr, ytr, num_classes, cfg.probe_epochs, cfg.probe_lr,
                             cfg.batch_size, cfg.seed)
        pred = predict_probe(state, te)
        metrics.update({"accuracy": float(np.mean(pred == yte)),
                        "chance": 1.0 / num_classes,
                        "majority_baseline": float(np.max(np.bincount(yte)) / len(yte)),
                        "probe_source": cfg.probe_source, "modality_select": cfg.modality_select,
                        "final_probe_loss": losses[-1] if losses else None})
    elif task == "localize":
        metrics["localization"] = _localize(cfg, state, eval_data, dump_dir)
    elif task == "segment":
        metrics["segmentation"] = _segment(cfg, extract_sequences(state, eval_data), eval_data)
    else:
        raise ConfigurationError(f"unknown task {task!r}")
    return metrics


# -- gradient check ------------------------------------------------------------------------
def gradcheck_config(**overrides) -> RunConfig:
    """Toy architecture for gradient checks: width 16, one encoder layer, 4 patches per modality."""
    base = dict(dim=16, heads=2, encoder_depth=1, decoder_dim=8, decoder_depth=1, decoder_heads=2,
                patch=8, mel_bins=16, s_length=16, frame_size=16, S=32, n_registers=2,
                mask_ratio_a=0.5, mask_ratio_v=0.5, batch_size=3, temperature=0.5)
    base.update(overrides)
    return RunConfig(**base)


def parameter_group(name: str) -> str:
    head, _, rest = name.partition(".")
    if head == "joint":
        sub = rest.split(".")[0]
        return f"joint.{sub}" if sub.startswith("ln_") else "joint.shared"
    return head


def run_gradcheck(cfg: RunConfig | None = None, step: float = 1e-5, tolerance: float = 1e-4,
                  per_tensor: int = 4, floor: float = 1e-6) -> dict:
    """Compare reverse-mode gradients with central differences for every parameter group.

    For each parameter tensor the entries with the largest analytic gradient
    plus a few random entries are perturbed. The classifier head is checked
    against a cross-entropy loss on random sequences.
    """
    cfg = cfg or gradcheck_config()
    state = ModelState(cfg.model_config(), cfg.seed)
    n_params = sum(p.size for _, p in state.pretrain_parameters())
    if n_params >= 50_000:
        raise ConfigurationError(f"gradcheck needs a toy model (< 50k parameters), got {n_params}")
    rng = np.random.default_rng(cfg.seed)
    b = cfg.batch_size
    mc = state.cfg
    frames = rng.normal(size=(b, mc.visual_channels, mc.frame_size, mc.frame_size))
    windows = rng.normal(size=(b, mc.mel_bins, mc.s_length))
    tcfg = cfg.train_config()

    def pretrain_loss() -> Tensor:
        return compute_loss(state, frames, windows, tcfg, np.random.default_rng(cfg.seed + 7)).loss

    state.attach_classifier(2 * mc.dim, 3, cfg.seed)
    seq = rng.normal(size=(b, 4, 2 * mc.dim))
    target = rng.integers(0, 3, size=b)

    def classifier_loss() -> Tensor:
        logp = log_softmax_row(classify(seq, state))
        return -logp[np.arange(b), target].mean()

    groups: dict[str, dict] = {}
    for loss_fn, named in ((pretrain_loss, state.pretrain_parameters()),
                           (classifier_loss, list(state.classifier.named_parameters("classifier.")))):
        for _, p in named:
            p.grad = None
        loss_fn().backward()
        pick_rng = np.random.default_rng(cfg.seed + 11)
        for name, p in named:
            analytic = np.zeros(p.size) if p.grad is None else p.grad.reshape(-1).copy()
            k = min(per_tensor, p.size)
            top = np.argsort(-np.abs(analytic), kind="stable")[: (k + 1) // 2]
            rest = np.setdiff1d(np.arange(p.size), top)
            extra = pick_rng.choice(rest, size=min(k - len(top), rest.size), replace=False)
            idx = np.concatenate([top, extra]).astype(int)
            with no_grad():
                numeric = finite_diff_grad(lambda _: loss_fn(), p, step, indices=idx).reshape(-1)
            err = relative_error(analytic[idx], numeric[idx], floor)
            g = groups.setdefault(parameter_group(name), {"max_rel_error": 0.0, "checked": 0, "tensors": 0})
            g["max_rel_error"] = max(g["max_rel_error"], float(err.max()))
            g["checked"] += int(idx.size)
            g["tensors"] += 1
    for g in groups.values():
        g["passed"] = g["max_rel_error"] < tolerance
    return {"passed": all(g["passed"] for g in groups.values()), "tolerance": tolerance,
            "step": step, "parameters": n_params, "groups": groups}


# -- sweeps ---------------------------------------------------------------------------------
SWEEPS = {
    "registers": ("n_registers", [0, 4, 8, 16]),
    "global": ("use_global", [True, False]),
    "masking": ("mask_ratio", [0.6, 0.75, 0.9]),
    "frames": ("T", [10, 16]),
    "segment_length": ("s_length", [16, 32, 48]),
    "aggregation": (None, [None]),
    "rho": ("rho", [0.0, 0.5, 1.0]),
}


def sweep_configs(base: RunConfig, axis: str, values=None) -> list[tuple[object, RunConfig]]:
    if axis not in SWEEPS:
        raise ConfigurationError(f"unknown sweep axis {axis!r}; choose from {sorted(SWEEPS)}")
    field_name, default_values = SWEEPS[axis]
    out = []
    for v in (values if values is not None else default_values):
        if field_name is None:
            out.append((v, base))
        elif field_name == "mask_ratio":
            out.append((v, base.override(mask_ratio_a=v, mask_ratio_v=v)))
        else:
            out.append((v, base.override(**{field_name: v})))
    return out


def run_sweep(base: RunConfig, axis: str, values=None, tasks=("retrieve",)) -> dict:
    """Pretrain once per axis value and evaluate each requested task."""
    results = []
    for value, cfg in sweep_configs(base, axis, values):
        trained = run_pretrain(cfg)
        entry = {"value": value, "final_epoch": trained.epochs[-1] if trained.epochs else None}
        for task in tasks:
            entry[task] = run_eval(cfg, trained.state, task)
        results.append(entry)
    return {"axis": axis, "base": base.to_dict(), "results": results}
