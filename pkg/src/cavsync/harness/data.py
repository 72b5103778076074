"""JSON-lines manifests of CAVT clip files, and model checkpoints."""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from ..alignment import AlignedPair
from ..errors import CavSyncError, DataLoadError
from ..model import ModelConfig, ModelState
from ..numerics import FormatError, load_cavt, save_cavt


def write_manifest(pairs: list[AlignedPair], directory, name: str = "manifest.jsonl") -> Path:
    """Write every clip as CAVT files plus one manifest line each."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    lines = []
    for pair in pairs:
        clip_dir = root / pair.clip_id
        clip_dir.mkdir(exist_ok=True)
        frame_paths = []
        for t in range(pair.T):
            rel = f"{pair.clip_id}/frame_{t:03d}.cavt"
            save_cavt(root / rel, pair.frames[t])
            frame_paths.append(rel)
        spec_rel = f"{pair.clip_id}/spectrogram.cavt"
        save_cavt(root / spec_rel, pair.spectrogram)
        entry = {"clip_id": pair.clip_id, "frames": frame_paths, "spectrogram": spec_rel,
                 "labels": [int(l) for l in pair.labels]}
        if pair.frame_labels is not None:
            entry["frame_labels"] = [int(l) for l in pair.frame_labels]
        if pair.audio_labels is not None:
            entry["audio_labels"] = [int(l) for l in pair.audio_labels]
        if pair.object_masks is not None:
            mask_rel = f"{pair.clip_id}/masks.cavt"
            save_cavt(root / mask_rel, pair.object_masks.astype(np.float32))
            entry["masks"] = mask_rel
        lines.append(json.dumps(entry, sort_keys=True))
    path = root / name
    path.write_text("".join(line + "\n" for line in lines))
    return path


def _load(root: Path, rel: str, clip_id: str) -> np.ndarray:
    path = root / rel
    if not path.is_file():
        raise DataLoadError(f"clip {clip_id}: missing file {path}")
    try:
        return load_cavt(path)
    except FormatError as exc:
        raise DataLoadError(f"clip {clip_id}: {exc}") from exc


def ingest_manifest(path, s_length: int) -> list[AlignedPair]:
    """Load and validate every clip listed in a JSON-lines manifest."""
    path = Path(path)
    if not path.is_file():
        raise DataLoadError(f"manifest {path} not found")
    root = path.parent
    pairs = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            entry = json.loads(line)
            clip_id = entry["clip_id"]
            frame_paths, spec_path = entry["frames"], entry["spectrogram"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DataLoadError(f"{path}:{lineno}: malformed manifest entry ({exc})") from exc
        frames = [_load(root, rel, clip_id) for rel in frame_paths]
        if not frames:
            raise DataLoadError(f"clip {clip_id}: no frames listed")
        shapes = {f.shape for f in frames}
        if len(shapes) != 1 or frames[0].ndim != 3:
            raise DataLoadError(f"clip {clip_id}: frames must share one (C, H, W) shape, got {sorted(shapes)}")
        spec = _load(root, spec_path, clip_id)
        if spec.ndim != 2:
            raise DataLoadError(f"clip {clip_id}: spectrogram must be 2-D (mel, S), got {spec.shape}")
        if s_length > spec.shape[1]:
            raise DataLoadError(
                f"clip {clip_id}: spectrogram has {spec.shape[1]} columns, shorter than "
                f"s_length={s_length}")
        masks = None
        if "masks" in entry:
            masks = _load(root, entry["masks"], clip_id).astype(bool)
        T = len(frames)
        extras = {}
        for key in ("frame_labels", "audio_labels"):
            if key in entry:
                arr = np.asarray(entry[key], dtype=np.int64)
                if arr.shape != (T,):
                    raise DataLoadError(f"clip {clip_id}: {key} needs {T} entries")
                extras[key] = arr
        try:
            pairs.append(AlignedPair(frames=np.stack(frames), spectrogram=spec, s_length=s_length,
                                     clip_id=clip_id, labels=tuple(entry.get("labels", ())),
                                     object_masks=masks, **extras))
        except CavSyncError as exc:
            raise DataLoadError(f"clip {clip_id}: {exc}") from exc
    return pairs


# -- checkpoints ---------------------------------------------------------------
def save_checkpoint(state: ModelState, directory, **meta) -> Path:
    """Write each parameter as ``<name>.cavt`` plus ``meta.json``."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    names = []
    for name, p in state.named_parameters():
        save_cavt(root / f"{name}.cavt", p.data)
        names.append(name)
    info = {"model": state.cfg.to_dict(), "seed": state.seed, "parameters": names, **meta}
    if state.classifier is not None:
        info["classifier"] = {"in_dim": state.classifier.in_dim,
                              "num_classes": state.classifier.num_classes}
    (root / "meta.json").write_text(json.dumps(info, sort_keys=True, indent=2) + "\n")
    return root


def load_checkpoint(directory) -> tuple[ModelState, dict]:
    root = Path(directory)
    meta_path = root / "meta.json"
    if not meta_path.is_file():
        raise DataLoadError(f"checkpoint {root} has no meta.json")
    meta = json.loads(meta_path.read_text())
    state = ModelState(ModelConfig(**meta["model"]), meta.get("seed", 0))
    if "classifier" in meta:
        state.attach_classifier(meta["classifier"]["in_dim"], meta["classifier"]["num_classes"])
    params = dict(state.named_parameters())
    if sorted(params) != sorted(meta["parameters"]):
        raise DataLoadError(f"checkpoint {root} parameters do not match the architecture in meta.json")
    for name, p in params.items():
        arr = _load(root, f"{name}.cavt", os.fspath(root))
        if arr.shape != p.shape:
            raise DataLoadError(f"checkpoint {root}: {name} has shape {arr.shape}, expected {p.shape}")
        p.data = arr.astype(np.float64)
    return state, meta
