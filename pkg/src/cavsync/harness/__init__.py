from .config import RunConfig
from .data import ingest_manifest, load_checkpoint, save_checkpoint, write_manifest
from .runner import (
    PretrainResult,
    embedding_set,
    extract_sequences,
    gradcheck_config,
    run_eval,
    run_gradcheck,
    run_pretrain,
    run_sweep,
)
from .synthetic import SyntheticConfig, generate_synthetic
