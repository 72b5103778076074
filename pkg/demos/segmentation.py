"""Temporal boundaries from per-frame embeddings.

First a hand-made sequence with two obvious events, then a trained model on
synthetic clips whose event boundaries are known.
Run: python3 demos/segmentation.py [epochs]
"""

import sys

import numpy as np

from cavsync.downstream import temporal_segment
from cavsync.harness import RunConfig, run_eval, run_pretrain

rng = np.random.default_rng(0)
frames = np.concatenate([rng.normal([4, 0, 0], 0.3, (6, 3)), rng.normal([0, 4, 0], 0.3, (10, 3))])
print("toy labels:", temporal_segment(frames, 2).tolist())

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 50
cfg = RunConfig(seed=0, epochs=epochs, task="segment")
trained = run_pretrain(cfg)
print(run_eval(cfg, trained.state)["segmentation"])
