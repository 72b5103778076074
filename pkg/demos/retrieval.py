"""Pretrain on correlated synthetic clips, then compare the four retrieval strategies.

Run: python3 demos/retrieval.py [epochs]
With the default 50 epochs this takes about 1.5 minutes on one core.
"""

import sys

from cavsync.harness import RunConfig, run_eval, run_pretrain

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 50
cfg = RunConfig(seed=0, epochs=epochs)
trained = run_pretrain(cfg)
first, last = trained.epochs[0], trained.epochs[-1]
print(f"total loss {first['total']:.3f} -> {last['total']:.3f}")

metrics = run_eval(cfg, trained.state, "retrieve")
print(f"chance R@1 = {metrics['chance_R@1']:.4f}")
for direction, table in metrics["retrieval"].items():
    for strategy, scores in table.items():
        row = "  ".join(f"{k} {v:.3f}" for k, v in scores.items())
        print(f"{direction} {strategy:<10} {row}")
