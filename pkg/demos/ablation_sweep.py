"""Retrieval R@1 as the audio-visual correlation rho varies.

Each value trains a fresh model, so the default (3 values, 20 epochs)
takes a couple of minutes.
Run: python3 demos/ablation_sweep.py [axis] [epochs]
"""

import sys

from cavsync.harness import RunConfig, run_sweep

axis = sys.argv[1] if len(sys.argv) > 1 else "rho"
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 20
report = run_sweep(RunConfig(seed=0, epochs=epochs), axis)
for entry in report["results"]:
    r = entry["retrieve"]["retrieval"]
    print(f"{axis}={entry['value']}: V2A R@1 {r['V2A']['diag_mean']['R@1']:.3f}  "
          f"A2V R@1 {r['A2V']['diag_mean']['R@1']:.3f}")
