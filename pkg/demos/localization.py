"""Audio-to-visual cosine maps, from a planted token and from a trained model.

Run: python3 demos/localization.py [epochs] [dump_dir]
The dump directory receives one PGM per evaluation clip.
"""

import sys

import numpy as np

from cavsync.harness import RunConfig, run_eval, run_pretrain
from cavsync.model import EncodedPair, localization_map
from cavsync.numerics import Tensor
from cavsync.tokenizer import VISUAL, TokenBatch

# A 14x14 grid of one-hot patch tokens; the audio summary copies cell 101.
tokens = np.eye(200)[:196][None]
batch = TokenBatch(tokens=None, kept_indices=np.arange(196)[None],
                   masked_indices=np.zeros((1, 0), dtype=int), original_patches=None,
                   modality=VISUAL, grid=(14, 14), patch=16)
pair = EncodedPair(h_audio=None, h_visual=Tensor(tokens), g_audio_out=Tensor(tokens[:, 101]),
                   g_visual_out=None, registers_audio=None, registers_visual=None,
                   joint_tokens=None, batch_a=None, batch_v=batch, prefix_len=0)
coarse, fine = localization_map(pair)
row, col = divmod(int(np.argmax(coarse)), 14)
print(f"planted peak at cell {row * 14 + col} (row {row}, col {col})")
print("upsampled map", fine.shape)

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 20
dump = sys.argv[2] if len(sys.argv) > 2 else None
cfg = RunConfig(seed=0, epochs=epochs, task="localize")
trained = run_pretrain(cfg)
print(run_eval(cfg, trained.state, dump_dir=dump)["localization"])
