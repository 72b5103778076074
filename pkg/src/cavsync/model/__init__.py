from .core import (
    ClassifierHead,
    EncodedPair,
    ModelConfig,
    ModelState,
    bilinear_matrix,
    classify,
    cosine_map,
    decode,
    encode,
    forward_features,
    localization_map,
    pooled_repr,
    select_modalities,
    tokenize,
    upsample_bilinear,
)
from .layers import Block, JointBlock, LayerNorm, Linear, Module
