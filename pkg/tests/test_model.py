import numpy as np
import pytest
from scipy import special

from cavsync.errors import ConfigurationError, InputError, ShapeError
from cavsync.model import (Block, EncodedPair, ModelConfig, ModelState, bilinear_matrix, classify,
                           cosine_map, decode, encode, forward_features, localization_map,
                           pooled_repr, tokenize, upsample_bilinear)
from cavsync.model.layers import Attention
from cavsync.numerics import Tensor, finite_diff_grad, relative_error
from cavsync.tokenizer import VISUAL, TokenBatch


def tiny(**overrides):
    base = dict(dim=16, heads=2, encoder_depth=1, decoder_dim=8, decoder_depth=1, decoder_heads=2,
                patch=8, mel_bins=16, s_length=16, frame_size=16, n_registers=2)
    base.update(overrides)
    return ModelConfig(**base)


def paper_grid(**overrides):
    """Full-resolution token grids (128x416 audio, 224x224 frames, p=16) on a narrow model."""
    base = dict(dim=16, heads=2, encoder_depth=1, decoder_dim=8, decoder_depth=1, decoder_heads=2,
                patch=16, mel_bins=128, s_length=416, frame_size=224, n_registers=8)
    base.update(overrides)
    return ModelConfig(**base)


def inputs(cfg, b=2, seed=0):
    rng = np.random.default_rng(seed)
    return (rng.standard_normal((b, 3, cfg.frame_size, cfg.frame_size)),
            rng.standard_normal((b, cfg.mel_bins, cfg.s_length)))


def run(state, ratio=0.5, b=2, seed=0, frames=None, windows=None):
    f, w = inputs(state.cfg, b, seed)
    f = f if frames is None else frames
    w = w if windows is None else windows
    ba, bv = tokenize(state, f, w, ratio, ratio, np.random.default_rng(seed))
    return encode(ba, bv, state)


# -- attention against a per-head loop ----------------------------------------
def test_attention_matches_reference_loop(rng):
    attn = Attention(8, 2, rng)
    x = rng.standard_normal((2, 5, 8))
    out = attn(Tensor(x)).data
    qkv = x @ attn.qkv.w.data + attn.qkv.b.data
    q, k, v = np.split(qkv, 3, axis=-1)
    heads = []
    for h in range(2):
        sl = slice(4 * h, 4 * h + 4)
        a = special.softmax(q[..., sl] @ k[..., sl].transpose(0, 2, 1) / 2.0, axis=-1)
        heads.append(a @ v[..., sl])
    ref = np.concatenate(heads, axis=-1) @ attn.proj.w.data + attn.proj.b.data
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_two_block_stack_gradcheck(rng):
    blocks = [Block(8, 2, rng), Block(8, 2, rng)]
    x = Tensor(rng.standard_normal((1, 4, 8)), requires_grad=True)
    probe = rng.standard_normal((1, 4, 8))

    def f(_):
        h = x
        for blk in blocks:
            h = blk(h)
        return (h * Tensor(probe)).sum()

    params = [x] + [p for blk in blocks for p in blk.parameters()]
    f(None).backward()
    for p in params:
        numeric = finite_diff_grad(f, p)
        # floor sized to the roundoff of central differences on an O(10) output;
        # the key bias has an exactly-zero gradient (softmax shift invariance)
        assert relative_error(p.grad, numeric, 1e-5).max() < 1e-4


# -- sequence lengths and shapes ----------------------------------------------
def test_paper_grid_sequence_lengths():
    cfg = paper_grid()
    state = ModelState(cfg, 0)
    pair = run(state, ratio=0.75, b=1)
    assert pair.batch_a.kept_indices.shape == (1, 52)
    assert pair.seq_len_a == 61
    assert pair.seq_len_v == 1 + 8 + 49
    pred_a, pred_v = decode(pair, state)
    assert pred_a.shape == (1, 156, 256)
    assert pred_v.shape == (1, 147, 768)


def test_no_registers_keeps_global():
    state = ModelState(paper_grid(n_registers=0), 0)
    pair = run(state, ratio=0.75, b=1)
    assert pair.seq_len_a == 53
    assert pair.registers_audio is None
    assert pair.g_audio_out.shape == (1, 16)


def test_output_shapes_contract():
    cfg = tiny()
    state = ModelState(cfg, 0)
    pair = run(state, ratio=0.5, b=3)
    n_a = cfg.audio_grid[0] * cfg.audio_grid[1]
    kept_a = n_a - 2
    assert pair.h_audio.shape == (3, kept_a, 16)
    assert pair.registers_visual.shape == (3, 2, 16)
    assert pair.joint_tokens.shape == (3, pair.seq_len_a + pair.seq_len_v, 16)
    assert pair.joint_patches("audio").shape == (3, kept_a, 16)


def test_zero_initialized_state_runs():
    state = ModelState(tiny(), 0)
    for p in state.parameters():
        p.data = np.zeros_like(p.data)
    pair = run(state, ratio=0.5)
    pred_a, pred_v = decode(pair, state)
    assert np.all(np.isfinite(pred_a.data)) and pred_v.shape[-1] == 8 * 8 * 3


def test_zero_masked_decodes_empty():
    state = ModelState(tiny(), 0)
    pred_a, pred_v = decode(run(state, ratio=0.0), state)
    assert pred_a.shape == (2, 0, 64) and pred_v.shape == (2, 0, 192)


def test_encoders_do_not_share_weights():
    state = ModelState(tiny(), 0)
    a = state.encoder_a[0].attn.qkv.w
    v = state.encoder_v[0].attn.qkv.w
    assert a is not v and not np.array_equal(a.data, v.data)


def test_token_width_mismatch():
    state = ModelState(tiny(), 0)
    other = ModelState(tiny(dim=32, heads=2), 0)
    ba, bv = tokenize(other, *inputs(other.cfg), 0.0, 0.0)
    with pytest.raises(ShapeError):
        encode(ba, bv, state)


def test_input_resolution_mismatch():
    state = ModelState(tiny(), 0)
    with pytest.raises(ShapeError):
        tokenize(state, np.zeros((1, 3, 8, 8)), np.zeros((1, 16, 16)), 0.0, 0.0)


@pytest.mark.parametrize("bad", [dict(dim=18), dict(s_length=20), dict(n_registers=-1), dict(heads=0)])
def test_config_validation(bad):
    with pytest.raises(ConfigurationError):
        tiny(**bad)


# -- pass independence and weight sharing -------------------------------------
def test_audio_pass_ignores_visual_input():
    state = ModelState(tiny(), 0)
    f, w = inputs(state.cfg)
    base = run(state, frames=f, windows=w)
    other = run(state, frames=f * -3.0 + 1.0, windows=w)
    np.testing.assert_array_equal(base.h_audio.data, other.h_audio.data)
    np.testing.assert_array_equal(base.g_audio_out.data, other.g_audio_out.data)
    assert not np.allclose(base.h_visual.data, other.h_visual.data)
    assert not np.allclose(base.joint_tokens.data, other.joint_tokens.data)


def test_visual_pass_ignores_audio_input():
    state = ModelState(tiny(), 0)
    f, w = inputs(state.cfg)
    base = run(state, frames=f, windows=w)
    other = run(state, frames=f, windows=w[:, ::-1] * 2.0)
    np.testing.assert_array_equal(base.h_visual.data, other.h_visual.data)


def _snapshot(pair):
    return pair.h_audio.data.copy(), pair.h_visual.data.copy(), pair.joint_tokens.data.copy()


def test_shared_attention_weights_reach_all_passes():
    state = ModelState(tiny(), 0)
    before = _snapshot(run(state))
    # a uniform offset would be a per-token constant shift, erased by the output norm
    noise = np.random.default_rng(1).standard_normal(state.joint.attn.proj.w.shape)
    state.joint.attn.proj.w.data = state.joint.attn.proj.w.data + 0.1 * noise
    after = _snapshot(run(state))
    for b, a in zip(before, after):
        assert not np.allclose(b, a)


@pytest.mark.parametrize("norm, changed", [("ln_a", 0), ("ln_v", 1), ("ln_joint", 2)])
def test_pass_norms_are_private(norm, changed):
    state = ModelState(tiny(), 0)
    before = _snapshot(run(state))
    ns = getattr(state.joint, norm)
    ns.norm1.gain.data = ns.norm1.gain.data * 1.5
    after = _snapshot(run(state))
    for k in range(3):
        if k == changed:
            assert not np.allclose(before[k], after[k])
        else:
            np.testing.assert_array_equal(before[k], after[k])


def test_without_global_uses_pooled_patches():
    state = ModelState(tiny(use_global=False, n_registers=0), 0)
    pair = run(state)
    np.testing.assert_allclose(pair.g_audio_out.data, pair.h_audio.data.mean(axis=1), atol=1e-15)
    assert not hasattr(state, "global_a")


# -- pooled representation -----------------------------------------------------
def _fake_pair(h_audio):
    h = Tensor(np.asarray(h_audio, dtype=np.float64))
    return EncodedPair(h_audio=h, h_visual=h, g_audio_out=h[:, 0], g_visual_out=h[:, 0],
                       registers_audio=None, registers_visual=None, joint_tokens=h,
                       batch_a=None, batch_v=None, prefix_len=0)


def test_pooled_repr_constant_tokens():
    x = np.array([0.3, -1.2, 4.0])
    np.testing.assert_allclose(pooled_repr(_fake_pair(np.tile(x, (1, 5, 1))), "audio").data[0], x,
                               atol=1e-15)


def test_pooled_repr_hand_example():
    out = pooled_repr(_fake_pair([[[1.0, 0.0], [0.0, 1.0]]]), "audio").data
    np.testing.assert_allclose(out, [[0.5, 0.5]])


def test_pooled_repr_permutation_invariant(rng):
    h = rng.standard_normal((1, 7, 4))
    a = pooled_repr(_fake_pair(h), "audio").data
    b = pooled_repr(_fake_pair(h[:, rng.permutation(7)]), "audio").data
    np.testing.assert_allclose(a, b, atol=1e-14)


# -- classifier ------------------------------------------------------------------
def test_classifier_sequence_length_and_logits(rng, monkeypatch):
    state = ModelState(tiny(), 0)
    head = state.attach_classifier(in_dim=16, num_classes=5)
    seen = []
    original = type(head.blocks[0]).__call__

    def spy(self, x, *a, **k):
        seen.append(x.shape)
        return original(self, x, *a, **k)

    monkeypatch.setattr(type(head.blocks[0]), "__call__", spy)
    audio = rng.standard_normal((3, 16, 16))
    visual = rng.standard_normal((3, 16, 16))
    logits = classify((audio, visual), state, "audio")
    assert logits.shape == (3, 5)
    assert seen[0] == (3, 17, 16)


def test_classifier_both_concatenates(rng):
    state = ModelState(tiny(), 0)
    state.attach_classifier(in_dim=32, num_classes=4)
    audio, visual = rng.standard_normal((2, 4, 16)), rng.standard_normal((2, 4, 16))
    logits = classify((audio, visual), state, "both").data
    direct = classify(np.concatenate([audio, visual], -1), state).data
    np.testing.assert_array_equal(logits, direct)


def test_classifier_identical_inputs_identical_logits(rng):
    state = ModelState(tiny(), 0)
    state.attach_classifier(in_dim=16, num_classes=3)
    seq = rng.standard_normal((1, 6, 16))
    logits = classify(np.concatenate([seq, seq]), state, "audio").data
    np.testing.assert_array_equal(logits[0], logits[1])


def test_classifier_errors(rng):
    state = ModelState(tiny(), 0)
    with pytest.raises(ConfigurationError):
        classify(np.zeros((1, 2, 16)), state)
    state.attach_classifier(in_dim=16, num_classes=3)
    with pytest.raises(InputError):
        classify(np.zeros((1, 0, 16)), state)
    with pytest.raises(ShapeError):
        classify(np.zeros((1, 2, 8)), state)


# -- localization ------------------------------------------------------------------
def _loc_pair(g_audio, h_visual, grid):
    b, n, _ = h_visual.shape
    bv = TokenBatch(tokens=None, kept_indices=np.tile(np.arange(n), (b, 1)),
                    masked_indices=np.zeros((b, 0), dtype=int), original_patches=None,
                    modality=VISUAL, grid=grid, patch=16)
    return EncodedPair(h_audio=None, h_visual=Tensor(h_visual), g_audio_out=Tensor(g_audio),
                       g_visual_out=None, registers_audio=None, registers_visual=None,
                       joint_tokens=None, batch_a=None, batch_v=bv, prefix_len=0)


def test_planted_token_is_unique_argmax():
    d = 196 + 4
    tokens = np.eye(d)[:196][None] * 3.0  # mutually orthogonal patch tokens
    cell = 87
    g = tokens[:, cell] * 0.25
    coarse, fine = localization_map(_loc_pair(g, tokens, (14, 14)))
    assert coarse.shape == (1, 14, 14) and fine.shape == (1, 224, 224)
    flat = coarse.reshape(-1)
    assert int(np.argmax(flat)) == cell and abs(flat[cell] - 1.0) < 1e-9
    assert np.sum(flat == flat.max()) == 1
    np.testing.assert_array_equal(np.delete(flat, cell), 0.0)


def test_cosine_values_bounded(rng):
    m = cosine_map(rng.standard_normal((4, 8)), rng.standard_normal((4, 30, 8)))
    assert m.min() >= -1.0 and m.max() <= 1.0


def test_constant_map_upsamples_to_constant():
    np.testing.assert_allclose(upsample_bilinear(np.full((14, 14), 0.37), (224, 224)), 0.37,
                               atol=1e-14)


def test_upsampling_never_exceeds_input_range(rng):
    for _ in range(50):
        m = rng.uniform(-1, 1, (7, 9))
        up = upsample_bilinear(m, (56, 45))
        assert up.max() <= m.max() + 1e-12 and up.min() >= m.min() - 1e-12


def test_bilinear_matches_scipy_zoom_interior(rng):
    # half-pixel bilinear reference: interpolate at source coordinate (i + 0.5) * scale - 0.5
    from scipy.interpolate import RegularGridInterpolator
    m = rng.standard_normal((5, 6))
    up = upsample_bilinear(m, (20, 24))
    interp = RegularGridInterpolator((np.arange(5), np.arange(6)), m)
    ys = np.clip((np.arange(20) + 0.5) / 4 - 0.5, 0, 4)
    xs = np.clip((np.arange(24) + 0.5) / 4 - 0.5, 0, 5)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    np.testing.assert_allclose(up, interp(np.stack([yy, xx], -1)), atol=1e-12)
    np.testing.assert_allclose(bilinear_matrix(5, 20).sum(1), 1.0)


def test_masked_visual_rejected():
    state = ModelState(tiny(), 0)
    with pytest.raises(InputError):
        localization_map(run(state, ratio=0.5))


def test_forward_features_localization_shape():
    state = ModelState(tiny(), 0)
    f, w = inputs(state.cfg, b=3)
    coarse, fine = localization_map(forward_features(state, f, w))
    assert coarse.shape == (3, 2, 2) and fine.shape == (3, 16, 16)
    assert np.abs(fine).max() <= 1.0


def test_forward_is_deterministic():
    state = ModelState(tiny(), 0)
    f, w = inputs(state.cfg)
    a, b = forward_features(state, f, w), forward_features(state, f, w)
    assert a.joint_tokens.data.tobytes() == b.joint_tokens.data.tobytes()


def test_same_seed_same_parameters():
    a, b = ModelState(tiny(), 3), ModelState(tiny(), 3)
    assert all(np.array_equal(p.data, q.data) for p, q in zip(a.parameters(), b.parameters()))
