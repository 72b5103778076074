import math

import numpy as np
import pytest
from scipy import special

from cavsync.alignment import AlignedPair
from cavsync.errors import ConfigurationError, InputError, ParameterError, ShapeError
from cavsync.model import ModelConfig, ModelState
from cavsync.numerics import Tensor, finite_diff_grad, relative_error
from cavsync.objectives import (AdamW, OptimizerConfig, TrainConfig, compute_loss,
                                contrastive_loss, learning_rate, reconstruction_loss,
                                similarity_matrix, total_loss, train_step)


def nce_oracle(gv, ga, tau):
    """Row-wise InfoNCE from scipy's logsumexp, visual rows as queries."""
    v = gv / np.linalg.norm(gv, axis=1, keepdims=True)
    a = ga / np.linalg.norm(ga, axis=1, keepdims=True)
    s = v @ a.T / tau
    return float(np.mean(special.logsumexp(s, axis=1) - np.diag(s)))


# -- contrastive -----------------------------------------------------------------
def test_orthonormal_pairs_tau_one():
    e = np.eye(2)
    loss = contrastive_loss(e, e, temperature=1.0, direction="v2a").item()
    assert abs(loss - 0.31326) < 1e-4
    assert abs(loss - (-math.log(math.e / (math.e + 1)))) < 1e-12


@pytest.mark.parametrize("n", [2, 3, 8, 32])
def test_uniform_similarity_is_log_n(n):
    ones = np.ones((n, 4))
    for direction in ("v2a", "a2v", "symmetric"):
        assert abs(contrastive_loss(ones, ones, 0.05, direction).item() - math.log(n)) < 1e-9


def test_matches_logsumexp_oracle(rng):
    gv, ga = rng.standard_normal((6, 5)), rng.standard_normal((6, 5))
    assert abs(contrastive_loss(gv, ga, 0.2, "v2a").item() - nce_oracle(gv, ga, 0.2)) < 1e-12
    assert abs(contrastive_loss(gv, ga, 0.2, "a2v").item() - nce_oracle(ga, gv, 0.2)) < 1e-12
    sym = 0.5 * (nce_oracle(gv, ga, 0.2) + nce_oracle(ga, gv, 0.2))
    assert abs(contrastive_loss(gv, ga, 0.2).item() - sym) < 1e-12


def test_symmetric_matrix_all_directions_agree(rng):
    g = rng.standard_normal((5, 3))
    vals = [contrastive_loss(g, g, 0.3, d).item() for d in ("v2a", "a2v", "symmetric")]
    assert max(vals) - min(vals) < 1e-12


def test_scale_invariance(rng):
    gv, ga = rng.standard_normal((4, 6)), rng.standard_normal((4, 6))
    scales = rng.uniform(0.1, 10, (4, 1))
    a = contrastive_loss(gv, ga, 0.1).item()
    b = contrastive_loss(gv * scales, ga * scales[::-1], 0.1).item()
    assert abs(a - b) < 1e-12
    np.testing.assert_allclose(similarity_matrix(gv * scales, ga).data, similarity_matrix(gv, ga).data,
                               atol=1e-14)


def test_permutation_invariance(rng):
    gv, ga = rng.standard_normal((7, 3)), rng.standard_normal((7, 3))
    perm = rng.permutation(7)
    assert abs(contrastive_loss(gv, ga).item() - contrastive_loss(gv[perm], ga[perm]).item()) < 1e-12


def test_descent_pushes_toward_aligned_diagonal(rng):
    gv = Tensor(rng.standard_normal((4, 4)), requires_grad=True)
    ga = Tensor(rng.standard_normal((4, 4)), requires_grad=True)
    first = None
    for _ in range(300):
        gv.grad = ga.grad = None
        loss = contrastive_loss(gv, ga, 0.5, "symmetric")
        loss.backward()
        first = loss.item() if first is None else first
        gv.data = gv.data - 0.5 * gv.grad
        ga.data = ga.data - 0.5 * ga.grad
    s = similarity_matrix(gv, ga).data
    assert loss.item() < first
    assert np.diag(s).min() > 0.9
    assert s[~np.eye(4, dtype=bool)].max() < 0.0


def test_contrastive_gradcheck(rng):
    gv = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
    ga = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
    f = lambda _: contrastive_loss(gv, ga, 0.3)  # noqa: E731
    f(None).backward()
    for x in (gv, ga):
        assert relative_error(x.grad, finite_diff_grad(f, x), 1e-8).max() < 1e-5


def test_contrastive_errors():
    with pytest.raises(InputError):
        contrastive_loss(np.ones((1, 3)), np.ones((1, 3)))
    with pytest.raises(ShapeError):
        contrastive_loss(np.ones((2, 3)), np.ones((3, 3)))
    with pytest.raises(ParameterError):
        contrastive_loss(np.ones((2, 3)), np.ones((2, 3)), temperature=0)
    with pytest.raises(ParameterError):
        contrastive_loss(np.ones((2, 3)), np.ones((2, 3)), direction="both")
    with pytest.raises(FloatingPointError):
        contrastive_loss(np.array([[1.0, 0], [0, 0]]), np.eye(2))


# -- reconstruction --------------------------------------------------------------
def test_perfect_reconstruction_is_zero(rng):
    a, v = rng.standard_normal((3, 4, 16)), rng.standard_normal((3, 5, 48))
    la, lv, lr = reconstruction_loss(Tensor(a), a, Tensor(v), v)
    assert la.item() == 0.0 and lv.item() == 0.0 and lr.item() == 0.0


def test_constant_offset_element_mean():
    t = np.zeros((1, 1, 256))
    la, _, _ = reconstruction_loss(Tensor(t + 1.0), t, Tensor(np.zeros((1, 1, 8))), np.zeros((1, 1, 8)))
    assert la.item() == 1.0


def test_patch_normalization_divides_by_count_only():
    t = np.zeros((1, 2, 4))
    la, _, _ = reconstruction_loss(Tensor(t + 1.0), t, Tensor(t), t, normalization="patch")
    assert la.item() == 4.0


def test_doubling_residual_quadruples(rng):
    t = rng.standard_normal((2, 3, 4))
    r = rng.standard_normal((2, 3, 4))
    one = reconstruction_loss(Tensor(t + r), t, Tensor(t + r), t)[2].item()
    two = reconstruction_loss(Tensor(t + 2 * r), t, Tensor(t + 2 * r), t)[2].item()
    assert abs(two - 4 * one) < 1e-12


def test_batch_average_matches_hand_formula(rng):
    pa, ta = rng.standard_normal((3, 2, 4)), rng.standard_normal((3, 2, 4))
    pv, tv = rng.standard_normal((3, 5, 6)), rng.standard_normal((3, 5, 6))
    la, lv, lr = reconstruction_loss(Tensor(pa), ta, Tensor(pv), tv)
    per_a = ((pa - ta) ** 2).mean(axis=(1, 2))
    per_v = ((pv - tv) ** 2).mean(axis=(1, 2))
    assert abs(la.item() - per_a.mean()) < 1e-12
    assert abs(lr.item() - (per_a + per_v).mean()) < 1e-12


def test_no_masked_patches_contribute_zero():
    empty = np.zeros((2, 0, 4))
    la, lv, lr = reconstruction_loss(Tensor(empty), empty, Tensor(empty), empty)
    assert lr.item() == 0.0


def test_reconstruction_errors():
    with pytest.raises(ShapeError):
        reconstruction_loss(Tensor(np.zeros((1, 2, 4))), np.zeros((1, 3, 4)),
                            Tensor(np.zeros((1, 2, 4))), np.zeros((1, 2, 4)))
    with pytest.raises(ParameterError):
        reconstruction_loss(Tensor(np.zeros((1, 2, 4))), np.zeros((1, 2, 4)),
                            Tensor(np.zeros((1, 2, 4))), np.zeros((1, 2, 4)), normalization="sum")


# -- total -------------------------------------------------------------------------
def test_total_hand_value():
    assert abs(total_loss(0.5, 0.2, 0.0, 0.1, 1.0).total - 0.25) < 1e-15


def test_total_lambda_c_zero_is_recon():
    r = total_loss(3.0, 0.2, 0.3, lambda_c=0.0)
    assert r.total == pytest.approx(0.5, abs=1e-15) and r.recon == pytest.approx(0.5)


def test_total_linear_in_weights():
    base = total_loss(0.7, 0.2, 0.1, 0.1, 1.0).total
    assert total_loss(0.7, 0.2, 0.1, 0.3, 3.0).total == pytest.approx(3 * base, rel=1e-14)


def test_total_rejects_negative_weights():
    with pytest.raises(ParameterError):
        total_loss(0.1, 0.1, 0.1, -1.0, 1.0)


def test_report_serializes_without_graph():
    d = total_loss(Tensor(0.5), Tensor(0.2)).to_dict()
    assert "loss" not in d and d["total"] == pytest.approx(0.25)


# -- schedule and optimizer --------------------------------------------------------
def test_schedule_warmup_then_cosine():
    cfg = OptimizerConfig(lr=1.0, warmup_frac=0.1, total_steps=100)
    lrs = [learning_rate(cfg, s) for s in range(100)]
    assert lrs[0] == pytest.approx(0.1) and lrs[9] == pytest.approx(1.0)
    assert lrs[10] == pytest.approx(1.0)
    assert lrs[55] == pytest.approx(0.5 * (1 + math.cos(math.pi * 45 / 90)))
    assert all(b <= a + 1e-15 for a, b in zip(lrs[10:], lrs[11:]))


def test_adamw_first_step_matches_closed_form():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = AdamW([("p", p)], OptimizerConfig(lr=0.1, weight_decay=0.01, warmup_frac=0.0, total_steps=10))
    p.grad = np.array([0.5, -3.0])
    opt.step()
    # bias-corrected first step moves each coordinate by ~lr * sign(g), plus decoupled decay
    expected = np.array([1.0, -2.0]) - 0.1 * (np.sign([0.5, -3.0]) * (1 - 1e-7) + 0.01 * np.array([1.0, -2.0]))
    np.testing.assert_allclose(p.data, expected, atol=1e-8)


@pytest.mark.parametrize("bad", [dict(lr=-1), dict(beta1=1.0), dict(warmup_frac=1.0), dict(total_steps=0)])
def test_optimizer_config_validation(bad):
    with pytest.raises(ConfigurationError):
        OptimizerConfig(**bad)


@pytest.mark.parametrize("bad", [dict(mask_ratio_a=1.0), dict(temperature=0.0), dict(lambda_r=-1),
                                 dict(direction="x"), dict(recon_normalization="sum")])
def test_train_config_validation(bad):
    with pytest.raises(ConfigurationError):
        TrainConfig(**bad)


# -- train step --------------------------------------------------------------------
def toy_cfg():
    return ModelConfig(dim=16, heads=2, encoder_depth=1, decoder_dim=8, decoder_depth=1,
                       decoder_heads=2, patch=8, mel_bins=16, s_length=16, frame_size=16,
                       n_registers=2)


def toy_pairs(n=3, seed=0):
    rng = np.random.default_rng(seed)
    return [AlignedPair(frames=rng.standard_normal((4, 3, 16, 16)),
                        spectrogram=rng.standard_normal((16, 32)), s_length=16, clip_id=str(i))
            for i in range(n)]


def snapshot(state):
    return [p.data.copy() for p in state.parameters()]


def test_zero_lr_steps_are_identical():
    state = ModelState(toy_cfg(), 0)
    init = snapshot(state)
    opt = AdamW(state.pretrain_parameters(), OptimizerConfig(lr=0.0, total_steps=4))
    pairs = toy_pairs()
    r1 = train_step(pairs, state, opt, TrainConfig(), np.random.default_rng(7))
    r2 = train_step(pairs, state, opt, TrainConfig(), np.random.default_rng(7))
    assert r1 == r2
    assert all(np.array_equal(a, b) for a, b in zip(init, snapshot(state)))


def test_step_changes_parameters_and_reports_components():
    state = ModelState(toy_cfg(), 0)
    init = snapshot(state)
    opt = AdamW(state.pretrain_parameters(), OptimizerConfig(lr=1e-3, total_steps=4))
    r = train_step(toy_pairs(), state, opt, TrainConfig(), np.random.default_rng(0))
    assert r.total == pytest.approx(r.lambda_c * r.contrastive + r.lambda_r * r.recon, rel=1e-12)
    assert min(r.contrastive, r.recon_audio, r.recon_visual) >= 0
    assert r.lr == pytest.approx(learning_rate(opt.cfg, 0))
    assert any(not np.array_equal(a, b) for a, b in zip(init, snapshot(state)))


def test_every_group_has_finite_nonzero_gradient():
    state = ModelState(toy_cfg(), 0)
    pairs = toy_pairs()
    frames = np.stack([p.frames[1] for p in pairs])
    windows = np.stack([p.window(1) for p in pairs])
    report = compute_loss(state, frames, windows, TrainConfig(mask_ratio_a=0.5, mask_ratio_v=0.5),
                          np.random.default_rng(0))
    report.loss.backward()
    for name, p in state.pretrain_parameters():
        assert p.grad is not None, name
        assert np.all(np.isfinite(p.grad)), name


def test_batch_of_one_rejected():
    state = ModelState(toy_cfg(), 0)
    opt = AdamW(state.pretrain_parameters(), OptimizerConfig())
    with pytest.raises(InputError):
        train_step(toy_pairs(1), state, opt, TrainConfig(), np.random.default_rng(0))
