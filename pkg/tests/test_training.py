import logging
import math

import numpy as np
import pytest

from affective_processes import autodiff as ad
from affective_processes import context as context_mod
from affective_processes.config import LOSS_VARIANTS, MODEL_VARIANTS, RunConfig
from affective_processes.distributions import DiagonalGaussian
from affective_processes.errors import ContractError
from affective_processes.model import PredictiveOutput, forward, init_params
from affective_processes.sequence import ContextTargetSplit
from affective_processes.training import (
    LOG_COLUMNS,
    LossWeights,
    OptimizerState,
    adam_step,
    batch_loss,
    compute_losses,
    cosine_lr,
    loss_kl,
    loss_nll,
    loss_reg,
    sample_training_view,
    train,
    train_step,
)

from conftest import random_sequence, toy_config


def prediction(mean, std, segment=None):
    mean = np.asarray(mean, float)
    seg = np.zeros(len(mean), dtype=int) if segment is None else np.asarray(segment)
    return PredictiveOutput(DiagonalGaussian(mean, np.asarray(std, float)), seg, np.arange(len(mean)),
                            int(seg.max()) + 1)


def small_run(**kw):
    kw.setdefault("model", toy_config())
    kw.setdefault("seq_len_min", 6)
    kw.setdefault("seq_len_max", 10)
    kw.setdefault("batch_size", 3)
    kw.setdefault("epochs", 1)
    kw.setdefault("iters_per_epoch", 2)
    kw.setdefault("lr", 1e-3)
    return RunConfig(**kw)


# -- losses ---------------------------------------------------------------


def test_nll_at_the_mean_with_unit_std():
    y = np.zeros((5, 2))
    assert loss_nll(prediction(y, np.ones((5, 2))), y).item() == pytest.approx(2 * 0.5 * math.log(2 * math.pi),
                                                                              abs=1e-14)


def test_nll_grows_with_error():
    vals = [loss_nll(prediction(np.full((3, 1), e), np.ones((3, 1))), np.zeros((3, 1))).item()
            for e in (0.0, 0.5, 1.0, 2.0)]
    assert all(a < b for a, b in zip(vals, vals[1:]))


def test_nll_duplicating_frames_is_neutral(rng):
    m, s, y = rng.normal(size=(4, 2)), rng.uniform(0.2, 1, (4, 2)), rng.normal(size=(4, 2))
    once = loss_nll(prediction(m, s), y).item()
    twice = loss_nll(prediction(np.vstack([m, m]), np.vstack([s, s])), np.vstack([y, y])).item()
    assert twice == pytest.approx(once, abs=1e-14)


def test_nll_weights_sequences_equally():
    # two sequences of different length: per-sequence means are averaged
    m = np.zeros((3, 1))
    y = np.array([[1.0], [0.0], [0.0]])
    pred = prediction(m, np.ones((3, 1)), segment=[0, 1, 1])
    expected = 0.5 * (0.5 * math.log(2 * math.pi) + 0.5) + 0.5 * (0.5 * math.log(2 * math.pi))
    assert loss_nll(pred, y).item() == pytest.approx(expected, abs=1e-14)


def test_kl_loss_examples():
    g = DiagonalGaussian(np.array([[0.2, 0.4]]), np.array([[0.5, 0.7]]))
    assert loss_kl(g, g).item() == 0.0
    ctx = DiagonalGaussian(np.zeros((1, 3)), np.ones((1, 3)))
    tgt = DiagonalGaussian(np.ones((1, 3)), np.ones((1, 3)))
    assert loss_kl(ctx, tgt).item() == pytest.approx(0.5 * 3, abs=1e-12)
    assert loss_kl(None, tgt).item() == 0.0


def test_kl_loss_is_target_against_context():
    ctx = DiagonalGaussian(np.zeros((1, 1)), np.full((1, 1), 1.0))
    tgt = DiagonalGaussian(np.zeros((1, 1)), np.full((1, 1), 2.0))
    # KL(N(0,2) || N(0,1)) = -log 2 + 2 - 1/2
    assert loss_kl(ctx, tgt).item() == pytest.approx(-math.log(2) + 1.5, abs=1e-12)


def test_kl_zero_when_context_is_the_whole_sequence(rng):
    cfg = toy_config()
    P = init_params(cfg, rng)
    seq = random_sequence(rng, n=8)
    split = ContextTargetSplit(np.arange(8), np.arange(8), "ground_truth")
    _, ctx, tgt = forward(P, cfg, seq, split, rng)
    assert loss_kl(ctx.latent, tgt.latent).item() == 0.0


def test_reg_loss_examples():
    assert loss_reg(prediction(np.zeros((4, 2)), np.ones((4, 2)))).item() == 0.0
    assert loss_reg(prediction([[1.0]], [[1.0]])).item() == pytest.approx(0.5, abs=1e-15)
    a = loss_reg(prediction(np.full((3, 1), 0.5), np.ones((3, 1)))).item()
    b = loss_reg(prediction(np.full((3, 1), 1.0), np.ones((3, 1)))).item()
    assert b > a


def test_reg_pooling_sum_vs_mean():
    pred = prediction(np.full((2, 1), 0.5), np.full((2, 1), 0.5))
    mean_version = loss_reg(pred, "mean").item()  # N(0.5, 0.5)
    sum_version = loss_reg(pred, "sum").item()  # N(1, 1)
    assert mean_version == pytest.approx(-math.log(0.5) + 0.5 * (0.25 + 0.25) - 0.5, abs=1e-14)
    assert sum_version == pytest.approx(0.5, abs=1e-14)
    with pytest.raises(ContractError):
        loss_reg(pred, "max")


@pytest.mark.parametrize("loss_variant", LOSS_VARIANTS)
def test_total_is_weighted_sum_of_components(loss_variant, rng):
    cfg = toy_config()
    P = init_params(cfg, rng)
    seq = random_sequence(rng, n=9)
    pred, ctx, tgt = forward(P, cfg, seq, ContextTargetSplit(np.array([1, 3]), np.arange(9)), rng)
    w = LossWeights(0.7, 1.9, loss_variant)
    out = compute_losses(pred, seq.labels, ctx.latent, tgt.latent, w)
    nll = loss_nll(pred, seq.labels).item()
    kl = loss_kl(ctx.latent, tgt.latent).item()
    reg = loss_reg(pred).item()
    expected = nll + (0.7 * kl if w.use_kl else 0) + (1.9 * reg if w.use_reg else 0)
    assert out["total"].item() == pytest.approx(expected, abs=1e-12)
    if loss_variant == "nll":
        assert out["kl"].item() == 0.0 and out["reg"].item() == 0.0


# -- optimiser ------------------------------------------------------------


def test_adam_zero_gradient_is_a_no_op():
    p = {"w": np.array([1.0, -2.0])}
    new, state = adam_step(OptimizerState.create(p, 0.1), p, {"w": np.zeros(2)}, 0.1)
    np.testing.assert_array_equal(new["w"], p["w"])
    assert state.step == 1


def test_adam_first_step_moves_by_lr():
    p = {"w": np.array([0.5])}
    new, _ = adam_step(OptimizerState.create(p, 0.001), p, {"w": np.array([1.0])}, 0.001)
    assert new["w"][0] - 0.5 == pytest.approx(-0.001, abs=1e-10)


def test_adam_symmetric_groups_evolve_identically(rng):
    g = rng.normal(size=3)
    p = {"a": np.ones(3), "b": np.ones(3)}
    state = OptimizerState.create(p, 0.01, weight_decay=0.1)
    for _ in range(5):
        p, state = adam_step(state, p, {"a": g, "b": g}, 0.01)
    assert p["a"].tobytes() == p["b"].tobytes()


def test_adam_weight_decay_enters_the_gradient():
    p = {"w": np.array([2.0])}
    new, state = adam_step(OptimizerState.create(p, 0.1, weight_decay=0.5), p, {"w": np.zeros(1)}, 0.1)
    assert state.m["w"][0] == pytest.approx(0.1 * 0.5 * 2.0)
    assert new["w"][0] < 2.0


def test_adam_key_mismatch():
    p = {"w": np.ones(1)}
    with pytest.raises(ContractError):
        adam_step(OptimizerState.create(p, 0.1), p, {"v": np.ones(1)}, 0.1)


def test_cosine_schedule():
    assert cosine_lr(0.3, 0, 100) == 0.3
    assert cosine_lr(0.3, 100, 100) == pytest.approx(0.0, abs=1e-18)
    assert cosine_lr(0.3, 50, 100) == pytest.approx(0.15, abs=1e-16)
    with pytest.raises(ContractError):
        cosine_lr(0.3, 101, 100)


# -- training step --------------------------------------------------------


def test_training_view_ranges(rng):
    cfg = small_run()
    seq = random_sequence(rng, n=25)
    for i in range(50):
        window, split = sample_training_view(seq, cfg, np.random.default_rng(i))
        assert 6 <= len(window) <= 10
        assert 3 <= split.num_context <= len(window)
        assert split.target_indices.tolist() == list(range(len(window)))


def test_mix_probability_zero_always_uses_ground_truth(rng):
    cfg = small_run(label_mix_prob=0.0)
    seq = random_sequence(rng, n=12)
    sources = {sample_training_view(seq, cfg, np.random.default_rng(i))[1].context_label_source for i in range(40)}
    assert sources == {"ground_truth"}
    cfg = small_run(label_mix_prob=1.0)
    sources = {sample_training_view(seq, cfg, np.random.default_rng(i))[1].context_label_source for i in range(40)}
    assert sources == {"pseudo_label"}


def test_mix_probability_half_uses_both(rng):
    cfg = small_run()
    seq = random_sequence(rng, n=12)
    n_pseudo = sum(sample_training_view(seq, cfg, np.random.default_rng(i))[1].context_label_source
                   == "pseudo_label" for i in range(400))
    assert 160 < n_pseudo < 240


def test_short_sequences_are_skipped_with_warning(rng, caplog):
    cfg = small_run()
    P = init_params(cfg.model, rng)
    batch = [random_sequence(rng, n=12, sid="ok"), random_sequence(rng, n=4, sid="short")]
    with caplog.at_level(logging.WARNING):
        res = train_step(P, OptimizerState.from_config(P, cfg), batch, cfg)
    assert res.skipped == ["short"]
    assert "short" in caplog.text


def test_seeded_loss_trajectory_is_bit_identical(rng):
    cfg = small_run(epochs=1, iters_per_epoch=10)
    data = [random_sequence(np.random.default_rng(i), n=14, sid=str(i)) for i in range(4)]

    def trajectory():
        P = init_params(cfg.model, np.random.default_rng(0))
        state = OptimizerState.from_config(P, cfg)
        out = []
        for k in range(10):
            res = train_step(P, state, data[k % 4:] + data[:k % 4], cfg)
            P, state = res.params, res.state
            out.append(res.losses["total"])
        return out, P

    (a, pa), (b, pb) = trajectory(), trajectory()
    assert a == b
    assert all(pa[k].tobytes() == pb[k].tobytes() for k in pa)


@pytest.mark.parametrize("variant", MODEL_VARIANTS)
def test_fresh_model_loss_is_finite(variant, rng):
    cfg = small_run(model=toy_config(variant))
    P = init_params(cfg.model, rng)
    batch = [random_sequence(rng, n=12, sid=str(i)) for i in range(3)]
    res = train_step(P, OptimizerState.from_config(P, cfg), batch, cfg)
    assert all(math.isfinite(v) for v in res.losses.values())
    if not cfg.model.stochastic:
        assert res.losses["kl"] == 0.0


def test_deterministic_nll_training_is_reproducible():
    cfg = small_run(model=toy_config("deterministic"), loss_variant="nll", iters_per_epoch=4)
    data = [random_sequence(np.random.default_rng(i), n=12, sid=str(i)) for i in range(3)]
    a, b = train(cfg, data), train(cfg, data)
    assert all(a.params[k].tobytes() == b.params[k].tobytes() for k in a.params)


def test_training_reduces_loss():
    cfg = small_run(iters_per_epoch=60, lr=3e-3, epochs=1)
    data = [random_sequence(np.random.default_rng(i), n=12, sid=str(i)) for i in range(6)]
    rows = []
    res = train(cfg.replace(epochs=2, iters_per_epoch=30), data, on_epoch=rows.append)
    assert rows[-1]["loss_total"] < rows[0]["loss_total"]
    assert res.best_epoch == 2


def test_gradient_of_total_loss_matches_finite_differences():
    rng = np.random.default_rng(11)
    cfg = small_run(model=toy_config(feature_dim=8, latent_dim=4, encoder_hidden=(5, 4), decoder_hidden=(4, 4, 3)),
                    seq_len_min=3, context_min=1)
    P = init_params(cfg.model, rng)
    seqs = [random_sequence(rng, n=4, sid="a"), random_sequence(rng, n=5, sid="b")]
    splits = [ContextTargetSplit(np.array([1]), np.arange(4)), ContextTargetSplit(np.array([0, 3]), np.arange(5))]
    noise = rng.standard_normal((2, 4))
    err = ad.gradient_check(lambda p: batch_loss(p, cfg, seqs, splits, noise)["total"], P)
    assert err < 1e-4


# -- training loop --------------------------------------------------------


def test_train_smoke_writes_checkpoint_and_log(tmp_path, rng):
    cfg = small_run()
    data = [random_sequence(np.random.default_rng(i), n=12, sid=str(i)) for i in range(3)]
    pseudo_before = [s.pseudo_labels.tobytes() for s in data]
    res = train(cfg, data[:2], data[2:], out_dir=tmp_path)
    assert (tmp_path / "checkpoint.apck").exists()
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert lines[0].split(",") == list(LOG_COLUMNS)
    assert len(lines) == 1 + cfg.epochs
    assert math.isfinite(res.history[0]["val_ccc"])
    assert [s.pseudo_labels.tobytes() for s in data] == pseudo_before


def test_validation_logged_once_per_epoch(rng):
    cfg = small_run(epochs=3, iters_per_epoch=1)
    data = [random_sequence(np.random.default_rng(i), n=12, sid=str(i)) for i in range(3)]
    res = train(cfg, data[:2], data[2:])
    assert [r["epoch"] for r in res.history] == [1, 2, 3]
    assert all(math.isfinite(r["val_ccc"]) for r in res.history)


def test_trainer_never_selects_by_uncertainty(monkeypatch, rng):
    def boom(*a, **k):
        raise AssertionError("uncertainty selection used during training")
    monkeypatch.setattr(context_mod, "select_by_uncertainty", boom)
    monkeypatch.setattr(context_mod, "uncertainty_scores", boom)
    cfg = small_run(iters_per_epoch=3)
    data = [random_sequence(np.random.default_rng(i), n=12, sid=str(i)) for i in range(3)]
    train(cfg, data)


def test_empty_training_set():
    with pytest.raises(ContractError):
        train(small_run(), [])
