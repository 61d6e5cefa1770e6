"""Optimizer arithmetic, clipping, checkpoint round-trips, loop behavior."""

import numpy as np
import pytest

from motionpred import autodiff as ad
from motionpred.data import TrajectoryWindow, WindowConfig
from motionpred.model import ModelConfig, build_model
from motionpred.training import (ADAM_EPS, Adam, CheckpointError, TrainConfig,
                                 TrainingDiverged, clip_gradients,
                                 global_grad_norm, load_checkpoint,
                                 save_checkpoint, train)


def _grads(shapes, rng, scale=1.0):
    return {name: rng.normal(size=shape) * scale for name, shape in shapes.items()}


def test_clip_halves_at_double_norm(rng):
    g = {"a": np.array([2.0, 0.0]), "b": np.array([0.0, 0.0])}
    norm = global_grad_norm(g)
    assert norm == 2.0
    clipped, reported = clip_gradients(g, 1.0)
    assert reported == 2.0
    np.testing.assert_allclose(clipped["a"], [1.0, 0.0])


def test_clip_leaves_small_gradients_alone(rng):
    g = {"a": np.array([0.3, 0.4])}
    clipped, norm = clip_gradients(g, 1.0)
    assert norm == 0.5
    assert clipped["a"] is g["a"]


def test_postclip_norm_is_min_of_norm_and_max(rng):
    for scale in (0.1, 1.0, 10.0):
        g = _grads({"a": (5, 3), "b": (7,)}, rng, scale)
        pre = global_grad_norm(g)
        clipped, _ = clip_gradients(g, 1.0)
        post = global_grad_norm(clipped)
        assert abs(post - min(pre, 1.0)) < 1e-12


def test_adam_zero_gradient_leaves_parameters(rng):
    p = ad.Tensor(rng.normal(size=(3,)), requires_grad=True, name="p")
    opt = Adam([("p", p)], lr=0.1)
    before = p.value.copy()
    opt.step({"p": np.zeros(3)})
    assert opt.step_count == 1
    np.testing.assert_array_equal(p.value, before)


def test_adam_first_step_hand_computation():
    p = ad.Tensor(np.array([1.0]), requires_grad=True, name="p")
    opt = Adam([("p", p)], lr=0.01)
    g = np.array([0.37])
    opt.step({"p": g})
    # first step: m_hat = g, v_hat = g^2, update = -lr * g / (|g| + eps)
    expected = 1.0 - 0.01 * g[0] / (abs(g[0]) + ADAM_EPS)
    assert p.value[0] == pytest.approx(expected, rel=1e-12)
    assert abs((p.value[0] - 1.0) + 0.01 * np.sign(g[0])) < 1e-8


def test_adam_deterministic_across_runs(rng):
    g_seq = [rng.normal(size=(4, 2)) for _ in range(10)]

    def run():
        p = ad.Tensor(np.ones((4, 2)), requires_grad=True, name="p")
        opt = Adam([("p", p)], lr=0.05)
        for g in g_seq:
            opt.step({"p": g})
        return p.value.copy()

    assert np.array_equal(run(), run())


def test_adam_skips_missing_gradients(rng):
    p = ad.Tensor(np.ones(2), requires_grad=True, name="p")
    q = ad.Tensor(np.ones(2), requires_grad=True, name="q")
    opt = Adam([("p", p), ("q", q)], lr=0.1)
    opt.step({"p": np.ones(2)})
    assert np.array_equal(q.value, np.ones(2))
    assert not np.array_equal(p.value, np.ones(2))


def _model_and_windows(rng, with_vae=False, n_windows=8):
    wc = WindowConfig(n_observed=5, n_future=5)
    cfg = ModelConfig(nodes=4, input_width=10, seq_len=10, hidden=8, blocks=2,
                      p_drop=0.2, with_vae=with_vae, latent_width=3)
    model = build_model(cfg, 2)
    windows = [TrajectoryWindow(rng.normal(size=(4, 10)), 5) for _ in range(n_windows)]
    return model, windows, wc


def test_train_loss_decreases_and_logs(tmp_path, train_windows_16):
    wc = WindowConfig(n_observed=10, n_future=10)
    cfg = ModelConfig(nodes=6, input_width=20, seq_len=20, hidden=16, blocks=2,
                      p_drop=0.0, with_vae=False)
    model = build_model(cfg, 5)
    tcfg = TrainConfig(learning_rate=2e-3, batch_size=8, epochs=50, vlb_weight=0.0,
                       p_drop=0.0, seed=5, early_stop_patience=None)
    log = tmp_path / "loss.csv"
    result = train(model, train_windows_16, wc, tcfg, log_path=log)
    disc = [row[2] for row in result.history]
    steps_per_epoch = result.steps // tcfg.epochs
    assert np.mean(disc[-steps_per_epoch:]) < 0.5 * np.mean(disc[:steps_per_epoch])
    lines = log.read_text().strip().split("\n")
    assert lines[0] == "epoch,step,disc_loss,kl,nll,total"
    assert len(lines) == 1 + result.steps
    first = lines[1].split(",")
    assert int(first[0]) == 1 and int(first[1]) == 1
    assert float(first[2]) == disc[0]


def test_train_empty_dataset_rejected(rng):
    model, _, wc = _model_and_windows(rng)
    with pytest.raises(ValueError):
        train(model, [], wc, TrainConfig())


def test_train_nonfinite_input_aborts_with_diagnostic(rng):
    model, windows, wc = _model_and_windows(rng)
    windows[0].data[0, 0] = np.nan
    with pytest.raises((TrainingDiverged, ad.NonFiniteError)):
        train(model, windows, wc, TrainConfig(epochs=1, seed=0, p_drop=0.0))


def test_train_tracks_invariants(rng):
    model, windows, wc = _model_and_windows(rng, with_vae=True)
    cfg = TrainConfig(learning_rate=1e-3, batch_size=4, epochs=3, vlb_weight=0.01,
                      p_drop=0.2, latent_width=3, seed=9,
                      early_stop_patience=None, track_invariants=True)
    result = train(model, windows, wc, cfg)
    assert len(result.postclip_norms) == result.steps
    assert max(result.postclip_norms) <= cfg.clip_norm + 1e-12
    lo, hi = result.log_var_range
    assert -20.0 <= lo <= hi <= 3.0


def test_training_run_bit_deterministic(rng):
    def run():
        model, windows, wc = _model_and_windows(np.random.default_rng(77), with_vae=True)
        cfg = TrainConfig(learning_rate=1e-3, batch_size=4, epochs=4, vlb_weight=0.01,
                          p_drop=0.3, latent_width=3, seed=13, early_stop_patience=None)
        result = train(model, windows, wc, cfg)
        return result.param_digests

    assert run() == run()


def test_best_epoch_selection_restores_snapshot(rng):
    model, windows, wc = _model_and_windows(rng)
    val = [TrajectoryWindow(rng.normal(size=(4, 10)), 5) for _ in range(4)]
    cfg = TrainConfig(learning_rate=5e-3, batch_size=8, epochs=10, vlb_weight=0.0,
                      p_drop=0.0, seed=21, early_stop_patience=None)
    result = train(model, windows, wc, cfg, val_windows=val)
    assert 1 <= result.best_epoch <= 10
    assert result.best_val == min(result.epoch_val)
    # ties break toward the earlier epoch
    assert result.epoch_val.index(result.best_val) + 1 == result.best_epoch


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _fresh_model(seed=5, with_vae=True):
    cfg = ModelConfig(nodes=5, input_width=8, seq_len=8, hidden=10, blocks=2,
                      with_vae=with_vae, latent_width=3)
    return build_model(cfg, seed)


def test_checkpoint_round_trip_bit_exact(tmp_path, rng):
    model = _fresh_model()
    for _, buf in model.buffers():
        buf += rng.normal(size=buf.shape) * 0.05
    path = tmp_path / "model.bin"
    save_checkpoint(model, path, extra={"best_epoch": 3})
    loaded = load_checkpoint(path)
    for (name, p), (name2, q) in zip(model.parameters(), loaded.parameters()):
        assert name == name2
        assert np.array_equal(p.value, q.value)
    for (name, b), (name2, c) in zip(model.buffers(), loaded.buffers()):
        assert name == name2 and np.array_equal(b, c)


def test_checkpoint_prediction_only_skips_branch(tmp_path, rng):
    model = _fresh_model()
    path = tmp_path / "model.bin"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path, with_vae=False)
    assert loaded.vae is None
    names = [n for n, _ in loaded.parameters()]
    assert all(n.startswith("gcn.") for n in names)
    x = rng.normal(size=(2, 5, 8))
    full = load_checkpoint(path)
    np.testing.assert_array_equal(
        loaded.forward(ad.Tensor(x)).dct_out.value,
        full.forward(ad.Tensor(x)).dct_out.value)


def test_checkpoint_truncated_rejected(tmp_path):
    model = _fresh_model()
    path = tmp_path / "model.bin"
    save_checkpoint(model, path)
    raw = path.read_bytes()
    for cut in (4, 12, len(raw) - 100):
        bad = tmp_path / f"cut{cut}.bin"
        bad.write_bytes(raw[:cut])
        with pytest.raises(CheckpointError):
            load_checkpoint(bad)


def test_checkpoint_bad_magic_rejected(tmp_path):
    path = tmp_path / "bogus.bin"
    path.write_bytes(b"NOTACKPT" + b"\x00" * 64)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(vlb_weight=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(clip_norm=0.0)
