"""Metric arithmetic, oracles, horizon indexing, and structural invariants."""

import numpy as np
import pytest

from motionpred import autodiff as ad
from motionpred.losses import (LossConfig, combined_loss, horizon_errors,
                               horizon_frame, joint_angle_l1, mpjpe,
                               trajectory_to_pose3d)


def test_l1_zero_when_equal(rng):
    x = rng.normal(size=(4, 6))
    assert joint_angle_l1(x, x) == 0.0


def test_l1_small_case():
    pred = np.array([[1.0, 3.0]])
    truth = np.zeros((1, 2))
    assert joint_angle_l1(pred, truth) == 2.0


def test_l1_matches_double_loop_oracle(rng):
    pred, truth = rng.normal(size=(5, 7)), rng.normal(size=(5, 7))
    acc = 0.0
    for i in range(5):
        for j in range(7):
            acc += abs(pred[i, j] - truth[i, j])
    assert joint_angle_l1(pred, truth) == pytest.approx(acc / 35.0, rel=1e-12)


def test_l1_sum_reduction(rng):
    pred, truth = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    assert joint_angle_l1(pred, truth, reduction="sum") == pytest.approx(
        12.0 * joint_angle_l1(pred, truth), rel=1e-12)


def test_l1_shape_mismatch():
    with pytest.raises(ValueError):
        joint_angle_l1(np.zeros((2, 3)), np.zeros((3, 2)))


def test_l1_triangle_inequality(rng):
    truth = rng.normal(size=(4, 5))
    a, b = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
    lhs = joint_angle_l1(a, truth)
    assert lhs <= joint_angle_l1(a, b) + joint_angle_l1(b, truth) + 1e-12


def test_mpjpe_zero_when_equal(rng):
    x = rng.normal(size=(3, 4, 3))
    assert mpjpe(x, x) == 0.0


def test_mpjpe_three_four_five():
    pred = np.array([[[3.0, 4.0, 0.0]]])
    truth = np.zeros((1, 1, 3))
    assert mpjpe(pred, truth) == 5.0
    assert mpjpe(pred, truth, squared=True) == 25.0


def test_mpjpe_matches_per_joint_norm_oracle(rng):
    pred, truth = rng.normal(size=(4, 6, 3)), rng.normal(size=(4, 6, 3))
    acc = 0.0
    for n in range(4):
        for j in range(6):
            acc += np.sqrt(((pred[n, j] - truth[n, j]) ** 2).sum())
    assert mpjpe(pred, truth) == pytest.approx(acc / 24.0, rel=1e-12)


def test_mpjpe_translation_invariant(rng):
    pred, truth = rng.normal(size=(3, 5, 3)), rng.normal(size=(3, 5, 3))
    shift = rng.normal(size=3)
    assert mpjpe(pred + shift, truth + shift) == pytest.approx(
        mpjpe(pred, truth), rel=1e-12)


def test_trajectory_to_pose3d_layout():
    traj = np.arange(12.0).reshape(6, 2)    # 2 joints, 2 frames
    poses = trajectory_to_pose3d(traj)
    assert poses.shape == (2, 2, 3)
    np.testing.assert_array_equal(poses[0, 0], [0.0, 2.0, 4.0])
    with pytest.raises(ValueError):
        trajectory_to_pose3d(np.zeros((4, 3)))


def test_combined_loss_identity_at_zero_weight():
    cfg = LossConfig(vlb_weight=0.0)
    assert combined_loss(1.2345, -3.4, 0.7, cfg) == 1.2345


def test_combined_loss_arithmetic():
    cfg = LossConfig(vlb_weight=0.003)
    assert combined_loss(1.0, -2.0, 0.5, cfg) == pytest.approx(1.0075, abs=1e-15)


def test_combined_loss_affine_in_weight():
    disc, nll, kl = 0.8, -1.3, 0.4
    values = [combined_loss(disc, nll, kl, LossConfig(vlb_weight=lam))
              for lam in (0.1, 0.2, 0.3)]
    slope1 = (values[1] - values[0]) / 0.1
    slope2 = (values[2] - values[1]) / 0.1
    assert slope1 == pytest.approx(-(nll - kl), rel=1e-12)
    assert slope2 == pytest.approx(slope1, rel=1e-12)


def test_combined_loss_gradient_matches_plain_at_zero_weight(rng):
    disc_leaf = ad.Tensor(rng.normal(size=(3,)), requires_grad=True)
    nll_leaf = ad.Tensor(rng.normal(size=(3,)), requires_grad=True)

    def disc_term():
        return ad.sum_(ad.square(disc_leaf))

    plain = disc_term()
    plain.backward()
    g_plain = disc_leaf.grad.copy()
    disc_leaf.zero_grad()
    combo = combined_loss(disc_term(), ad.sum_(nll_leaf), 0.0,
                          LossConfig(vlb_weight=0.0))
    combo.backward()
    assert np.array_equal(disc_leaf.grad, g_plain)
    assert nll_leaf.grad is None


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(vlb_weight=-0.1)
    with pytest.raises(ValueError):
        LossConfig(reduction="median")


def test_horizon_frame_mapping_at_25fps():
    assert horizon_frame(80, 25.0) == 2
    assert horizon_frame(400, 25.0) == 10
    assert horizon_frame(1000, 25.0) == 25


def test_horizon_errors_zero_for_equal(rng):
    pred = rng.normal(size=(4, 10))
    out = horizon_errors(pred, pred, (80, 160, 320, 400), 25.0)
    assert [ms for ms, _ in out] == [80, 160, 320, 400]
    assert all(err == 0.0 for _, err in out)


def test_horizon_errors_single_frame_semantics(rng):
    pred, truth = rng.normal(size=(3, 10)), rng.normal(size=(3, 10))
    out = dict(horizon_errors(pred, truth, (80,), 25.0))
    assert out[80] == pytest.approx(np.abs(pred[:, 1] - truth[:, 1]).mean(), rel=1e-12)


def test_horizon_errors_mpjpe_metric(rng):
    pred, truth = rng.normal(size=(6, 10)), rng.normal(size=(6, 10))
    out = dict(horizon_errors(pred, truth, (400,), 25.0, metric="mpjpe"))
    d = (pred[:, 9] - truth[:, 9]).reshape(2, 3)
    assert out[400] == pytest.approx(np.sqrt((d ** 2).sum(axis=1)).mean(), rel=1e-12)


def test_horizon_beyond_future_rejected(rng):
    pred = rng.normal(size=(2, 10))
    with pytest.raises(ValueError):
        horizon_errors(pred, pred, (1000,), 25.0)
