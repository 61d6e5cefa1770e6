"""Training losses and evaluation metrics.

Every function accepts either autodiff tensors (for use inside a training
graph) or plain numpy arrays (for evaluation); array inputs return python
floats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

LOG_2PI = float(np.log(2.0 * np.pi))


def _finite(value, what):
    if not math.isfinite(value):
        raise ValueError(f"{what} is non-finite")
    return value


@dataclass
class LossConfig:
    """Weighting of the objective: disc_term - vlb_weight * (nll - kl)."""

    vlb_weight: float = 0.0
    reduction: str = "mean"   # "mean" or "sum" for the discriminative term

    def __post_init__(self):
        if self.vlb_weight < 0.0:
            raise ValueError(f"vlb_weight must be >= 0, got {self.vlb_weight}")
        if self.reduction not in ("mean", "sum"):
            raise ValueError(f"reduction must be 'mean' or 'sum', got {self.reduction!r}")


def _is_tensor(x):
    return isinstance(x, ad.Tensor)


def joint_angle_l1(pred, truth, reduction="mean"):
    """Mean (or summed) absolute error between two time-domain trajectories."""
    if _is_tensor(pred) or _is_tensor(truth):
        diff = ad.absval(ad.sub(pred, truth))
        return ad.mean_(diff) if reduction == "mean" else ad.sum_(diff)
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    diff = np.abs(pred - truth)
    return float(diff.mean() if reduction == "mean" else diff.sum())


def mpjpe(pred, truth, squared=False):
    """Mean per-joint position error over (frames, joints, 3) pose windows.

    The plain Euclidean norm is the standard reading; squared=True switches
    to the squared-distance variant.
    """
    if _is_tensor(pred) or _is_tensor(truth):
        sq = ad.sum_(ad.square(ad.sub(pred, truth)), axis=-1)
        dist = sq if squared else ad.sqrt(sq)
        return ad.mean_(dist)
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    sq = ((pred - truth) ** 2).sum(axis=-1)
    return float((sq if squared else np.sqrt(sq)).mean())


def trajectory_to_pose3d(trajectory):
    """Reshape a (3J, L) coordinate trajectory into an (L, J, 3) pose window."""
    trajectory = np.asarray(trajectory, dtype=np.float64)
    k, length = trajectory.shape
    if k % 3:
        raise ValueError(f"coordinate trajectory needs 3 rows per joint, got K={k}")
    return trajectory.T.reshape(length, k // 3, 3)


def kl_divergence(mu, log_var):
    """KL from N(mu, sigma^2) to the standard Gaussian, summed over all
    dimensions: 0.5 * sum(mu^2 + sigma^2 - 1 - log sigma^2). Non-negative."""
    if _is_tensor(mu) or _is_tensor(log_var):
        term = ad.sub(ad.add(ad.square(mu), ad.exp(log_var)), ad.add(1.0, log_var))
        return ad.scale(ad.sum_(term), 0.5)
    mu = np.asarray(mu, dtype=np.float64)
    log_var = np.asarray(log_var, dtype=np.float64)
    with np.errstate(over="ignore"):
        value = float(0.5 * (mu ** 2 + np.exp(log_var) - 1.0 - log_var).sum())
    return _finite(value, "KL divergence")


def gaussian_nll(mu, log_var, target):
    """Gaussian log-likelihood of `target` under diagonal N(mu, exp(log_var)),
    summed over all dimensions. This is a log-likelihood: larger is better.
    """
    if _is_tensor(mu) or _is_tensor(log_var):
        target_t = target if _is_tensor(target) else ad.Tensor(target)
        sq = ad.square(ad.sub(target_t, mu))
        term = ad.add(ad.add(log_var, LOG_2PI), ad.mul(sq, ad.exp(ad.neg(log_var))))
        return ad.scale(ad.sum_(term), -0.5)
    mu = np.asarray(mu, dtype=np.float64)
    log_var = np.asarray(log_var, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if mu.shape != target.shape:
        raise ValueError(f"shape mismatch: {mu.shape} vs {target.shape}")
    with np.errstate(over="ignore"):
        term = log_var + LOG_2PI + (target - mu) ** 2 * np.exp(-log_var)
        value = float(-0.5 * term.sum())
    return _finite(value, "Gaussian log-likelihood")


def combined_loss(disc_term, nll, kl, cfg: LossConfig):
    """disc_term - vlb_weight * (nll - kl); the generative terms drop out
    entirely at vlb_weight == 0 so the reduction is bit-exact."""
    if cfg.vlb_weight == 0.0:
        return disc_term
    vlb = ad.sub(nll, kl) if (_is_tensor(nll) or _is_tensor(kl)) else nll - kl
    if _is_tensor(disc_term) or _is_tensor(vlb):
        return ad.sub(disc_term, ad.scale(vlb, cfg.vlb_weight))
    return disc_term - cfg.vlb_weight * vlb


def horizon_frame(horizon_ms, fps):
    """1-based future frame index for a horizon in milliseconds."""
    return int(round(horizon_ms * fps / 1000.0))


def horizon_errors(pred_future, truth_future, horizons_ms, fps,
                   metric="angle", squared=False):
    """Per-horizon error at the single future frame each horizon maps to.

    pred/truth are (K, F) future trajectories; for metric="mpjpe" the K rows
    are interpreted as 3 coordinate rows per joint. Returns a list of
    (horizon_ms, error) pairs.
    """
    pred_future = np.asarray(pred_future, dtype=np.float64)
    truth_future = np.asarray(truth_future, dtype=np.float64)
    if pred_future.shape != truth_future.shape:
        raise ValueError(f"shape mismatch: {pred_future.shape} vs {truth_future.shape}")
    n_future = pred_future.shape[1]
    out = []
    for ms in horizons_ms:
        idx = horizon_frame(ms, fps)
        if not 1 <= idx <= n_future:
            raise ValueError(
                f"horizon {ms} ms maps to frame {idx}, beyond the {n_future} "
                f"available future frames at {fps} fps")
        p = pred_future[:, idx - 1]
        t = truth_future[:, idx - 1]
        if metric == "angle":
            err = float(np.abs(p - t).mean())
        elif metric == "mpjpe":
            sq = ((p.reshape(-1, 3) - t.reshape(-1, 3)) ** 2).sum(axis=1)
            err = float((sq if squared else np.sqrt(sq)).mean())
        else:
            raise ValueError(f"unknown metric {metric!r}")
        out.append((ms, err))
    return out
