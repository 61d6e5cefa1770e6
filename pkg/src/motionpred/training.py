"""Adam training loop with gradient clipping, deterministic seeding, and
bit-exact checkpointing.

One training step: forward both branches on a batch, assemble the combined
objective (time-domain L1 after the inverse transform, minus the weighted
variational bound), backprop, clip the global gradient norm, Adam update.
With vlb_weight == 0 the variational branch is skipped entirely, so its
gradients never enter the clip norm and the shared-parameter trajectory is
bit-identical to a plain discriminative run under the same seed.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import kernels
from .data import WindowConfig
from .dct import dct_forward, dct_matrix, pad_replicate
from .losses import LossConfig, combined_loss, gaussian_nll, joint_angle_l1, kl_divergence
from .model import HybridModel, ModelConfig, seed_streams

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainingDiverged(RuntimeError):
    """Raised when a step produces a non-finite loss or gradient."""


@dataclass
class TrainConfig:
    learning_rate: float = 5e-4
    batch_size: int = 16
    epochs: int = 50
    clip_norm: float = 1.0
    vlb_weight: float = 0.0       # lambda in the combined objective
    p_drop: float = 0.5
    latent_width: int = 8
    seed: int = 0
    early_stop_patience: int | None = 10
    disc_reduction: str = "mean"
    track_invariants: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be > 0")
        if self.vlb_weight < 0:
            raise ValueError("vlb_weight must be >= 0")


class Adam:
    """Standard bias-corrected Adam over the model's named parameters."""

    def __init__(self, params, lr, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
        self._params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self._m = {name: np.zeros_like(t.value) for name, t in self._params}
        self._v = {name: np.zeros_like(t.value) for name, t in self._params}

    def step(self, grads):
        """Apply one update from a name -> gradient map. Parameters missing
        from the map are left untouched (their moments do not decay)."""
        self.step_count += 1
        for name, tensor in self._params:
            g = grads.get(name)
            if g is None:
                continue
            kernels.adam_update(tensor.value, g, self._m[name], self._v[name],
                                self.step_count, self.lr, self.beta1,
                                self.beta2, self.eps)


def collect_gradients(model: HybridModel):
    return {name: t.grad for name, t in model.parameters() if t.grad is not None}


def global_grad_norm(grads):
    return float(np.sqrt(sum(kernels.sq_sum(g) for g in grads.values())))


def clip_gradients(grads, max_norm):
    """Scale all gradients by max_norm/norm when the global L2 norm exceeds
    max_norm. Returns (gradients, pre-clip norm)."""
    if max_norm <= 0:
        raise ValueError("max_norm must be > 0")
    norm = global_grad_norm(grads)
    if norm <= max_norm:
        return grads, norm
    factor = max_norm / norm
    return {name: g * factor for name, g in grads.items()}, norm


# ---------------------------------------------------------------------------
# batch preparation
# ---------------------------------------------------------------------------

@dataclass
class TrainingArrays:
    """Static per-window arrays: network input coefficients, the true
    time-domain window, and the true window's coefficient block."""

    c_in: np.ndarray       # (W, K, M)  transform of the replicate-padded history
    x_true: np.ndarray     # (W, K, L)  ground-truth trajectories
    c_true: np.ndarray     # (W, K, L)  transform of the ground truth


def prepare_arrays(windows, wc: WindowConfig) -> TrainingArrays:
    c_in, x_true, c_true = [], [], []
    for w in windows:
        if w.n_observed != wc.n_observed or w.n_future != wc.n_future:
            raise ValueError("window does not match the window config")
        padded = pad_replicate(w.observed, wc.n_future)
        c_in.append(dct_forward(padded, wc.n_coeffs))
        x_true.append(w.data)
        c_true.append(dct_forward(w.data))
    return TrainingArrays(c_in=np.stack(c_in), x_true=np.stack(x_true),
                          c_true=np.stack(c_true))


def _param_digest(model, prefix=None):
    h = hashlib.sha256()
    for name, p in model.parameters():
        if prefix is None or name.startswith(prefix):
            h.update(p.value.tobytes())
    return h.hexdigest()


@dataclass
class TrainResult:
    best_epoch: int
    best_val: float
    steps: int
    history: list = field(default_factory=list)         # per-step log rows
    epoch_val: list = field(default_factory=list)
    param_digests: list = field(default_factory=list)   # per-epoch, gcn params only
    postclip_norms: list = field(default_factory=list)
    log_var_range: tuple = (np.inf, -np.inf)


def evaluate_disc(model, arrays: TrainingArrays, wc: WindowConfig) -> float:
    """Eval-mode time-domain L1 of the discriminative prediction."""
    out = model.forward(ad.Tensor(arrays.c_in), training=False, run_vae=False)
    basis = dct_matrix(wc.seq_len)[:wc.n_coeffs]
    pred_time = out.dct_out.value @ basis
    return joint_angle_l1(pred_time, arrays.x_true)


def train(model: HybridModel, windows, wc: WindowConfig, cfg: TrainConfig,
          val_windows=None, log_path=None) -> TrainResult:
    """Run the optimization loop; the model ends up at its best-validating
    epoch (ID validation error, ties broken by the earlier epoch)."""
    if not windows:
        raise ValueError("training set is empty")
    arrays = prepare_arrays(windows, wc)
    val_arrays = prepare_arrays(val_windows, wc) if val_windows else None
    streams = seed_streams(cfg.seed)
    loss_cfg = LossConfig(vlb_weight=cfg.vlb_weight, reduction=cfg.disc_reduction)
    run_vae = cfg.vlb_weight > 0.0 and model.vae is not None
    optimizer = Adam(model.parameters(), cfg.learning_rate)
    basis = ad.Tensor(dct_matrix(wc.seq_len)[:wc.n_coeffs])   # (M, L) inverse rows

    n = arrays.c_in.shape[0]
    nz = model.cfg.latent_width
    result = TrainResult(best_epoch=0, best_val=np.inf, steps=0)
    best_state = None
    log_lines = ["epoch,step,disc_loss,kl,nll,total"]
    since_best = 0

    for epoch in range(1, cfg.epochs + 1):
        order = streams["shuffle"].permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            result.steps += 1
            try:
                row = _train_step(model, optimizer, arrays, idx, basis, cfg,
                                  loss_cfg, streams, run_vae, nz, result)
            except ad.NonFiniteError as err:
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, step {result.steps}: {err}") from err
            log_lines.append(
                f"{epoch},{result.steps},{row[0]!r},{row[1]!r},{row[2]!r},{row[3]!r}")
            result.history.append((epoch, result.steps, *row))

        if val_arrays is not None:
            val = evaluate_disc(model, val_arrays, wc)
        else:
            val = result.history[-1][2]   # fall back to the last train disc term
        result.epoch_val.append(val)
        result.param_digests.append(_param_digest(model, prefix="gcn."))
        if val < result.best_val:
            result.best_val = val
            result.best_epoch = epoch
            best_state = _snapshot(model)
            since_best = 0
        else:
            since_best += 1
            if cfg.early_stop_patience is not None and since_best >= cfg.early_stop_patience:
                break

    if best_state is not None:
        _restore(model, best_state)
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        Path(log_path).write_text("\n".join(log_lines) + "\n")
    return result


def _train_step(model, optimizer, arrays, idx, basis, cfg, loss_cfg, streams,
                run_vae, nz, result):
    c_in = ad.Tensor(arrays.c_in[idx])
    x_true = arrays.x_true[idx]
    b = len(idx)
    model.zero_grad()
    eps = streams["eps"].standard_normal((b, model.cfg.nodes, nz)) if run_vae else None
    out = model.forward(c_in, training=True, dropout_rng=streams["dropout_disc"],
                        vae_dropout_rng=streams["dropout_vae"], eps=eps,
                        run_vae=run_vae)
    pred_time = ad.matmul(out.dct_out, basis)
    disc = joint_angle_l1(pred_time, ad.Tensor(x_true), reduction=loss_cfg.reduction)
    if run_vae:
        kl = ad.scale(kl_divergence(out.latent_mu, out.latent_log_var), 1.0 / b)
        nll = ad.scale(gaussian_nll(out.recon_mu, out.recon_log_var,
                                    arrays.c_true[idx]), 1.0 / b)
        total = combined_loss(disc, nll, kl, loss_cfg)
        kl_v, nll_v = kl.item(), nll.item()
    else:
        total = disc
        kl_v, nll_v = 0.0, 0.0
    total.backward()
    grads = collect_gradients(model)
    grads, _ = clip_gradients(grads, cfg.clip_norm)
    if cfg.track_invariants:
        result.postclip_norms.append(global_grad_norm(grads))
        if run_vae:
            lo = min(out.latent_log_var.value.min(), out.recon_log_var.value.min())
            hi = max(out.latent_log_var.value.max(), out.recon_log_var.value.max())
            cur = result.log_var_range
            result.log_var_range = (min(cur[0], lo), max(cur[1], hi))
    optimizer.step(grads)
    return disc.item(), kl_v, nll_v, total.item()


def _snapshot(model):
    return ({name: p.value.copy() for name, p in model.parameters()},
            [arr.copy() for _, arr in model.buffers()])


def _restore(model, state):
    params, buffers = state
    for name, p in model.parameters():
        p.value[...] = params[name]
    for (_, arr), saved in zip(model.buffers(), buffers):
        arr[...] = saved


def make_loss_builder(model: HybridModel, arrays: TrainingArrays, wc: WindowConfig,
                      vlb_weight: float, eps=None):
    """Deterministic scalar-loss closure for gradient checking.

    The model should be built with p_drop=0; eps is drawn once and held
    fixed so every rebuild sees the same graph. Training-mode forward keeps
    gradients flowing through the batch statistics.
    """
    basis = ad.Tensor(dct_matrix(wc.seq_len)[:wc.n_coeffs])
    c_in = arrays.c_in
    x_true = ad.Tensor(arrays.x_true)
    c_true = arrays.c_true
    b = c_in.shape[0]
    loss_cfg = LossConfig(vlb_weight=vlb_weight)
    run_vae = vlb_weight > 0.0 and model.vae is not None

    def build():
        out = model.forward(ad.Tensor(c_in), training=True, eps=eps, run_vae=run_vae)
        disc = joint_angle_l1(ad.matmul(out.dct_out, basis), x_true)
        if not run_vae:
            return disc
        kl = ad.scale(kl_divergence(out.latent_mu, out.latent_log_var), 1.0 / b)
        nll = ad.scale(gaussian_nll(out.recon_mu, out.recon_log_var, c_true), 1.0 / b)
        return combined_loss(disc, nll, kl, loss_cfg)

    return build


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"GMPCKPT1"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, truncated, or incompatible checkpoint file."""


def save_checkpoint(model: HybridModel, path, extra=None):
    """Binary layout: 8-byte magic, little-endian u64 header length, a JSON
    header describing every tensor (name, kind, shape, offset), then the
    raw float64 little-endian buffers. Round-trips bit-exactly."""
    entries = []
    blobs = []
    offset = 0
    for name, p in model.parameters():
        raw = np.ascontiguousarray(p.value, dtype="<f8").tobytes()
        entries.append({"name": name, "kind": "param", "shape": list(p.value.shape),
                        "offset": offset, "vae": name.startswith("vae.")})
        blobs.append(raw)
        offset += len(raw)
    for name, arr in model.buffers():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "kind": "buffer", "shape": list(arr.shape),
                        "offset": offset, "vae": name.startswith("vae.")})
        blobs.append(raw)
        offset += len(raw)
    header = {"version": CHECKPOINT_VERSION, "config": model.cfg.to_dict(),
              "tensors": entries, "extra": extra or {}}
    header_bytes = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def read_checkpoint_header(path):
    with Path(path).open("rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        raw_len = fh.read(8)
        if len(raw_len) != 8:
            raise CheckpointError(f"{path}: truncated header")
        (header_len,) = struct.unpack("<Q", raw_len)
        header_bytes = fh.read(header_len)
        if len(header_bytes) != header_len:
            raise CheckpointError(f"{path}: truncated header")
        header = json.loads(header_bytes)
        if header.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"{path}: unsupported checkpoint version {header.get('version')}")
        return header, len(CHECKPOINT_MAGIC) + 8 + header_len


def load_checkpoint(path, with_vae=True) -> HybridModel:
    """Rebuild the model from a checkpoint. with_vae=False skips every
    tensor flagged as belonging to the variational branch (prediction-only
    deployments)."""
    header, data_start = read_checkpoint_header(path)
    cfg_dict = dict(header["config"])
    if not with_vae:
        cfg_dict["with_vae"] = False
    cfg = ModelConfig.from_dict(cfg_dict)
    model = HybridModel(cfg)   # zero-init; every tensor is overwritten below
    targets = dict(model.parameters())
    buffer_targets = dict(model.buffers())
    data = Path(path).read_bytes()[data_start:]
    for entry in header["tensors"]:
        if not with_vae and entry["vae"]:
            continue
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + count * 8
        if end > len(data):
            raise CheckpointError(f"{path}: truncated tensor data for {entry['name']}")
        arr = np.frombuffer(data[start:end], dtype="<f8").reshape(shape)
        if entry["kind"] == "param":
            target = targets.get(entry["name"])
            if target is None:
                raise CheckpointError(f"{path}: unexpected tensor {entry['name']}")
            target.value[...] = arr
        else:
            buf = buffer_targets.get(entry["name"])
            if buf is None:
                raise CheckpointError(f"{path}: unexpected buffer {entry['name']}")
            buf[...] = arr
    return model
