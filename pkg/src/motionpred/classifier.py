"""Fully connected action classifier over flattened coefficient windows.

Used to check that the designated in-distribution action is separable from
the rest before treating the remainder as out-of-distribution. The hidden
stack is fixed at 1024/512/128 with ReLU, dropout, a softmax head, and
cross-entropy training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .dct import dct_forward, pad_replicate
from .training import Adam

HIDDEN_SIZES = (1024, 512, 128)


@dataclass
class ClassifierConfig:
    input_dim: int
    classes: int
    p_drop: float = 0.5
    batch_size: int = 2048
    learning_rate: float = 1e-5
    epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError("need at least 2 classes")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if not 0.0 <= self.p_drop < 1.0:
            raise ValueError("p_drop must be in [0, 1)")


def window_features(windows, wc):
    """The classifier's input convention: transform of the replicate-padded
    history, flattened to K*M per window."""
    feats = []
    for w in windows:
        padded = pad_replicate(w.observed, wc.n_future)
        feats.append(dct_forward(padded, wc.n_coeffs).reshape(-1))
    return np.stack(feats)


class ActionClassifier:
    def __init__(self, cfg: ClassifierConfig, rng=None):
        self.cfg = cfg
        dims = (cfg.input_dim, *HIDDEN_SIZES, cfg.classes)
        self.weights = []
        self.biases = []
        for i, (n_in, n_out) in enumerate(zip(dims[:-1], dims[1:])):
            w = rng.uniform(-1, 1, size=(n_in, n_out)) / np.sqrt(n_in) if rng is not None \
                else np.zeros((n_in, n_out))
            self.weights.append(ad.Tensor(w, requires_grad=True, name=f"fc{i}.W"))
            self.biases.append(ad.Tensor(np.zeros(n_out), requires_grad=True,
                                         name=f"fc{i}.b"))

    def parameters(self):
        pairs = []
        for w, b in zip(self.weights, self.biases):
            pairs.append((w.name, w))
            pairs.append((b.name, b))
        return pairs

    def logits(self, x, training=False, rng=None):
        h = x if isinstance(x, ad.Tensor) else ad.Tensor(np.asarray(x, dtype=np.float64))
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ad.add(ad.matmul(h, w), b)
            if i < last:
                h = ad.relu(h)
                if training and self.cfg.p_drop > 0:
                    mask = ad.dropout_mask(rng, h.shape, self.cfg.p_drop)
                    if mask is not None:
                        h = ad.mul(h, mask)
        return h

    def predict(self, x):
        return np.argmax(self.logits(x).value, axis=1)


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy. The row max is subtracted as a constant,
    which leaves both the value and the gradient of log-sum-exp unchanged."""
    n, n_classes = logits.shape
    shift = ad.sub(logits, logits.value.max(axis=1, keepdims=True))
    log_norm = ad.log(ad.sum_(ad.exp(shift), axis=1, keepdims=True))
    log_probs = ad.sub(shift, log_norm)
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), labels] = 1.0
    return ad.scale(ad.sum_(ad.mul(log_probs, ad.Tensor(onehot))), -1.0 / n)


def train_classifier(features, labels, cfg: ClassifierConfig):
    """Train for the configured epochs; returns (classifier, per-epoch mean
    loss list). Deterministic given cfg.seed."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2 or features.shape[1] != cfg.input_dim:
        raise ValueError(f"features must be (samples, {cfg.input_dim})")
    present = np.unique(labels)
    if len(present) < 2:
        raise ValueError("degenerate input: fewer than 2 classes present")
    missing = sorted(set(range(cfg.classes)) - set(present.tolist()))
    if missing:
        raise ValueError(f"classes with zero samples: {missing}")

    root = np.random.SeedSequence(cfg.seed)
    init_rng, drop_rng, shuffle_rng = (np.random.default_rng(c) for c in root.spawn(3))
    clf = ActionClassifier(cfg, init_rng)
    optimizer = Adam(clf.parameters(), cfg.learning_rate)
    n = len(features)
    epoch_losses = []
    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            for _, p in clf.parameters():
                p.zero_grad()
            loss = cross_entropy(clf.logits(features[idx], training=True,
                                            rng=drop_rng), labels[idx])
            loss.backward()
            grads = {name: p.grad for name, p in clf.parameters() if p.grad is not None}
            optimizer.step(grads)
            losses.append(loss.item())
        epoch_losses.append(float(np.mean(losses)))
    return clf, epoch_losses


def confusion_matrix(clf: ActionClassifier, features, labels):
    """counts[i, j] = how often true class i was predicted as class j."""
    labels = np.asarray(labels, dtype=np.int64)
    pred = clf.predict(np.asarray(features, dtype=np.float64))
    n_classes = clf.cfg.classes
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    for t, p in zip(labels, pred):
        counts[t, p] += 1
    return counts


def precision_recall(matrix):
    """Per-class precision and recall; cells with a zero denominator are
    reported as NaN (undefined), never as 0."""
    matrix = np.asarray(matrix, dtype=np.float64)
    diag = np.diag(matrix)
    col_sums = matrix.sum(axis=0)
    row_sums = matrix.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(col_sums > 0, diag / col_sums, np.nan)
        recall = np.where(row_sums > 0, diag / row_sums, np.nan)
    return precision, recall


def write_confusion_csv(matrix, class_names, path):
    import csv
    from pathlib import Path

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred", *class_names])
        for name, row in zip(class_names, matrix):
            w.writerow([name, *row.tolist()])
