"""Latent-space inspection: extract per-window latent means, project them to
2D with PCA, and export full-precision CSVs for external projection tools.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .classifier import window_features  # same flattened input convention


@dataclass
class LatentRecord:
    sample_id: str
    label: str
    vector: np.ndarray


def extract_latents(model, labeled_windows, wc):
    """Deterministic latent means (no sampling), one record per window.

    labeled_windows is an iterable of (label, TrajectoryWindow).
    """
    if model.vae is None:
        raise ValueError("model has no variational branch to inspect")
    records = []
    labels = [label for label, _ in labeled_windows]
    windows = [w for _, w in labeled_windows]
    if not windows:
        return records
    feats = window_features(windows, wc)
    k, m = model.cfg.nodes, wc.n_coeffs
    mu = model.latent_mean(feats.reshape(len(windows), k, m))
    for i, label in enumerate(labels):
        records.append(LatentRecord(sample_id=str(i), label=label,
                                    vector=mu[i].reshape(-1)))
    return records


def project_pca_2d(records):
    """Mean-centered projection onto the top-2 principal components.

    Deterministic: components are ordered by decreasing variance and
    sign-fixed so each component's first nonzero loading is positive.
    Returns a list of (x, y, label).
    """
    if len(records) < 3:
        raise ValueError("PCA projection needs at least 3 records")
    x = np.stack([r.vector for r in records]).astype(np.float64)
    if x.shape[1] < 2:
        raise ValueError("latent vectors must have at least 2 dimensions")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (len(records) - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:2]
    components = eigvecs[:, order]
    for j in range(2):
        col = components[:, j]
        nonzero = np.nonzero(np.abs(col) > 1e-12)[0]
        if len(nonzero) and col[nonzero[0]] < 0:
            components[:, j] = -col
    projected = centered @ components
    return [(float(px), float(py), r.label)
            for (px, py), r in zip(projected, records)]


def export_latents_csv(records, path):
    """CSV: id,label,z_0,...,z_{D-1} at full precision."""
    if not records:
        raise ValueError("no latent records to export")
    dim = records[0].vector.size
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "label", *(f"z_{i}" for i in range(dim))])
        for r in records:
            if r.vector.size != dim:
                raise ValueError("inconsistent latent dimensions")
            w.writerow([r.sample_id, r.label, *(repr(float(v)) for v in r.vector)])


def read_latents_csv(path):
    records = []
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        dim = len(header) - 2
        for row in reader:
            records.append(LatentRecord(
                sample_id=row[0], label=row[1],
                vector=np.array([float(v) for v in row[2:2 + dim]])))
    return records


def export_projection_csv(points, path):
    """CSV: id,label,x,y for the 2D projection."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "label", "x", "y"])
        for i, (x, y, label) in enumerate(points):
            w.writerow([i, label, repr(x), repr(y)])
