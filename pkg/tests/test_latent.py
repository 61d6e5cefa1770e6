"""Latent extraction, PCA projection, and CSV export."""

import numpy as np
import pytest

from motionpred.data import WindowConfig, window_samples
from motionpred.latent import (LatentRecord, export_latents_csv, export_projection_csv,
                               extract_latents, project_pca_2d, read_latents_csv)
from motionpred.model import ModelConfig, build_model

WC = WindowConfig(n_observed=10, n_future=10)


@pytest.fixture(scope="module")
def vae_model():
    cfg = ModelConfig(nodes=6, input_width=20, seq_len=20, hidden=16, blocks=2,
                      with_vae=True, latent_width=4, p_drop=0.0)
    return build_model(cfg, 19)


@pytest.fixture(scope="module")
def labeled_windows(synth_dataset_module):
    labeled = []
    for seq in synth_dataset_module:
        if seq.subject != "test":
            continue
        for w in window_samples(seq, 10, 10, 10):
            labeled.append((seq.action, w))
    return labeled


@pytest.fixture(scope="module")
def synth_dataset_module():
    from motionpred.data import default_synthetic_specs, synthesize_dataset
    specs = default_synthetic_specs(n_classes=4, n_joints=6, fps=25.0, window_len=20)
    return synthesize_dataset(specs, 4, 60, 25.0)


def test_extract_latent_dimensions(vae_model, labeled_windows):
    records = extract_latents(vae_model, labeled_windows, WC)
    assert len(records) == len(labeled_windows)
    assert all(r.vector.size == 6 * 4 for r in records)


def test_extract_is_deterministic_per_window(vae_model, labeled_windows):
    pair = [labeled_windows[0], labeled_windows[0]]
    records = extract_latents(vae_model, pair, WC)
    assert np.array_equal(records[0].vector, records[1].vector)


def test_extract_requires_branch(labeled_windows):
    plain = build_model(ModelConfig(nodes=6, input_width=20, seq_len=20, hidden=16,
                                    blocks=2, with_vae=False), 3)
    with pytest.raises(ValueError, match="branch"):
        extract_latents(plain, labeled_windows, WC)


def _records_from(matrix, labels=None):
    labels = labels or [f"l{i}" for i in range(len(matrix))]
    return [LatentRecord(sample_id=str(i), label=lab, vector=np.asarray(row, dtype=float))
            for i, (row, lab) in enumerate(zip(matrix, labels))]


def test_pca_recovers_full_rank_2d_data(rng):
    x = rng.normal(size=(40, 2)) @ np.array([[2.0, 0.3], [0.3, 0.5]])
    points = project_pca_2d(_records_from(x))
    proj = np.array([[p[0], p[1]] for p in points])
    d_in = np.linalg.norm(x[:, None] - x[None, :], axis=-1)
    d_out = np.linalg.norm(proj[:, None] - proj[None, :], axis=-1)
    assert np.abs(d_in - d_out).max() < 1e-8


def test_pca_component_variances_ordered(rng):
    x = rng.normal(size=(60, 5)) * np.array([3.0, 1.0, 0.5, 0.1, 0.01])
    points = project_pca_2d(_records_from(x))
    proj = np.array([[p[0], p[1]] for p in points])
    assert proj[:, 0].var() >= proj[:, 1].var()


def test_pca_preserves_planar_point_cloud(rng):
    basis = np.linalg.qr(rng.normal(size=(3, 2)))[0]     # plane in 3-space
    coords = rng.normal(size=(30, 2))
    x = coords @ basis.T + rng.normal(size=3)
    points = project_pca_2d(_records_from(x))
    proj = np.array([[p[0], p[1]] for p in points])
    d_in = np.linalg.norm(x[:, None] - x[None, :], axis=-1)
    d_out = np.linalg.norm(proj[:, None] - proj[None, :], axis=-1)
    assert np.abs(d_in - d_out).max() < 1e-8


def test_pca_needs_three_records(rng):
    with pytest.raises(ValueError):
        project_pca_2d(_records_from(rng.normal(size=(2, 4))))


def test_pca_deterministic_sign_convention(rng):
    x = rng.normal(size=(25, 6))
    p1 = project_pca_2d(_records_from(x))
    p2 = project_pca_2d(_records_from(x))
    assert p1 == p2


def test_pca_projected_variance_bounded_by_input(rng):
    x = rng.normal(size=(50, 8))
    points = project_pca_2d(_records_from(x))
    proj = np.array([[p[0], p[1]] for p in points])
    total_in = ((x - x.mean(0)) ** 2).sum(axis=0).sum() / (len(x) - 1)
    total_out = proj.var(axis=0, ddof=1).sum()
    assert total_out <= total_in + 1e-10


def test_latents_csv_round_trip(tmp_path, rng):
    records = _records_from(rng.normal(size=(5, 7)), labels=list("abcde"))
    path = tmp_path / "latents.csv"
    export_latents_csv(records, path)
    header = path.read_text().split("\n")[0].split(",")
    assert len(header) == 7 + 2
    loaded = read_latents_csv(path)
    for orig, back in zip(records, loaded):
        assert back.label == orig.label
        assert np.array_equal(back.vector, orig.vector)


def test_latents_csv_rejects_empty(tmp_path):
    with pytest.raises(ValueError):
        export_latents_csv([], tmp_path / "x.csv")


def test_projection_csv(tmp_path):
    path = tmp_path / "proj.csv"
    export_projection_csv([(0.25, -1.5, "walk")], path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "id,label,x,y"
    assert lines[1] == "0,walk,0.25,-1.5"
