import numpy as np
import pytest

from motionpred.data import (WindowConfig, default_synthetic_specs, make_ood_split,
                             synthesize_dataset, synthetic_split, window_samples)


@pytest.fixture(scope="session")
def window_cfg():
    return WindowConfig(n_observed=10, n_future=10)


@pytest.fixture(scope="session")
def synth_specs():
    return default_synthetic_specs(n_classes=4, n_joints=6, fps=25.0, window_len=20)


@pytest.fixture(scope="session")
def synth_dataset(synth_specs):
    return synthesize_dataset(synth_specs, sequences_per_class=8, length=75, fps=25.0)


@pytest.fixture(scope="session")
def synth_split(synth_dataset, synth_specs):
    return make_ood_split(synth_dataset, synthetic_split(synth_specs))


@pytest.fixture(scope="session")
def train_windows_16(synth_split):
    windows = [w for s in synth_split.train for w in window_samples(s, 10, 10, 3)]
    return windows[:16]


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
