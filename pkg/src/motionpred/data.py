"""Motion datasets: text ingestion, windowing, ID/OoD splits, synthetic classes.

On-disk layout is one file per recording, ``<root>/<subject>/<action>_<trial>.txt``,
one frame per line, comma-separated values (the de-facto layout of the
preprocessed exponential-map distributions of the common mocap corpora).
The synthetic generator produces frequency-banded sinusoid classes as a
desk-scale stand-in for kinematically distinct actions.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

REPRESENTATIONS = ("exp-map-angle", "cartesian-3d")


@dataclass
class MotionSequence:
    action: str
    subject: str
    values: np.ndarray            # (frames, K)
    representation: str = "exp-map-angle"
    trial: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"sequence values must be (frames, K), got {self.values.shape}")
        if self.representation not in REPRESENTATIONS:
            raise ValueError(f"unknown representation {self.representation!r}")

    @property
    def n_frames(self):
        return self.values.shape[0]

    @property
    def n_params(self):
        return self.values.shape[1]


@dataclass
class TrajectoryWindow:
    """A K x (N + T) slice of a sequence: N observed frames, T future frames."""

    data: np.ndarray
    n_observed: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError(f"window data must be K x (N+T), got {self.data.shape}")
        if not 1 <= self.n_observed <= self.data.shape[1]:
            raise ValueError("n_observed out of range")

    @property
    def n_future(self):
        return self.data.shape[1] - self.n_observed

    @property
    def observed(self):
        return self.data[:, :self.n_observed]

    @property
    def future(self):
        return self.data[:, self.n_observed:]


@dataclass
class WindowConfig:
    n_observed: int               # N
    n_future: int                 # T
    n_coeffs: int | None = None   # M; defaults to the full length N + T

    def __post_init__(self):
        if self.n_observed < 1 or self.n_future < 0:
            raise ValueError("need n_observed >= 1 and n_future >= 0")
        if self.n_coeffs is None:
            self.n_coeffs = self.seq_len
        if not 1 <= self.n_coeffs <= self.seq_len:
            raise ValueError(f"n_coeffs must be in [1, {self.seq_len}]")

    @property
    def seq_len(self):
        return self.n_observed + self.n_future


@dataclass
class SplitSpec:
    """Which action is in-distribution and how subjects are partitioned."""

    id_action: str
    train_subjects: tuple
    test_subject: str
    ood_actions: tuple
    val_subject: str | None = None

    def __post_init__(self):
        self.train_subjects = tuple(self.train_subjects)
        self.ood_actions = tuple(self.ood_actions)
        if self.id_action in self.ood_actions:
            raise ValueError("the ID action cannot also be listed as OoD")
        subjects = set(self.train_subjects)
        for s in (self.val_subject, self.test_subject):
            if s is not None and s in subjects:
                raise ValueError(f"subject {s!r} appears in more than one partition")
            if s is not None:
                subjects.add(s)


@dataclass
class OodSplit:
    train: list
    val: list
    test_id: list
    test_ood: dict                # action -> sequences


@dataclass
class SyntheticClassSpec:
    """A synthetic action class: per-joint sinusoids plus Gaussian noise."""

    name: str
    frequencies: np.ndarray       # Hz, per joint
    amplitudes: np.ndarray
    phases: np.ndarray
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.frequencies = np.atleast_1d(np.asarray(self.frequencies, dtype=np.float64))
        self.amplitudes = np.atleast_1d(np.asarray(self.amplitudes, dtype=np.float64))
        self.phases = np.atleast_1d(np.asarray(self.phases, dtype=np.float64))
        if not (len(self.frequencies) == len(self.amplitudes) == len(self.phases)):
            raise ValueError("per-joint parameter arrays must have equal length")
        if np.any(self.frequencies <= 0):
            raise ValueError("frequencies must be > 0")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")

    @property
    def n_joints(self):
        return len(self.frequencies)


# ---------------------------------------------------------------------------
# text ingestion
# ---------------------------------------------------------------------------

GLOBAL_CHANNELS = 6   # leading translation + rotation columns of angle files


def load_motion_text(path, representation="exp-map-angle", action=None,
                     subject=None, trial="", drop_global=False):
    """Parse a comma-separated frame-per-line file into a MotionSequence.

    drop_global removes the leading global translation/rotation columns of
    angle-format files (a common preprocessing step); off by default.
    """
    path = Path(path)
    rows = []
    width = None
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if width is None:
                width = len(fields)
            elif len(fields) != width:
                raise ValueError(
                    f"{path}: line {lineno} has {len(fields)} fields, expected {width}")
            try:
                rows.append([float(f) for f in fields])
            except ValueError as err:
                raise ValueError(f"{path}: line {lineno}: {err}") from None
    if not rows:
        raise ValueError(f"{path}: empty motion file")
    values = np.array(rows, dtype=np.float64)
    if drop_global:
        if representation != "exp-map-angle":
            raise ValueError("drop_global applies only to angle files")
        if values.shape[1] <= GLOBAL_CHANNELS:
            raise ValueError(f"{path}: too few columns to drop global channels")
        values = values[:, GLOBAL_CHANNELS:]
    name = path.stem
    if action is None:
        action, _, trial_from_name = name.rpartition("_")
        if not action:
            action, trial_from_name = name, ""
        trial = trial or trial_from_name
    return MotionSequence(action=action, subject=subject or path.parent.name,
                          values=values,
                          representation=representation, trial=trial)


def save_motion_text(seq: MotionSequence, path):
    """Write a sequence back out in the loader's format, full precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for frame in seq.values:
            fh.write(",".join(repr(float(v)) for v in frame))
            fh.write("\n")


def load_dataset(root, representation="exp-map-angle", pattern="*/*.txt",
                 drop_global=False):
    """Load every ``<subject>/<action>_<trial>.txt`` under root, sorted."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} does not exist")
    sequences = []
    for path in sorted(root.glob(pattern)):
        sequences.append(load_motion_text(path, representation,
                                          drop_global=drop_global))
    if not sequences:
        raise ValueError(f"no motion files matched {pattern!r} under {root}")
    return sequences


# ---------------------------------------------------------------------------
# windowing and splits
# ---------------------------------------------------------------------------

def window_samples(seq: MotionSequence, n_observed, n_future, stride=1):
    """Slide a length N+T window over a sequence; returns TrajectoryWindows
    whose rows are joints and columns frames."""
    total = n_observed + n_future
    if seq.n_frames < total:
        raise ValueError(
            f"sequence of {seq.n_frames} frames is shorter than a window of {total}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    windows = []
    for start in range(0, seq.n_frames - total + 1, stride):
        chunk = seq.values[start:start + total].T
        windows.append(TrajectoryWindow(data=chunk.copy(), n_observed=n_observed))
    return windows


def make_ood_split(sequences, spec: SplitSpec) -> OodSplit:
    """Partition sequences: ID action on train/val subjects for fitting, the
    test subject's ID action as test-ID, every OoD action on the test
    subject keyed by action."""
    actions = {s.action for s in sequences}
    subjects = {s.subject for s in sequences}
    missing = [a for a in (spec.id_action, *spec.ood_actions) if a not in actions]
    if missing:
        raise ValueError(f"actions not present in dataset: {missing}")
    wanted_subjects = [*spec.train_subjects, spec.test_subject]
    if spec.val_subject is not None:
        wanted_subjects.append(spec.val_subject)
    missing = [s for s in wanted_subjects if s not in subjects]
    if missing:
        raise ValueError(f"subjects not present in dataset: {missing}")

    split = OodSplit(train=[], val=[], test_id=[], test_ood={a: [] for a in spec.ood_actions})
    for seq in sequences:
        if seq.action == spec.id_action:
            if seq.subject in spec.train_subjects:
                split.train.append(seq)
            elif seq.subject == spec.val_subject:
                split.val.append(seq)
            elif seq.subject == spec.test_subject:
                split.test_id.append(seq)
        elif seq.action in split.test_ood and seq.subject == spec.test_subject:
            split.test_ood[seq.action].append(seq)
    if not split.train:
        raise ValueError(f"no training sequences for action {spec.id_action!r}")
    return split


# ---------------------------------------------------------------------------
# synthetic classes
# ---------------------------------------------------------------------------

def bin_frequency(bin_index, length, fps):
    """Frequency (Hz) whose sampled sinusoid lies exactly on one transform
    basis vector of the given length."""
    return bin_index * fps / (2.0 * length)


def bin_phase(bin_index, length):
    """Phase offset aligning a sine to the cosine basis vector of a bin."""
    return 0.5 * np.pi + np.pi * bin_index / (2.0 * length)


def default_synthetic_specs(n_classes=4, n_joints=6, fps=25.0, window_len=20,
                            noise_std=0.05, base_seed=1234):
    """Sinusoid classes in disjoint frequency bands.

    Class i centers on transform bin 2i+1 of a window_len window, with a
    small per-joint detune that stays well inside the band, so classes are
    separable in coefficient space by construction.
    """
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    specs = []
    for i in range(n_classes):
        center = bin_frequency(2 * i + 1, window_len, fps)
        detune = 1.0 + 0.03 * (np.arange(n_joints) - (n_joints - 1) / 2.0)
        freqs = center * detune
        amps = 1.0 + 0.1 * np.arange(n_joints)
        phases = 2.0 * np.pi * np.arange(n_joints) / n_joints
        specs.append(SyntheticClassSpec(
            name=f"class{i}", frequencies=freqs, amplitudes=amps,
            phases=phases, noise_std=noise_std, seed=base_seed + i))
    return specs


def synthesize_dataset(specs, sequences_per_class, length, fps,
                       subjects=("train", "val", "test")):
    """Generate x_k(t) = amp_k * sin(2 pi f_k t + phase_k) + noise for every
    (class, subject, index); fully determined by the class seeds."""
    if len(specs) < 2:
        raise ValueError("need at least 2 synthetic classes")
    sequences = []
    t = np.arange(length) / fps
    for spec in specs:
        for si, subject in enumerate(subjects):
            for idx in range(sequences_per_class):
                rng = np.random.default_rng([spec.seed, si, idx])
                clean = spec.amplitudes[:, None] * np.sin(
                    2.0 * np.pi * spec.frequencies[:, None] * t[None, :]
                    + spec.phases[:, None])
                noise = rng.normal(0.0, spec.noise_std, size=clean.shape) \
                    if spec.noise_std > 0 else 0.0
                sequences.append(MotionSequence(
                    action=spec.name, subject=subject,
                    values=(clean + noise).T, trial=str(idx)))
    return sequences


def synthetic_split(specs) -> SplitSpec:
    names = [s.name for s in specs]
    return SplitSpec(id_action=names[0], train_subjects=("train",),
                     val_subject="val", test_subject="test",
                     ood_actions=tuple(names[1:]))


# ---------------------------------------------------------------------------
# dataset presets
# ---------------------------------------------------------------------------

H36M_ACTIONS = (
    "directions", "discussion", "eating", "greeting", "phoning", "posing",
    "purchases", "sitting", "sittingdown", "smoking", "takingphoto",
    "waiting", "walking", "walkingdog", "walkingtogether",
)

CMU_ACTIONS = (
    "basketball", "basketball_signal", "directing_traffic", "jumping",
    "running", "soccer", "walking", "washwindow",
)


def h36m_walking_split() -> SplitSpec:
    """Train/validate on walking (subjects S1/S6/S7/S8/S9, validation S11),
    report test error for every action on subject S5."""
    ood = tuple(a for a in H36M_ACTIONS if a != "walking")
    return SplitSpec(id_action="walking",
                     train_subjects=("S1", "S6", "S7", "S8", "S9"),
                     val_subject="S11", test_subject="S5", ood_actions=ood)


def cmu_basketball_split() -> SplitSpec:
    """Train on basketball from the train tree, test every action on the
    test tree; no validation subject (selection falls back to train error)."""
    ood = tuple(a for a in CMU_ACTIONS if a != "basketball")
    return SplitSpec(id_action="basketball", train_subjects=("train",),
                     val_subject=None, test_subject="test", ood_actions=ood)
