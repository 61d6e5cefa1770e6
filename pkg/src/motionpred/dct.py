"""Orthonormal cosine-transform encoding of joint trajectories.

A trajectory window is a K x L array: one row per joint parameter, one
column per frame. The transform maps each row to L frequency coefficients

    C[l] = sqrt(2/L) * w_l * sum_n x[n] * cos(pi * (2n - 1) * (l - 1) / (2L))

with 1-based n, l and w_l = 1/sqrt(2) for the first (DC) coefficient and 1
otherwise. The matrix of basis rows is orthonormal, so the inverse is its
transpose and an uncropped round trip is exact to roundoff. Cropping keeps
the lowest-frequency prefix of coefficients; the inverse treats missing
high frequencies as zero.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=64)
def dct_matrix(length: int) -> np.ndarray:
    """The L x L orthonormal transform matrix G; coefficients = x @ G.T."""
    if length < 1:
        raise ValueError(f"transform length must be >= 1, got {length}")
    n = np.arange(length)
    l = np.arange(length)[:, None]
    g = np.sqrt(2.0 / length) * np.cos(np.pi * (2 * n + 1) * l / (2.0 * length))
    g[0] /= np.sqrt(2.0)
    g.setflags(write=False)
    return g


def pad_replicate(observed: np.ndarray, n_future: int) -> np.ndarray:
    """Extend a K x N trajectory by repeating its last column n_future times."""
    observed = np.asarray(observed, dtype=np.float64)
    if observed.ndim != 2 or observed.shape[1] == 0:
        raise ValueError(f"expected a non-empty K x N trajectory, got shape {observed.shape}")
    if n_future < 0:
        raise ValueError(f"n_future must be >= 0, got {n_future}")
    if n_future == 0:
        return observed.copy()
    last = observed[:, -1:]
    return np.concatenate([observed, np.repeat(last, n_future, axis=1)], axis=1)


def dct_forward(window: np.ndarray, n_coeffs: int | None = None) -> np.ndarray:
    """Transform each row of a K x L window; keep the first n_coeffs rows of
    the spectrum (low frequencies) when cropping is requested."""
    window = np.asarray(window, dtype=np.float64)
    length = window.shape[-1]
    m = length if n_coeffs is None else int(n_coeffs)
    if not 1 <= m <= length:
        raise ValueError(f"n_coeffs must be in [1, {length}], got {m}")
    g = dct_matrix(length)
    return window @ g[:m].T


def dct_inverse(coeffs: np.ndarray, length: int) -> np.ndarray:
    """Invert dct_forward back to a K x length trajectory.

    When fewer than `length` coefficients are present the missing high
    frequencies are taken to be zero.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if length < 1:
        raise ValueError(f"output length must be >= 1, got {length}")
    m = coeffs.shape[-1]
    if m > length:
        raise ValueError(f"got {m} coefficients for output length {length}")
    g = dct_matrix(length)
    return coeffs @ g[:m]
