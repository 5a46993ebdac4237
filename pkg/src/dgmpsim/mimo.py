"""ULA steering vectors, angle-domain dictionaries and Kronecker/vec algebra.

Angles are handled as spatial frequencies ``x = d sin(theta) / lambda``.
The steering map is 1-periodic in ``x`` so frequencies are kept in ``[0, 1)``.
Steering vectors are NOT normalized: every entry has unit modulus and the
vector norm is ``sqrt(N)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def wrap_freq(x):
    """Map spatial frequencies into [0, 1)."""
    w = np.mod(x, 1.0)
    # np.mod(-1e-18, 1.0) rounds to 1.0
    return np.where(w >= 1.0, 0.0, w)


def freq_distance(x, y):
    """Circular distance between spatial frequencies (in [0, 0.5])."""
    d = np.mod(np.asarray(x) - np.asarray(y), 1.0)
    return np.minimum(d, 1.0 - d)


def _phase(n_antennas: int, grid) -> np.ndarray:
    n = np.arange(n_antennas)[:, None]
    # reduce n*x modulo 1 before scaling by 2*pi to keep the argument small
    return 2.0 * np.pi * np.mod(n * np.asarray(grid, dtype=float)[None, :], 1.0)


def steering_vector(n_antennas: int, spatial_freq: float) -> np.ndarray:
    """Array response ``[exp(j 2 pi n x)]_{n=0..N-1}``."""
    if int(n_antennas) != n_antennas or n_antennas < 1:
        raise ValueError(f"n_antennas must be a positive integer, got {n_antennas!r}")
    return np.exp(1j * _phase(int(n_antennas), [spatial_freq]))[:, 0]


def steering_matrix(n_antennas: int, grid) -> np.ndarray:
    """Stack steering vectors for every spatial frequency in ``grid`` as columns."""
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise ValueError("grid must be nonempty")
    if int(n_antennas) != n_antennas or n_antennas < 1:
        raise ValueError(f"n_antennas must be a positive integer, got {n_antennas!r}")
    return np.exp(1j * _phase(int(n_antennas), grid))


def canonical_grid(n_antennas: int, offset: float = 0.0) -> np.ndarray:
    """Spatial frequencies ``(q + offset) / N`` for ``q = 0..N-1``."""
    return (np.arange(n_antennas) + offset) / n_antennas


@dataclass(frozen=True)
class AngleDictionary:
    columns: np.ndarray
    grid: np.ndarray

    @property
    def n_antennas(self) -> int:
        return self.columns.shape[0]

    @property
    def size(self) -> int:
        return self.columns.shape[1]


def build_dictionary(n_antennas: int, grid) -> AngleDictionary:
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    return AngleDictionary(steering_matrix(n_antennas, grid), grid)


def canonical_dictionary(n_antennas: int) -> AngleDictionary:
    """DFT dictionary with grid q/N; ``(1/N) A^H A = I``."""
    return build_dictionary(n_antennas, canonical_grid(n_antennas))


def vec(X: np.ndarray) -> np.ndarray:
    """Column-major vectorization."""
    return np.asarray(X).reshape(-1, order="F")


def unvec(x: np.ndarray, n_rows: int) -> np.ndarray:
    return np.asarray(x).reshape(n_rows, -1, order="F")


def kron_operator(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Materialize ``B^T kron A`` so that ``vec(A X B) = kron_operator(A, B) @ vec(X)``."""
    return np.kron(np.asarray(B).T, np.asarray(A))


def vectorize_sandwich(A: np.ndarray, X: np.ndarray, B: np.ndarray) -> np.ndarray:
    """``vec(A X B)`` evaluated without forming the Kronecker product."""
    A, X, B = np.asarray(A), np.asarray(X), np.asarray(B)
    if A.ndim != 2 or X.ndim != 2 or B.ndim != 2:
        raise ValueError("vectorize_sandwich expects 2-D operands")
    if A.shape[1] != X.shape[0] or X.shape[1] != B.shape[0]:
        raise ValueError(f"non-conformable shapes {A.shape}, {X.shape}, {B.shape}")
    return vec(A @ X @ B)


def _as_columns(d) -> np.ndarray:
    return d.columns if isinstance(d, AngleDictionary) else np.asarray(d)


def angle_transform(H_f: np.ndarray, A_bs, A_ue) -> np.ndarray:
    """Angle-domain channel ``A_bs^H H_f A_ue``."""
    A_bs, A_ue = _as_columns(A_bs), _as_columns(A_ue)
    H_f = np.asarray(H_f)
    if H_f.shape != (A_bs.shape[0], A_ue.shape[0]):
        raise ValueError(
            f"channel shape {H_f.shape} does not match dictionaries "
            f"({A_bs.shape[0]}, {A_ue.shape[0]})")
    return A_bs.conj().T @ H_f @ A_ue


def inverse_angle_transform(H_a: np.ndarray, A_bs, A_ue) -> np.ndarray:
    """Invert :func:`angle_transform` for canonical (square DFT) dictionaries.

    ``A A^H = N I`` for the unnormalized DFT dictionary, hence the
    ``1 / (N_bs N_ue)`` factor.
    """
    A_bs, A_ue = _as_columns(A_bs), _as_columns(A_ue)
    if A_bs.shape[0] != A_bs.shape[1] or A_ue.shape[0] != A_ue.shape[1]:
        raise ValueError("inverse transform needs square canonical dictionaries")
    H_a = np.asarray(H_a)
    if H_a.shape != (A_bs.shape[1], A_ue.shape[1]):
        raise ValueError(f"angle-domain shape {H_a.shape} does not match dictionaries")
    return A_bs @ H_a @ A_ue.conj().T / (A_bs.shape[0] * A_ue.shape[0])


def angle_coefficients(H_f: np.ndarray) -> np.ndarray:
    """Coefficients ``X`` with ``H_f = A_bs X A_ue^H`` on the canonical grids.

    This is the angle-domain channel scaled by ``1 / (N_bs N_ue)``; it is the
    vector the aggregate measurement matrix multiplies.
    """
    n_bs, n_ue = np.shape(H_f)
    return angle_transform(H_f, canonical_dictionary(n_bs), canonical_dictionary(n_ue)) / (n_bs * n_ue)


def dft_project(x: np.ndarray, offset: float = 0.0) -> np.ndarray:
    """``A(offset)^H x`` along the last axis via FFT.

    ``A(offset)`` is the N x N dictionary whose column q is the steering
    vector at ``(q + offset) / N``.
    """
    x = np.asarray(x)
    n = x.shape[-1]
    if offset:
        ramp = np.exp(-2j * np.pi * np.mod(np.arange(n) * offset / n, 1.0))
        x = x * ramp
    return np.fft.fft(x, axis=-1)
