"""Rician frequency-selective multipath channels and their subcarrier responses."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .config import SystemConfig
from .mimo import angle_transform, canonical_dictionary, steering_matrix, steering_vector

CHANNEL_SCHEMA = "dgmpsim.channel/1"


@dataclass(frozen=True)
class PathComponent:
    gain: complex
    delay: float
    aoa_freq: float
    aod_freq: float
    is_los: bool = False


@dataclass
class ChannelRealization:
    per_user_paths: list[list[PathComponent]]
    freq_channels: np.ndarray  # (K, P, N_bs, N_ue)

    @property
    def n_users(self) -> int:
        return len(self.per_user_paths)

    def los_path(self, k: int) -> PathComponent:
        return next(path for path in self.per_user_paths[k] if path.is_los)


def _subcarrier_phases(delays, cfg: SystemConfig) -> np.ndarray:
    """``exp(-j 2 pi f_s tau p / P)`` for p = 1..P, shape (P, L)."""
    p = np.arange(1, cfg.n_subcarriers + 1)[:, None]
    cycles = cfg.sample_rate * np.asarray(delays, dtype=float)[None, :] * p / cfg.n_subcarriers
    return np.exp(-2j * np.pi * np.mod(cycles, 1.0))


def user_freq_channels(paths: list[PathComponent], cfg: SystemConfig) -> np.ndarray:
    """All P subcarrier matrices of one user, shape (P, N_bs, N_ue)."""
    if not paths:
        return np.zeros((cfg.n_subcarriers, cfg.n_ant_bs, cfg.n_ant_ue), dtype=complex)
    gains = np.array([path.gain for path in paths], dtype=complex)
    phases = _subcarrier_phases([path.delay for path in paths], cfg)
    a_bs = steering_matrix(cfg.n_ant_bs, [path.aoa_freq for path in paths])
    a_ue = steering_matrix(cfg.n_ant_ue, [path.aod_freq for path in paths])
    return np.einsum("pl,il,jl->pij", phases * gains, a_bs, a_ue.conj())


def freq_response(paths: list[PathComponent], p: int, cfg: SystemConfig) -> np.ndarray:
    """Channel matrix of subcarrier ``p`` (1-based) as an explicit sum over paths."""
    if not 1 <= p <= cfg.n_subcarriers:
        raise ValueError(f"subcarrier index p={p} outside 1..{cfg.n_subcarriers}")
    H = np.zeros((cfg.n_ant_bs, cfg.n_ant_ue), dtype=complex)
    for path in paths:
        phase = np.exp(-2j * np.pi * np.mod(cfg.sample_rate * path.delay * p / cfg.n_subcarriers, 1.0))
        H += path.gain * phase * np.outer(steering_vector(cfg.n_ant_bs, path.aoa_freq),
                                          steering_vector(cfg.n_ant_ue, path.aod_freq).conj())
    return H


def _draw_freqs(rng: np.random.Generator, n_antennas: int, size: int, on_grid: bool) -> np.ndarray:
    if on_grid:
        return rng.integers(0, n_antennas, size=size) / n_antennas
    return rng.uniform(0.0, 1.0, size=size)


def generate_channel(cfg: SystemConfig, rng: np.random.Generator, on_grid: bool = False) -> ChannelRealization:
    """Draw one Rician multipath realization for all users.

    Per user: one LOS path plus ``n_paths - 1`` NLOS paths, zero-mean complex
    Gaussian gains with LOS variance ``kappa / (1 + kappa)`` and NLOS variance
    ``1 / ((1 + kappa)(L - 1))`` each, so the expected total power is 1.
    Delays are uniform on ``[0, max_delay]`` and the LOS path takes the
    smallest one.
    """
    n_paths = cfg.n_paths
    kappa = cfg.k_factor
    if n_paths == 1:
        variances = np.array([1.0])
    else:
        variances = np.concatenate([[kappa / (1 + kappa)],
                                    np.full(n_paths - 1, 1.0 / ((1 + kappa) * (n_paths - 1)))])

    users = []
    for _ in range(cfg.n_users):
        gains = (rng.standard_normal(n_paths) + 1j * rng.standard_normal(n_paths)) * np.sqrt(variances / 2)
        delays = np.sort(rng.uniform(0.0, cfg.max_delay, size=n_paths))
        aoa = _draw_freqs(rng, cfg.n_ant_bs, n_paths, on_grid)
        aod = _draw_freqs(rng, cfg.n_ant_ue, n_paths, on_grid)
        users.append([
            PathComponent(complex(gains[l]), float(delays[l]), float(aoa[l]), float(aod[l]), is_los=(l == 0))
            for l in range(n_paths)
        ])
    return realization_from_paths(users, cfg)


def realization_from_paths(per_user_paths: list[list[PathComponent]], cfg: SystemConfig) -> ChannelRealization:
    freq = np.stack([user_freq_channels(paths, cfg) for paths in per_user_paths])
    return ChannelRealization(per_user_paths, freq)


def flat_angle_index(q_bs, q_ue, n_ant_bs: int):
    """Column index of grid pair (q_bs, q_ue) inside one user's block (column-major vec)."""
    return np.asarray(q_ue) * n_ant_bs + np.asarray(q_bs)


def common_support(realization: ChannelRealization, k: int, threshold: float = 1e-9,
                   mode: str = "relative") -> list[frozenset]:
    """Angle-domain support of user ``k`` on every subcarrier.

    ``mode="relative"`` keeps entries whose magnitude exceeds ``threshold``
    times the largest entry of that subcarrier.  ``mode="energy"`` keeps the
    smallest set of entries holding at least ``threshold`` of the energy.
    Indices follow the column-major vectorization ``q_ue * N_bs + q_bs``.
    """
    H = realization.freq_channels[k]
    n_bs, n_ue = H.shape[1:]
    A_bs, A_ue = canonical_dictionary(n_bs), canonical_dictionary(n_ue)
    supports = []
    for H_f in H:
        mags = np.abs(angle_transform(H_f, A_bs, A_ue)).reshape(-1, order="F")
        peak = mags.max()
        if peak == 0.0:
            supports.append(frozenset())
            continue
        if mode == "relative":
            idx = np.flatnonzero(mags > threshold * peak)
        elif mode == "energy":
            energy = mags ** 2
            order = np.argsort(-energy, kind="stable")
            cumulative = np.cumsum(energy[order]) / energy.sum()
            count = int(np.searchsorted(cumulative, threshold - 1e-12)) + 1
            idx = order[:count]
        else:
            raise ValueError(f"unknown support mode {mode!r}")
        supports.append(frozenset(int(i) for i in idx))
    return supports


def realization_to_dict(realization: ChannelRealization, cfg: SystemConfig) -> dict:
    return {
        "schema": CHANNEL_SCHEMA,
        "config_hash": cfg.config_hash(),
        "config": cfg.to_dict(),
        "users": [
            [{"gain_re": path.gain.real, "gain_im": path.gain.imag, "delay_s": path.delay,
              "aoa_freq": path.aoa_freq, "aod_freq": path.aod_freq, "is_los": path.is_los}
             for path in paths]
            for paths in realization.per_user_paths
        ],
    }


def realization_from_dict(data: dict) -> tuple[ChannelRealization, SystemConfig]:
    if data.get("schema") != CHANNEL_SCHEMA:
        raise ValueError(f"unsupported channel schema {data.get('schema')!r}")
    cfg = SystemConfig(**data["config"])
    if cfg.config_hash() != data["config_hash"]:
        raise ValueError("config hash mismatch in channel file")
    users = [
        [PathComponent(complex(p["gain_re"], p["gain_im"]), p["delay_s"], p["aoa_freq"],
                       p["aod_freq"], p["is_los"]) for p in paths]
        for paths in data["users"]
    ]
    return realization_from_paths(users, cfg), cfg


def save_realization(path, realization: ChannelRealization, cfg: SystemConfig) -> None:
    with open(path, "w") as fh:
        json.dump(realization_to_dict(realization, cfg), fh, indent=1)


def load_realization(path) -> tuple[ChannelRealization, SystemConfig]:
    with open(path) as fh:
        return realization_from_dict(json.load(fh))
