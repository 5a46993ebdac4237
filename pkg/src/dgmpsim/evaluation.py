"""Recovery and downlink metrics: NMSE, spectral efficiency and uncoded 16-QAM BER.

Downlink model (TDD reciprocity, ``H_dl = H_ul^T``): the BS steers one RF
beam per user along the conjugated estimated BS steering vector, each UE
combines along its conjugated estimated UE steering vector, both scaled to
unit norm.  Baseband zero-forcing is computed on the K x K effective channel
seen through those beams on the TRUE channel, and the precoder is scaled to
total transmit power ``snr`` (noise variance 1 per UE).
"""

from __future__ import annotations

import numpy as np

from .channel import ChannelRealization
from .config import SystemConfig
from .estimators import EstimateResult
from .mimo import steering_matrix

# effective channels worse conditioned than this fall back to regularized ZF
ZF_COND_LIMIT = 1e10
ZF_LOADING = 1e-6


def nmse(H_true: np.ndarray, H_est: np.ndarray) -> float:
    """``sum ||H_est - H_true||_F^2 / sum ||H_true||_F^2`` over all users and subcarriers."""
    H_true, H_est = np.asarray(H_true), np.asarray(H_est)
    if H_true.shape != H_est.shape:
        raise ValueError(f"shape mismatch {H_true.shape} vs {H_est.shape}")
    energy = float(np.sum(np.abs(H_true) ** 2))
    if energy == 0.0:
        raise ValueError("true channel has zero energy")
    return float(np.sum(np.abs(H_est - H_true) ** 2)) / energy


def _beams(result: EstimateResult, cfg: SystemConfig):
    aoa = result.los_aoa_freq
    aod = result.los_aod_freq
    missing = np.isnan(aoa)
    # users without any estimate get an arbitrary broadside beam
    aoa, aod = np.where(missing, 0.0, aoa), np.where(missing, 0.0, aod)
    V = steering_matrix(cfg.n_ant_bs, aoa).conj() / np.sqrt(cfg.n_ant_bs)
    W = steering_matrix(cfg.n_ant_ue, aod).conj() / np.sqrt(cfg.n_ant_ue)
    return V, W, [int(k) for k in np.flatnonzero(missing)]


def effective_channels(chan: ChannelRealization, result: EstimateResult, cfg: SystemConfig):
    """Per-subcarrier K x K effective downlink channels and the RF precoder.

    ``H_eff[p, k, j] = w_k^H H_{p,k}^T v_j``.
    """
    V, W, missing = _beams(result, cfg)
    # H_{p,k}^T v_j -> (K, P, N_ue, K)
    Hv = np.einsum("kpnu,nj->kpuj", chan.freq_channels, V)
    H_eff = np.einsum("uk,kpuj->pkj", W.conj(), Hv)
    return H_eff, V, missing


def zero_forcing(H_eff: np.ndarray):
    """Baseband ZF precoder per subcarrier; returns ``(F_bb, regularized_flags)``."""
    P, K, _ = H_eff.shape
    F = np.empty_like(H_eff)
    flags = np.zeros(P, dtype=bool)
    for p in range(P):
        H = H_eff[p]
        if np.linalg.cond(H) < ZF_COND_LIMIT:
            F[p] = np.linalg.inv(H)
        else:
            gram = H @ H.conj().T
            load = ZF_LOADING * max(np.real(np.trace(gram)), np.finfo(float).tiny)
            F[p] = H.conj().T @ np.linalg.inv(gram + load * np.eye(K))
            flags[p] = True
    return F, flags


def downlink_gains(chan: ChannelRealization, result: EstimateResult, cfg: SystemConfig):
    """Per-subcarrier amplitude matrix ``G[p, k, j]`` (user k, stream j) at unit total transmit power.

    Also returns diagnostics: subcarriers that needed regularized ZF and
    users without any estimate.
    """
    H_eff, V, missing = effective_channels(chan, result, cfg)
    F_bb, flags = zero_forcing(H_eff)
    power = np.sum(np.abs(np.matmul(V[None], F_bb)) ** 2, axis=(1, 2))   # ||V F_bb||_F^2 per p
    G = np.matmul(H_eff, F_bb) / np.sqrt(power)[:, None, None]
    return G, {"regularized_subcarriers": np.flatnonzero(flags).tolist(), "users_without_estimate": missing}


def _snr_linear(snr_db: float) -> float:
    return np.inf if np.isposinf(snr_db) else 10.0 ** (snr_db / 10.0)


def sinr(chan: ChannelRealization, result: EstimateResult, cfg: SystemConfig, snr_db: float) -> np.ndarray:
    """Per-(p, k) SINR, shape (P, K)."""
    G, _ = downlink_gains(chan, result, cfg)
    rho = _snr_linear(snr_db)
    power = np.abs(G) ** 2
    signal = np.diagonal(power, axis1=1, axis2=2)
    interference = power.sum(axis=2) - signal
    if np.isinf(rho):
        with np.errstate(divide="ignore"):
            return signal / interference
    return rho * signal / (rho * interference + 1.0)


def spectral_efficiency(chan: ChannelRealization, result: EstimateResult, cfg: SystemConfig,
                        snr_db: float) -> float:
    """Sum rate ``(1/P) sum_p sum_k log2(1 + SINR_kp)`` in bits per channel use."""
    return float(np.sum(np.log2(1.0 + sinr(chan, result, cfg, snr_db))) / chan.freq_channels.shape[1])


_QAM_SCALE = 1.0 / np.sqrt(10.0)


def _pam_map(b0: np.ndarray, b1: np.ndarray) -> np.ndarray:
    # (0,0)->-3, (0,1)->-1, (1,1)->1, (1,0)->3
    return np.where(b0 == 0, np.where(b1 == 0, -3.0, -1.0), np.where(b1 == 1, 1.0, 3.0))


def _pam_demap(x: np.ndarray):
    b0 = (x > 0).astype(np.int8)
    b1 = (np.abs(x) < 2.0).astype(np.int8)
    return b0, b1


def qam16_modulate(bits: np.ndarray) -> np.ndarray:
    """Gray-mapped unit-energy 16-QAM; ``bits`` has a trailing axis of 4."""
    i = _pam_map(bits[..., 0], bits[..., 1])
    q = _pam_map(bits[..., 2], bits[..., 3])
    return (i + 1j * q) * _QAM_SCALE


def qam16_demodulate(symbols: np.ndarray) -> np.ndarray:
    scaled = np.asarray(symbols) / _QAM_SCALE
    b0, b1 = _pam_demap(scaled.real)
    b2, b3 = _pam_demap(scaled.imag)
    return np.stack([b0, b1, b2, b3], axis=-1)


def ber_16qam(chan: ChannelRealization, result: EstimateResult, cfg: SystemConfig, snr_db: float,
              n_bits: int, rng: np.random.Generator) -> float:
    """Bit error rate of uncoded 16-QAM over the precoded downlink.

    Each UE equalizes with its own effective gain and hard-demaps.
    ``snr_db = inf`` disables noise.
    """
    K, P = chan.freq_channels.shape[:2]
    if n_bits <= 0 or n_bits % (4 * K * P):
        raise ValueError(f"n_bits must be a positive multiple of 4*K*P = {4 * K * P}")
    n_sym = n_bits // (4 * K * P)
    G, _ = downlink_gains(chan, result, cfg)
    bits = rng.integers(0, 2, size=(P, K, n_sym, 4), dtype=np.int8)
    s = qam16_modulate(bits)
    noise = (rng.standard_normal((P, K, n_sym)) + 1j * rng.standard_normal((P, K, n_sym))) / np.sqrt(2)
    rho = _snr_linear(snr_db)
    if np.isinf(rho):
        y = np.matmul(G, s)
        amp = np.diagonal(G, axis1=1, axis2=2)
    else:
        y = np.sqrt(rho) * np.matmul(G, s) + noise
        amp = np.sqrt(rho) * np.diagonal(G, axis1=1, axis2=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        s_hat = y / amp[:, :, None]
    s_hat = np.where(np.isfinite(s_hat), s_hat, 0.0)
    errors = np.count_nonzero(qam16_demodulate(s_hat) != bits)
    return errors / n_bits
