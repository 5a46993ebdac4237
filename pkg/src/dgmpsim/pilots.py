"""Random constant-modulus pilots and the per-subcarrier aggregate measurements.

Layout conventions (0-based, t = OFDM symbol, p = subcarrier):

* ``r_bar[p]`` stacks ``r_p^(t)`` for t = 0..G-1, so row ``t * N_rf_bs + r``.
* Columns of the aggregate measurement matrix are grouped per user; inside a
  user block column ``q_ue * N_bs + q_bs`` belongs to the grid pair
  ``(q_bs / N_bs, q_ue / N_ue)`` (column-major vectorization of the
  angle-domain matrix).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import ChannelRealization
from .config import SystemConfig
from .mimo import angle_coefficients, canonical_dictionary, dft_project, steering_matrix, vec

MEASUREMENT_SCHEMA = "dgmpsim.measurement/1"


def _unit_phasors(rng: np.random.Generator, shape) -> np.ndarray:
    return np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, size=shape))


@dataclass
class PilotBlock:
    z_rf: np.ndarray   # (G, N_bs, N_rf_bs)
    z_bb: np.ndarray   # (G, P, N_rf_bs, N_rf_bs)
    f_rf: np.ndarray   # (G, K, N_ue, N_rf_ue)
    s_eff: np.ndarray  # (G, P, K, N_rf_ue)

    @property
    def n_symbols(self) -> int:
        return self.z_rf.shape[0]

    @property
    def n_subcarriers(self) -> int:
        return self.z_bb.shape[1]

    @property
    def n_users(self) -> int:
        return self.f_rf.shape[1]

    def combiners(self) -> np.ndarray:
        """Composite BS combiners ``Z_RF^(t) Z_BB,p^(t)``, shape (P, G, N_bs, N_rf_bs)."""
        return np.einsum("tnr,tprs->ptns", self.z_rf, self.z_bb)

    def transmit_pilots(self) -> np.ndarray:
        """UE pilot vectors ``F_RF,k^(t) s_p,k^(t)``, shape (P, G, K, N_ue)."""
        return np.einsum("tkur,tpkr->ptku", self.f_rf, self.s_eff)


def generate_pilots(cfg: SystemConfig, rng: np.random.Generator) -> PilotBlock:
    """Draw all four phase families i.i.d. uniform on [0, 2 pi)."""
    G, P, K = cfg.n_symbols, cfg.n_subcarriers, cfg.n_users
    z_rf = _unit_phasors(rng, (G, cfg.n_ant_bs, cfg.n_rf_bs))
    f_rf = _unit_phasors(rng, (G, K, cfg.n_ant_ue, cfg.n_rf_ue))
    s_eff = _unit_phasors(rng, (G, P, K, cfg.n_rf_ue))
    z_bb = _unit_phasors(rng, (G, P, cfg.n_rf_bs, cfg.n_rf_bs))
    return PilotBlock(z_rf, z_bb, f_rf, s_eff)


class SensingOperator:
    """Structured access to the aggregate measurement matrices.

    The full matrix has ``K * N_bs * N_ue`` columns per subcarrier, far too
    many to materialize at realistic array sizes.  Every column is a
    Kronecker product of a UE-side factor ``a_ue^H f`` and a BS-side factor
    ``Z^H a_bs``, so correlations and column norms are assembled from those
    two small factor tensors.
    """

    def __init__(self, pilots: PilotBlock):
        self.pilots = pilots
        self.Z = pilots.combiners()         # (P, G, N_bs, N_rf)
        self.F = pilots.transmit_pilots()   # (P, G, K, N_ue)
        self._Zt = np.ascontiguousarray(np.swapaxes(self.Z, -1, -2))   # (P, G, N_rf, N_bs)
        self.n_subcarriers, self.n_symbols, self.n_ant_bs, self.n_rf_bs = self.Z.shape
        self.n_users, self.n_ant_ue = self.F.shape[2:]

    @property
    def n_rows(self) -> int:
        return self.n_symbols * self.n_rf_bs

    def bs_factor(self, grid=None, offset: float = 0.0) -> np.ndarray:
        """``Z^H a_bs(x)`` for every grid point, shape (P, G, N_rf, Q).

        Without ``grid`` the canonical grid shifted by ``offset / N_bs`` is
        used (FFT path).
        """
        if grid is None:
            # Z^H a(q) = conj(A^H Z) column-wise
            return dft_project(self._Zt, offset).conj()
        A = steering_matrix(self.n_ant_bs, grid)
        return np.matmul(self._Zt, A.conj()).conj()

    def ue_factor(self, k: int, grid=None, offset: float = 0.0) -> np.ndarray:
        """``a_ue(x)^H f_k`` for every grid point, shape (P, G, Q)."""
        f = self.F[:, :, k, :]
        if grid is None:
            return dft_project(f, offset)
        A = steering_matrix(self.n_ant_ue, grid)
        return np.matmul(f, A.conj())

    @staticmethod
    def atoms(bs: np.ndarray, ue: np.ndarray) -> np.ndarray:
        """Explicit columns for all grid pairs, shape (P, G * N_rf, Q_bs * Q_ue)."""
        P, G, R, Qb = bs.shape
        cols = np.einsum("ptu,ptrb->ptrub", ue, bs)
        return cols.reshape(P, G * R, ue.shape[-1] * Qb)

    @staticmethod
    def correlate(b: np.ndarray, bs: np.ndarray, ue: np.ndarray):
        """Joint correlation of residues with column-normalized atoms.

        ``b`` has shape (P, G * N_rf).  Returns ``(score, corr, norms)`` where
        ``score[q_bs, q_ue] = sum_p |<atom, b_p>|^2 / ||atom||^2`` and
        ``corr``/``norms`` are the per-subcarrier inner products and column
        norms, each of shape (P, Q_bs, Q_ue).
        """
        P, G, R, Qb = bs.shape
        b = b.reshape(P, G, 1, R)
        v = np.matmul(b, bs.conj())[:, :, 0, :]                    # (P, G, Q_bs)
        corr = np.matmul(np.swapaxes(v, 1, 2), ue.conj())          # (P, Q_bs, Q_ue)
        bs_energy = np.sum(bs.real ** 2 + bs.imag ** 2, axis=2)    # (P, G, Q_bs)
        ue_energy = ue.real ** 2 + ue.imag ** 2
        norms = np.sqrt(np.matmul(np.swapaxes(bs_energy, 1, 2), ue_energy))
        score = np.sum((corr.real ** 2 + corr.imag ** 2) / norms ** 2, axis=0)
        return score, corr, norms

    def full_matrix(self, p: int) -> np.ndarray:
        """Aggregate measurement matrix of subcarrier ``p`` (0-based), all users."""
        bs = self.bs_factor()[p:p + 1]
        blocks = [self.atoms(bs, self.ue_factor(k)[p:p + 1])[0] for k in range(self.n_users)]
        return np.concatenate(blocks, axis=1)


def kron_measurement_matrix(pilots: PilotBlock, p: int) -> np.ndarray:
    """Aggregate measurement matrix of subcarrier ``p`` built literally from Kronecker products.

    Row block t is ``(blockdiag(A_ue^H) f_bar)^T kron Z^H A_bs``.  Kept
    independent of :class:`SensingOperator` so each can check the other.
    """
    Z = pilots.combiners()[p]         # (G, N_bs, N_rf)
    F = pilots.transmit_pilots()[p]   # (G, K, N_ue)
    A_bs = canonical_dictionary(Z.shape[1]).columns
    A_ue = canonical_dictionary(F.shape[2]).columns
    rows = []
    for t in range(Z.shape[0]):
        ue_part = np.concatenate([A_ue.conj().T @ F[t, k] for k in range(F.shape[1])])
        rows.append(np.kron(ue_part[None, :], Z[t].conj().T @ A_bs))
    return np.vstack(rows)


def stacked_angle_coefficients(chan: ChannelRealization) -> np.ndarray:
    """Per-subcarrier stacked angle-domain vectors h_bar_p, shape (P, K * N_bs * N_ue)."""
    K, P = chan.freq_channels.shape[:2]
    return np.stack([
        np.concatenate([vec(angle_coefficients(chan.freq_channels[k, p])) for k in range(K)])
        for p in range(P)
    ])


def direct_received(pilots: PilotBlock, chan: ChannelRealization) -> np.ndarray:
    """Noise-free received pilots evaluated straight from the channel matrices, shape (P, G * N_rf)."""
    Z = pilots.combiners()
    F = pilots.transmit_pilots()
    # sum_k H_pk f_pk^(t), then apply Z^H
    y = np.einsum("kpnu,ptku->ptn", chan.freq_channels, F)
    r = np.einsum("ptnr,ptn->ptr", Z.conj(), y)
    return r.reshape(r.shape[0], -1)


@dataclass
class MeasurementSet:
    r_bar: np.ndarray          # (P, G * N_rf_bs)
    pilots: PilotBlock
    noise_var: float
    snr_db_realized: float
    clean: np.ndarray | None = None   # pre-noise signal, kept for diagnostics
    meta: dict = field(default_factory=dict)

    @property
    def n_subcarriers(self) -> int:
        return self.r_bar.shape[0]

    def psi_bar(self, p: int) -> np.ndarray:
        return SensingOperator(self.pilots).full_matrix(p)


# above this many entries per subcarrier the explicit Kronecker check is skipped
KRON_CHECK_LIMIT = 2_000_000


def assemble_measurement(pilots: PilotBlock, chan: ChannelRealization, cfg: SystemConfig,
                         rng: np.random.Generator | None, check: bool | None = None) -> MeasurementSet:
    """Received pilots on every subcarrier plus calibrated AWGN.

    The noise variance is set per realization so that the average (over
    subcarriers) signal energy divided by the expected noise energy equals
    ``cfg.snr_db``.  With ``check`` the signal is also evaluated through the
    explicit Kronecker measurement matrices and the two routes must agree.
    """
    K, P, n_bs, n_ue = chan.freq_channels.shape
    expected = (cfg.n_users, cfg.n_subcarriers, cfg.n_ant_bs, cfg.n_ant_ue)
    if (K, P, n_bs, n_ue) != expected:
        raise ValueError(f"channel shape {(K, P, n_bs, n_ue)} inconsistent with config {expected}")
    if pilots.z_rf.shape != (cfg.n_symbols, cfg.n_ant_bs, cfg.n_rf_bs) or pilots.n_users != K \
            or pilots.n_subcarriers != P:
        raise ValueError("pilot block inconsistent with config")
    if not np.all(np.isfinite(chan.freq_channels)):
        raise ValueError("channel contains non-finite entries")

    clean = direct_received(pilots, chan)

    if check is None:
        check = cfg.n_measurements * K * n_bs * n_ue <= KRON_CHECK_LIMIT
    if check:
        h_bar = stacked_angle_coefficients(chan)
        scale = max(np.linalg.norm(clean), 1e-300)
        for p in range(P):
            via_kron = kron_measurement_matrix(pilots, p) @ h_bar[p]
            err = np.linalg.norm(via_kron - clean[p])
            if err > 1e-10 * scale:
                raise AssertionError(f"measurement routes disagree on subcarrier {p}: error {err:.3e}")

    signal_energy = float(np.mean(np.sum(np.abs(clean) ** 2, axis=1)))
    n_rows = clean.shape[1]
    if np.isinf(cfg.snr_db) and cfg.snr_db > 0 or signal_energy == 0.0 or rng is None:
        noise_var = 0.0
    else:
        noise_var = signal_energy / n_rows / 10.0 ** (cfg.snr_db / 10.0)

    if noise_var > 0:
        noise = (rng.standard_normal(clean.shape) + 1j * rng.standard_normal(clean.shape)) * np.sqrt(noise_var / 2)
        noise_energy = float(np.mean(np.sum(np.abs(noise) ** 2, axis=1)))
        realized = 10 * np.log10(signal_energy / noise_energy)
    else:
        noise = np.zeros_like(clean)
        realized = float("inf")
    return MeasurementSet(clean + noise, pilots, noise_var, realized, clean=clean)


def normalize_columns(matrix: np.ndarray):
    """Scale each column to unit Euclidean norm; returns ``(normalized, norms)``."""
    matrix = np.asarray(matrix)
    norms = np.linalg.norm(matrix, axis=0)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ValueError(f"column {int(zero[0])} has zero norm")
    return matrix / norms, norms


def save_measurement(path, meas: MeasurementSet, cfg: SystemConfig) -> tuple[Path, Path]:
    """Write ``<path>.npz`` (tensors) and ``<path>.json`` (shapes, seeds, SNR, config)."""
    path = Path(path)
    npz_path, json_path = path.with_suffix(".npz"), path.with_suffix(".json")
    arrays = {"r_bar": meas.r_bar, "z_rf": meas.pilots.z_rf, "z_bb": meas.pilots.z_bb,
              "f_rf": meas.pilots.f_rf, "s_eff": meas.pilots.s_eff}
    np.savez(npz_path, **arrays)
    sidecar = {
        "schema": MEASUREMENT_SCHEMA,
        "tensors": npz_path.name,
        "shapes": {name: list(a.shape) for name, a in arrays.items()},
        "noise_var": meas.noise_var,
        "snr_db_target": cfg.snr_db,
        "snr_db_realized": meas.snr_db_realized,
        "seeds": meas.meta.get("seeds", {}),
        "config_hash": cfg.config_hash(),
        "config": cfg.to_dict(),
    }
    json_path.write_text(json.dumps(sidecar, indent=1))
    return npz_path, json_path


def load_measurement(path) -> tuple[MeasurementSet, SystemConfig]:
    path = Path(path)
    json_path = path.with_suffix(".json")
    sidecar = json.loads(json_path.read_text())
    if sidecar.get("schema") != MEASUREMENT_SCHEMA:
        raise ValueError(f"unsupported measurement schema {sidecar.get('schema')!r}")
    cfg = SystemConfig(**sidecar["config"])
    with np.load(json_path.parent / sidecar["tensors"]) as data:
        pilots = PilotBlock(data["z_rf"], data["z_bb"], data["f_rf"], data["s_eff"])
        r_bar = data["r_bar"]
    meas = MeasurementSet(r_bar, pilots, sidecar["noise_var"], sidecar["snr_db_realized"],
                          meta={"seeds": sidecar.get("seeds", {})})
    return meas, cfg
