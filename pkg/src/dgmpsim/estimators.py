"""Distributed grid matching pursuit (DGMP) and the fixed-grid / oracle reference estimators.

All estimators work on column-normalized measurement atoms and report gains
in physical channel units: a normalized atom ``psi / ||psi||`` fitted with
coefficient ``c`` corresponds to the path term ``(c / ||psi||) a_bs a_ue^H``
because ``psi`` is exactly the measurement of ``a_bs a_ue^H``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelRealization
from .config import SystemConfig
from .mimo import steering_vector, wrap_freq
from .pilots import MeasurementSet, PilotBlock, SensingOperator

ESTIMATE_SCHEMA = "dgmpsim.estimate/1"
PINV_RCOND = 1e-10
MAX_INNER_ITERATIONS = 50
REFIT_PASSES = 5


@dataclass
class PathEstimate:
    aoa_freq: float
    aod_freq: float
    gains: np.ndarray  # (P,) complex, physical units


@dataclass
class EstimateResult:
    scheme: str
    paths: list[list[PathEstimate]]  # per user, in selection order
    n_subcarriers: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_users(self) -> int:
        return len(self.paths)

    def los(self, k: int) -> PathEstimate | None:
        """Strongest estimated component of user ``k`` (the LOS estimate)."""
        if not self.paths[k]:
            return None
        energies = [float(np.sum(np.abs(path.gains) ** 2)) for path in self.paths[k]]
        return self.paths[k][int(np.argmax(energies))]

    @property
    def los_aoa_freq(self) -> np.ndarray:
        return np.array([np.nan if self.los(k) is None else self.los(k).aoa_freq for k in range(self.n_users)])

    @property
    def los_aod_freq(self) -> np.ndarray:
        return np.array([np.nan if self.los(k) is None else self.los(k).aod_freq for k in range(self.n_users)])

    @property
    def gains(self) -> np.ndarray:
        """LOS gains, shape (K, P); zeros for users without an estimate."""
        out = np.zeros((self.n_users, self.n_subcarriers), dtype=complex)
        for k in range(self.n_users):
            if self.los(k) is not None:
                out[k] = self.los(k).gains
        return out

    def los_steering_bs(self, k: int, n_ant_bs: int) -> np.ndarray:
        return steering_vector(n_ant_bs, self.los(k).aoa_freq)

    def los_steering_ue(self, k: int, n_ant_ue: int) -> np.ndarray:
        return steering_vector(n_ant_ue, self.los(k).aod_freq)


def reconstruct_channel(result: EstimateResult, cfg: SystemConfig) -> np.ndarray:
    """Sum of rank-1 path terms, shape (K, P, N_bs, N_ue)."""
    H = np.zeros((result.n_users, result.n_subcarriers, cfg.n_ant_bs, cfg.n_ant_ue), dtype=complex)
    for k, paths in enumerate(result.paths):
        for path in paths:
            outer = np.outer(steering_vector(cfg.n_ant_bs, path.aoa_freq),
                             steering_vector(cfg.n_ant_ue, path.aod_freq).conj())
            H[k] += path.gains[:, None, None] * outer[None]
    return H


def _point_atom(op: SensingOperator, k: int, aoa: float, aod: float) -> np.ndarray:
    """Raw measurement column of one continuous angle pair, shape (P, M)."""
    return op.atoms(op.bs_factor(grid=[aoa]), op.ue_factor(k, grid=[aod]))[:, :, 0]


class _LeastSquares:
    """Per-subcarrier LS refit of the selected normalized atoms."""

    def __init__(self, r_bar: np.ndarray):
        self.r_bar = r_bar
        self.columns: list[np.ndarray] = []   # each (P, M), unit norm per p
        self.norms: list[np.ndarray] = []     # each (P,)
        self.coef = np.zeros((r_bar.shape[0], 0), dtype=complex)

    def add(self, raw: np.ndarray) -> None:
        norms = np.linalg.norm(raw, axis=1)
        if np.any(norms == 0):
            raise ValueError("selected atom has a zero column")
        self.columns.append(raw / norms[:, None])
        self.norms.append(norms)

    def fit(self) -> np.ndarray:
        """Refit all coefficients and return the residues ``b_p``."""
        P = self.r_bar.shape[0]
        if not self.columns:
            return self.r_bar.copy()
        Xi = np.stack(self.columns, axis=-1)  # (P, M, S)
        coef = np.empty((P, Xi.shape[-1]), dtype=complex)
        for p in range(P):
            coef[p] = np.linalg.pinv(Xi[p], rcond=PINV_RCOND) @ self.r_bar[p]
        self.coef = coef
        return self.r_bar - np.einsum("pms,ps->pm", Xi, coef)

    def replace(self, s: int, raw: np.ndarray) -> None:
        norms = np.linalg.norm(raw, axis=1)
        self.columns[s] = raw / norms[:, None]
        self.norms[s] = norms

    def basis_without(self, s: int) -> np.ndarray | None:
        """Orthonormal basis (P, M, S - 1) of every selected column except ``s``."""
        rest = [c for i, c in enumerate(self.columns) if i != s]
        if not rest:
            return None
        Q, R = np.linalg.qr(np.stack(rest, axis=-1))
        keep = np.abs(np.diagonal(R, axis1=1, axis2=2)) > PINV_RCOND
        return Q * keep[:, None, :]

    def contribution(self, s: int) -> np.ndarray:
        return self.columns[s] * self.coef[:, s][:, None]

    def physical_gains(self, s: int) -> np.ndarray:
        return self.coef[:, s] / self.norms[s]


def _flat_argmax(score: np.ndarray) -> tuple[int, float]:
    """Argmax over the column-major flattening (lowest index wins ties)."""
    flat = score.reshape(-1, order="F")
    idx = int(np.argmax(flat))
    return idx, float(flat[idx])


def _score(op: SensingOperator, b: np.ndarray, bs: np.ndarray, ue: np.ndarray, others: np.ndarray | None):
    """Joint correlation score; with ``others`` (orthonormal basis per subcarrier, shape (P, M, S))
    both the residue and the atoms are taken orthogonal to that span first."""
    if others is None:
        return op.correlate(b, bs, ue)[0]
    _, corr, norms = op.correlate(b, bs, ue)
    energy = norms ** 2
    for i in range(others.shape[-1]):
        leak = op.correlate(others[:, :, i], bs, ue)[1]
        energy = energy - (leak.real ** 2 + leak.imag ** 2)
    floor = 1e-12 * norms ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(energy > floor, (corr.real ** 2 + corr.imag ** 2) / energy, 0.0)
    return ratio.sum(axis=0)


def inner_refine(b: np.ndarray, k: int, op: SensingOperator, cfg: SystemConfig,
                 max_iter: int = MAX_INNER_ITERATIONS,
                 others: np.ndarray | None = None) -> tuple[float, float, float, dict]:
    """Grid matching refinement of one user's angle pair.

    Each pass takes the best point of the (shifted) full dictionary, searches a
    local grid of ``2J - 1`` points per dimension spaced ``1 / (2 J N)``
    around it, and shifts the whole dictionary so that it passes through the
    best local point.  Stops once the best full-dictionary correlation
    changes by less than ``epsilon``.

    ``others`` optionally holds an orthonormal basis of atoms to project out
    (used when re-refining one user while the others stay fitted).

    Returns ``(aoa_freq, aod_freq, beta, info)``.
    """
    J = cfg.refine_factor
    n_bs, n_ue = op.n_ant_bs, op.n_ant_ue
    steps = np.arange(-(J - 1), J) / (2 * J)
    off_bs = off_ue = 0.0
    bs_dict, ue_dict = op.bs_factor(), op.ue_factor(k)
    beta = 0.0
    betas, offsets = [], []
    converged = False
    aoa = aod = 0.0
    for it in range(1, max_iter + 1):
        score = _score(op, b, bs_dict, ue_dict, others)
        rho, value = _flat_argmax(score)
        beta_last, beta = beta, value
        betas.append(beta)
        n_ue_idx, n_bs_idx = divmod(rho, n_bs)

        center_bs, center_ue = n_bs_idx + off_bs, n_ue_idx + off_ue
        local_bs = op.bs_factor(grid=(center_bs + steps) / n_bs)
        local_ue = op.ue_factor(k, grid=(center_ue + steps) / n_ue)
        local = _score(op, b, local_bs, local_ue, others)
        eta, _ = _flat_argmax(local)
        m_ue, m_bs = divmod(eta, 2 * J - 1)
        offsets.append((m_bs - (J - 1), m_ue - (J - 1)))

        aoa = float(wrap_freq((center_bs + steps[m_bs]) / n_bs))
        aod = float(wrap_freq((center_ue + steps[m_ue]) / n_ue))
        off_bs = off_bs + steps[m_bs]
        off_ue = off_ue + steps[m_ue]
        off_bs -= round(off_bs)
        off_ue -= round(off_ue)
        # beta_last starts at +inf, so the first pass never satisfies the test
        if it > 1 and abs(beta_last - beta) < cfg.epsilon:
            converged = True
            break
        bs_dict, ue_dict = op.bs_factor(offset=off_bs), op.ue_factor(k, offset=off_ue)

    info = {"iterations": it, "converged": converged, "beta_history": betas,
            "local_offsets": offsets}
    return aoa, aod, beta, info


def dgmp_estimate(meas: MeasurementSet, pilots: PilotBlock, cfg: SystemConfig,
                  max_inner: int = MAX_INNER_ITERATIONS, refit_passes: int = REFIT_PASSES) -> EstimateResult:
    """Estimate every user's LOS angle pair and per-subcarrier gain with DGMP.

    After the K outer iterations, up to ``refit_passes`` cyclic passes re-run
    the grid refinement of each selected user against the measurement with
    the other users' current atoms projected out (atoms are scored after the
    same projection).  Angles refined while other users were still in the
    residue are biased by their interference; a pass that changes no angle
    ends the stage.  ``refit_passes=0`` gives the plain outer/inner loops.
    """
    if cfg.refine_factor < 1 or not cfg.epsilon > 0:
        raise ValueError("refine_factor must be >= 1 and epsilon > 0")
    op = SensingOperator(pilots)
    K = op.n_users
    if meas.r_bar.shape != (op.n_subcarriers, op.n_rows):
        raise ValueError(f"measurement shape {meas.r_bar.shape} does not match pilots")

    ls = _LeastSquares(meas.r_bar)
    b = meas.r_bar.copy()
    bs_full = op.bs_factor()
    chosen: list[int] = []
    angles: list[tuple[float, float]] = []
    diag = {"selection_order": chosen, "inner_iterations": [], "final_beta": [],
            "converged": [], "residual_energy": [float(np.sum(np.abs(b) ** 2))]}

    for _ in range(K):
        best_k, best_val = -1, -np.inf
        for k in range(K):
            if k in chosen:
                continue
            _, value = _flat_argmax(op.correlate(b, bs_full, op.ue_factor(k))[0])
            if value > best_val:
                best_k, best_val = k, value
        chosen.append(best_k)

        aoa, aod, beta, info = inner_refine(b, best_k, op, cfg, max_iter=max_inner)
        angles.append((aoa, aod))
        diag["inner_iterations"].append(info["iterations"])
        diag["final_beta"].append(beta)
        diag["converged"].append(info["converged"])

        ls.add(_point_atom(op, best_k, aoa, aod))
        b = ls.fit()
        diag["residual_energy"].append(float(np.sum(np.abs(b) ** 2)))

    passes = 0
    for _ in range(refit_passes):
        passes += 1
        changed = False
        for s, k in enumerate(chosen):
            others = ls.basis_without(s)
            partial = b + ls.contribution(s)
            if others is not None:
                partial = partial - np.einsum("pms,ps->pm", others,
                                              np.einsum("pms,pm->ps", others.conj(), partial))
            aoa, aod, beta, info = inner_refine(partial, k, op, cfg, max_iter=max_inner, others=others)
            diag["final_beta"][s] = beta
            if (aoa, aod) != angles[s]:
                changed = True
                angles[s] = (aoa, aod)
                ls.replace(s, _point_atom(op, k, aoa, aod))
                b = ls.fit()
        if not changed:
            break
    diag["refit_passes"] = passes

    paths: list[list[PathEstimate]] = [[] for _ in range(K)]
    for s, k in enumerate(chosen):
        paths[k].append(PathEstimate(angles[s][0], angles[s][1], ls.physical_gains(s)))
    diag["residues"] = b
    return EstimateResult("dgmp", paths, op.n_subcarriers, diag)


def _grid_freqs(rho_local: int, n_bs: int, n_ue: int) -> tuple[float, float]:
    q_ue, q_bs = divmod(rho_local, n_bs)
    return q_bs / n_bs, q_ue / n_ue


def somp_baseline(meas: MeasurementSet, cfg: SystemConfig, n_atoms: int) -> EstimateResult:
    """Simultaneous matching pursuit over all users' canonical grids, no refinement."""
    op = SensingOperator(meas.pilots)
    K, block = op.n_users, op.n_ant_bs * op.n_ant_ue
    if not 0 <= n_atoms <= K * block:
        raise ValueError(f"n_atoms must lie in [0, {K * block}]")
    bs_full = op.bs_factor()
    ue_full = [op.ue_factor(k) for k in range(K)]
    ls = _LeastSquares(meas.r_bar)
    b = meas.r_bar.copy()
    selected: list[int] = []
    for _ in range(n_atoms):
        scores = np.concatenate([op.correlate(b, bs_full, ue_full[k])[0].reshape(-1, order="F")
                                 for k in range(K)])
        scores[selected] = -np.inf
        rho = int(np.argmax(scores))
        selected.append(rho)
        k, local = divmod(rho, block)
        aoa, aod = _grid_freqs(local, op.n_ant_bs, op.n_ant_ue)
        ls.add(_point_atom(op, k, aoa, aod))
        b = ls.fit()

    paths: list[list[PathEstimate]] = [[] for _ in range(K)]
    for s, rho in enumerate(selected):
        k, local = divmod(rho, block)
        aoa, aod = _grid_freqs(local, op.n_ant_bs, op.n_ant_ue)
        paths[k].append(PathEstimate(aoa, aod, ls.physical_gains(s)))
    return EstimateResult("somp", paths, op.n_subcarriers, {"selected": selected, "residues": b})


def omp_per_subcarrier_baseline(meas: MeasurementSet, cfg: SystemConfig, n_atoms: int) -> EstimateResult:
    """Independent matching pursuit on every subcarrier; supports may differ across p."""
    op = SensingOperator(meas.pilots)
    K, P, block = op.n_users, op.n_subcarriers, op.n_ant_bs * op.n_ant_ue
    if not 0 <= n_atoms <= K * block:
        raise ValueError(f"n_atoms must lie in [0, {K * block}]")
    bs_full = op.bs_factor()
    ue_full = [op.ue_factor(k) for k in range(K)]
    gains: dict[int, np.ndarray] = {}   # column index -> (P,) physical gains
    supports = []
    for p in range(P):
        sl = slice(p, p + 1)
        ls = _LeastSquares(meas.r_bar[sl])
        b = meas.r_bar[sl].copy()
        selected: list[int] = []
        for _ in range(n_atoms):
            scores = np.concatenate([op.correlate(b, bs_full[sl], ue_full[k][sl])[0].reshape(-1, order="F")
                                     for k in range(K)])
            scores[selected] = -np.inf
            rho = int(np.argmax(scores))
            selected.append(rho)
            k, local = divmod(rho, block)
            aoa, aod = _grid_freqs(local, op.n_ant_bs, op.n_ant_ue)
            ls.add(_point_atom(op, k, aoa, aod)[sl])
            b = ls.fit()
        for s, rho in enumerate(selected):
            gains.setdefault(rho, np.zeros(P, dtype=complex))[p] = ls.physical_gains(s)[0]
        supports.append(selected)

    paths: list[list[PathEstimate]] = [[] for _ in range(K)]
    for rho, g in gains.items():  # dict keeps first-selection order
        k, local = divmod(rho, block)
        aoa, aod = _grid_freqs(local, op.n_ant_bs, op.n_ant_ue)
        paths[k].append(PathEstimate(aoa, aod, g))
    return EstimateResult("omp", paths, P, {"supports": supports})


def oracle_estimate(meas: MeasurementSet, chan: ChannelRealization, cfg: SystemConfig) -> EstimateResult:
    """LS gains on atoms built from the true LOS angles (performance bound)."""
    op = SensingOperator(meas.pilots)
    ls = _LeastSquares(meas.r_bar)
    los = [chan.los_path(k) for k in range(op.n_users)]
    for k, path in enumerate(los):
        ls.add(_point_atom(op, k, path.aoa_freq, path.aod_freq))
    b = ls.fit()
    paths = [[PathEstimate(path.aoa_freq, path.aod_freq, ls.physical_gains(k))] for k, path in enumerate(los)]
    return EstimateResult("oracle", paths, op.n_subcarriers, {"residues": b})


def run_estimator(scheme: str, meas: MeasurementSet, cfg: SystemConfig,
                  chan: ChannelRealization | None = None) -> EstimateResult:
    """Dispatch by scheme id: ``dgmp``, ``somp``, ``omp``, ``oracle``.

    The fixed-grid baselines get one atom per user, matching DGMP's budget.
    """
    if scheme == "dgmp":
        return dgmp_estimate(meas, meas.pilots, cfg)
    if scheme == "somp":
        return somp_baseline(meas, cfg, cfg.n_users)
    if scheme == "omp":
        return omp_per_subcarrier_baseline(meas, cfg, cfg.n_users)
    if scheme == "oracle":
        if chan is None:
            raise ValueError("oracle scheme needs the true channel")
        return oracle_estimate(meas, chan, cfg)
    raise ValueError(f"unknown scheme {scheme!r}")


SCHEMES = ("dgmp", "somp", "omp", "oracle")


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return None  # large tensors (residues) are not exported
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, dict):
        return {key: _jsonable(v) for key, v in value.items() if not isinstance(v, np.ndarray)}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def estimate_to_dict(result: EstimateResult) -> dict:
    return {
        "schema": ESTIMATE_SCHEMA,
        "scheme": result.scheme,
        "n_subcarriers": result.n_subcarriers,
        "users": [
            [{"aoa_freq": path.aoa_freq, "aod_freq": path.aod_freq,
              "gains_re": path.gains.real.tolist(), "gains_im": path.gains.imag.tolist()}
             for path in paths]
            for paths in result.paths
        ],
        "diagnostics": _jsonable(result.diagnostics),
    }


def estimate_from_dict(data: dict) -> EstimateResult:
    if data.get("schema") != ESTIMATE_SCHEMA:
        raise ValueError(f"unsupported estimate schema {data.get('schema')!r}")
    paths = [
        [PathEstimate(p["aoa_freq"], p["aod_freq"], np.array(p["gains_re"]) + 1j * np.array(p["gains_im"]))
         for p in user]
        for user in data["users"]
    ]
    return EstimateResult(data["scheme"], paths, data["n_subcarriers"], data.get("diagnostics", {}))


def save_estimate(path, result: EstimateResult) -> None:
    with open(path, "w") as fh:
        json.dump(estimate_to_dict(result), fh, indent=1)


def load_estimate(path) -> EstimateResult:
    with open(path) as fh:
        return estimate_from_dict(json.load(fh))
