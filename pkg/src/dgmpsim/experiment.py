"""Seeded Monte-Carlo sweeps over (scheme, G, SNR) with CSV and manifest output.

Seed-derivation tree (every stream is an independent ``SeedSequence``)::

    master seed
      -> trial seed            SeedSequence([master, trial])
           -> channel          [trial_seed, 0]
           -> pilots           [trial_seed, 1, G]
           -> uplink noise     [trial_seed, 2, G, snr_key]
           -> downlink data    [trial_seed, 3, snr_key]   (bits and AWGN)

All schemes of one (trial, G, SNR) cell see the same channel, pilots and
noise, and the downlink data stream does not depend on G, so schemes can be
compared with paired differences even across training lengths.
"""

from __future__ import annotations

import csv
import io
import json
import math
import platform
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .channel import generate_channel
from .config import SystemConfig
from .estimators import SCHEMES, reconstruct_channel, run_estimator
from .evaluation import ber_16qam, nmse, spectral_efficiency
from .pilots import assemble_measurement, generate_pilots

MANIFEST_SCHEMA = "dgmpsim.manifest/1"
DEFAULT_SNR_VALUES = (0.0, 10.0, 20.0)
RECORD_COLUMNS = ("scheme", "G", "snr_db", "trial", "nmse", "se_bpcu", "ber", "seed")
SUMMARY_COLUMNS = ("scheme", "G", "snr_db", "n_trials", "n_failed", "nmse_mean", "nmse_stderr", "nmse_db",
                   "se_mean", "se_stderr", "ber_mean", "ber_stderr")

_STREAM_CHANNEL, _STREAM_PILOTS, _STREAM_NOISE, _STREAM_DATA = range(4)


@dataclass
class TrialRecord:
    scheme: str
    G: int
    snr_db: float
    trial: int
    nmse: float
    spectral_efficiency: float
    ber: float
    seed: int
    runtime: float
    error: str | None = None


def trial_seed(master_seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([int(master_seed), int(trial)]).generate_state(1, dtype=np.uint64)[0])


def snr_key(snr_db: float) -> int:
    """Non-negative integer tag of an SNR value (millidecibel resolution)."""
    if math.isinf(snr_db):
        return 0 if snr_db < 0 else 2 ** 40
    return int(round(snr_db * 1000)) + 2 ** 39


def stream(seed: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, path)]))


def default_n_bits(cfg: SystemConfig, symbols_per_stream: int = 64) -> int:
    return 4 * cfg.n_users * cfg.n_subcarriers * symbols_per_stream


def run_trial(cfg: SystemConfig, master_seed: int, trial: int, schemes, G_values, snr_values,
              n_bits: int | None = None, on_grid: bool = False,
              training_snr_db: float | None = None) -> list[TrialRecord]:
    """Every (G, SNR, scheme) cell of one trial, sharing the channel draw.

    By default the cell SNR applies to both the uplink training and the
    downlink data.  With ``training_snr_db`` the uplink is held at that value
    and the cell SNR only sets the downlink.  A failure inside one cell is recorded with NaN metrics and the error
    text instead of aborting the remaining cells.
    """
    seed = trial_seed(master_seed, trial)
    records = []
    cache = {}   # identical measurements (fixed training SNR) are estimated once
    chan = generate_channel(cfg, stream(seed, _STREAM_CHANNEL), on_grid=on_grid)
    for G in G_values:
        cfg_g = cfg.replace(n_symbols=int(G))
        pilots = generate_pilots(cfg_g, stream(seed, _STREAM_PILOTS, G))
        for snr in snr_values:
            up_snr = float(snr) if training_snr_db is None else float(training_snr_db)
            cfg_cell = cfg_g.replace(snr_db=up_snr)
            bits = n_bits or default_n_bits(cfg_cell)
            meas = None
            for scheme in schemes:
                start = time.perf_counter()
                try:
                    if (G, up_snr, scheme) not in cache:
                        if meas is None:
                            meas = assemble_measurement(pilots, chan, cfg_cell,
                                                        stream(seed, _STREAM_NOISE, G, snr_key(up_snr)), check=False)
                        result = run_estimator(scheme, meas, cfg_cell, chan)
                        cache[G, up_snr, scheme] = (result, nmse(chan.freq_channels,
                                                                 reconstruct_channel(result, cfg_cell)))
                    result, err = cache[G, up_snr, scheme]
                    se = spectral_efficiency(chan, result, cfg_cell, snr)
                    ber = ber_16qam(chan, result, cfg_cell, snr, bits, stream(seed, _STREAM_DATA, snr_key(snr)))
                    error = None
                except Exception as exc:  # keep sweeping, identify the trial
                    err = se = ber = float("nan")
                    error = f"trial {trial} G={G} snr={snr} {scheme}: {exc!r}\n{traceback.format_exc()}"
                records.append(TrialRecord(scheme, int(G), float(snr), trial, err, se, ber, seed,
                                           time.perf_counter() - start, error))
    return records


def _trial_job(args):
    cfg_dict, master_seed, trial, schemes, G_values, snr_values, n_bits, on_grid, training_snr_db = args
    return run_trial(SystemConfig(**cfg_dict), master_seed, trial, schemes, G_values, snr_values, n_bits, on_grid,
                     training_snr_db)


def run_sweep(cfg: SystemConfig, schemes, G_values, snr_values=DEFAULT_SNR_VALUES, n_trials: int = 10,
              master_seed: int | None = None, jobs: int = 1, n_bits: int | None = None,
              on_grid: bool = False, training_snr_db: float | None = None) -> list[TrialRecord]:
    """Full factorial Monte-Carlo sweep; records come back in (trial, G, SNR, scheme) order.

    The master seed defaults to ``cfg.rng_seed``.  Results do not depend on
    ``jobs`` because every trial draws from its own seed subtree.
    """
    schemes, G_values, snr_values = list(schemes), [int(g) for g in G_values], [float(s) for s in snr_values]
    if not schemes or not G_values or not snr_values:
        raise ValueError("schemes, G_values and snr_values must be nonempty")
    unknown = [s for s in schemes if s not in SCHEMES]
    if unknown:
        raise ValueError(f"unknown schemes {unknown}; choose from {list(SCHEMES)}")
    if n_trials < 1:
        raise ValueError("n_trials must be positive")
    for G in G_values:
        cfg.replace(n_symbols=G)  # validates every G up front
    master = cfg.rng_seed if master_seed is None else int(master_seed)
    jobs_args = [(cfg.to_dict(), master, t, schemes, G_values, snr_values, n_bits, on_grid, training_snr_db)
                 for t in range(n_trials)]
    if jobs <= 1:
        chunks = [_trial_job(a) for a in jobs_args]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_trial_job, jobs_args))
    return [record for chunk in chunks for record in chunk]


def _mean_stderr(values: np.ndarray) -> tuple[float, float]:
    values = values[np.isfinite(values)]
    if values.size == 0:
        return float("nan"), float("nan")
    if values.size == 1:
        return float(values[0]), float("nan")
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.size))


def aggregate(records: list[TrialRecord]) -> list[dict]:
    """Per-cell mean and standard error, ordered by first appearance of scheme, G, SNR."""
    order = {}
    for r in records:
        order.setdefault((r.scheme, r.G, r.snr_db), []).append(r)
    schemes = list(dict.fromkeys(r.scheme for r in records))
    keys = sorted(order, key=lambda key: (schemes.index(key[0]), key[1], key[2]))
    rows = []
    for key in keys:
        cell = order[key]
        nm, nm_se = _mean_stderr(np.array([r.nmse for r in cell]))
        se, se_se = _mean_stderr(np.array([r.spectral_efficiency for r in cell]))
        ber, ber_se = _mean_stderr(np.array([r.ber for r in cell]))
        rows.append({
            "scheme": key[0], "G": key[1], "snr_db": key[2], "n_trials": len(cell),
            "n_failed": sum(r.error is not None for r in cell),
            "nmse_mean": nm, "nmse_stderr": nm_se,
            "nmse_db": float(10 * np.log10(nm)) if nm > 0 else float("-inf"),
            "se_mean": se, "se_stderr": se_se, "ber_mean": ber, "ber_stderr": ber_se,
        })
    return rows


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def records_csv(records: list[TrialRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RECORD_COLUMNS)
    for r in records:
        writer.writerow([_fmt(v) for v in (r.scheme, r.G, r.snr_db, r.trial, r.nmse,
                                            r.spectral_efficiency, r.ber, r.seed)])
    return buf.getvalue()


def summary_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in SUMMARY_COLUMNS])
    return buf.getvalue()


def read_summary_csv(path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            parsed = {}
            for key, value in row.items():
                if key == "scheme":
                    parsed[key] = value
                elif key in ("G", "n_trials", "n_failed"):
                    parsed[key] = int(value)
                else:
                    parsed[key] = float(value)
            rows.append(parsed)
    return rows


@dataclass
class RunManifest:
    config: dict
    config_hash: str
    master_seed: int
    schemes: list
    G_values: list
    snr_values: list
    n_trials: int
    n_bits: int | None
    on_grid: bool
    training_snr_db: float | None
    version: str
    started: str
    finished: str
    wall_time_s: float
    outputs: dict
    failures: list
    schema: str = MANIFEST_SCHEMA

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, default=str)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        data = json.loads(text)
        if data.get("schema") != MANIFEST_SCHEMA:
            raise ValueError(f"unsupported manifest schema {data.get('schema')!r}")
        return cls(**data)


def version_string() -> str:
    return f"dgmpsim {__version__}; numpy {np.__version__}; python {platform.python_version()}"


def write_sweep(out_dir, cfg: SystemConfig, schemes, G_values, snr_values, n_trials: int,
                master_seed: int | None = None, jobs: int = 1, n_bits: int | None = None,
                on_grid: bool = False, training_snr_db: float | None = None) -> RunManifest:
    """Run a sweep and write ``trials.csv``, ``summary.csv`` and ``manifest.json`` to ``out_dir``.

    The two CSV files depend only on (config, seed, sweep axes); timings live in
    the manifest alone so reruns are byte-identical.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    master = cfg.rng_seed if master_seed is None else int(master_seed)
    started = datetime.now(timezone.utc).isoformat()
    t0 = time.perf_counter()
    records = run_sweep(cfg, schemes, G_values, snr_values, n_trials, master, jobs, n_bits, on_grid, training_snr_db)
    wall = time.perf_counter() - t0
    trials_path, summary_path, manifest_path = out / "trials.csv", out / "summary.csv", out / "manifest.json"
    trials_path.write_text(records_csv(records))
    summary_path.write_text(summary_csv(aggregate(records)))
    manifest = RunManifest(
        config=cfg.to_dict(), config_hash=cfg.config_hash(), master_seed=master, schemes=list(schemes),
        G_values=[int(g) for g in G_values], snr_values=[float(s) for s in snr_values], n_trials=n_trials,
        n_bits=n_bits, on_grid=on_grid, training_snr_db=training_snr_db, version=version_string(), started=started,
        finished=datetime.now(timezone.utc).isoformat(), wall_time_s=wall,
        outputs={"trials": trials_path.name, "summary": summary_path.name},
        failures=[r.error.splitlines()[0] for r in records if r.error],
    )
    manifest_path.write_text(manifest.to_json())
    return manifest


def rerun_manifest(manifest: RunManifest, out_dir, jobs: int = 1) -> RunManifest:
    """Reproduce a recorded sweep into another directory."""
    cfg = SystemConfig(**manifest.config)
    if cfg.config_hash() != manifest.config_hash:
        raise ValueError("manifest config hash mismatch")
    return write_sweep(out_dir, cfg, manifest.schemes, manifest.G_values, manifest.snr_values, manifest.n_trials,
                       manifest.master_seed, jobs, manifest.n_bits, manifest.on_grid, manifest.training_snr_db)
