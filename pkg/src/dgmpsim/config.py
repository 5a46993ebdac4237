"""System configuration: dataclass, validation, presets and the flat key=value file format.

Config files are INI-style with a single ``[system]`` section.  Keys carry
their units in the name (``tau_max_ns``, ``sample_rate_ghz``) so experiment
records stay greppable::

    [system]
    n_ant_bs = 128
    tau_max_ns = 100
    snr_db = 0
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path


class ConfigError(ValueError):
    """Raised for unparsable config files and violated parameter constraints."""


@dataclass(frozen=True)
class SystemConfig:
    n_ant_bs: int = 128
    n_rf_bs: int = 4
    n_ant_ue: int = 32
    n_rf_ue: int = 1
    n_users: int = 4
    n_subcarriers: int = 32
    cp_len: int = 25
    n_symbols: int = 20
    carrier_freq: float = 30e9
    sample_rate: float = 0.25e9
    max_delay: float = 100e-9
    antenna_spacing_ratio: float = 0.5
    k_factor_db: float = 20.0
    n_paths: int = 4
    refine_factor: int = 10
    epsilon: float = 1e-3
    snr_db: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        validate(self)

    @property
    def k_factor(self) -> float:
        return 10.0 ** (self.k_factor_db / 10.0)

    @property
    def block_size(self) -> int:
        """Columns per user in the aggregate measurement matrix."""
        return self.n_ant_bs * self.n_ant_ue

    @property
    def n_measurements(self) -> int:
        """Rows of the aggregate measurement matrix of one subcarrier."""
        return self.n_symbols * self.n_rf_bs

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def validate(cfg: SystemConfig) -> None:
    positive = ["n_ant_bs", "n_rf_bs", "n_ant_ue", "n_rf_ue", "n_users",
                "n_subcarriers", "cp_len", "n_symbols", "n_paths", "refine_factor"]
    for name in positive:
        value = getattr(cfg, name)
        if int(value) != value or value < 1:
            raise ConfigError(f"{name} must be a positive integer, got {value!r}")
    if cfg.n_rf_bs > cfg.n_ant_bs:
        raise ConfigError("constraint violated: n_rf_bs <= n_ant_bs")
    if cfg.n_rf_ue > cfg.n_ant_ue:
        raise ConfigError("constraint violated: n_rf_ue <= n_ant_ue")
    if cfg.sample_rate <= 0 or cfg.carrier_freq <= 0:
        raise ConfigError("sample_rate and carrier_freq must be positive")
    if cfg.max_delay < 0:
        raise ConfigError("max_delay must be non-negative")
    if cfg.antenna_spacing_ratio <= 0:
        raise ConfigError("antenna_spacing_ratio must be positive")
    if not cfg.epsilon > 0:
        raise ConfigError("epsilon must be positive")
    # small tolerance so tau_max * f_s = 25.000000000000004 still asks for 25
    min_cp = math.ceil(cfg.max_delay * cfg.sample_rate - 1e-9)
    if cfg.cp_len < min_cp:
        raise ConfigError(
            f"constraint violated: L_CP >= ceil(tau_max * f_s) = {min_cp}, got cp_len={cfg.cp_len}")
    if not cfg.n_subcarriers > cfg.cp_len:
        raise ConfigError(
            f"constraint violated: P > L_CP (n_subcarriers={cfg.n_subcarriers}, cp_len={cfg.cp_len})")


# file key -> (dataclass field, scale to SI, type)
_FILE_KEYS = {
    "n_ant_bs": ("n_ant_bs", 1, int),
    "n_rf_bs": ("n_rf_bs", 1, int),
    "n_ant_ue": ("n_ant_ue", 1, int),
    "n_rf_ue": ("n_rf_ue", 1, int),
    "n_users": ("n_users", 1, int),
    "n_subcarriers": ("n_subcarriers", 1, int),
    "cp_len": ("cp_len", 1, int),
    "n_symbols": ("n_symbols", 1, int),
    "carrier_freq_ghz": ("carrier_freq", 1e9, float),
    "sample_rate_ghz": ("sample_rate", 1e9, float),
    "tau_max_ns": ("max_delay", 1e-9, float),
    "antenna_spacing_wavelengths": ("antenna_spacing_ratio", 1, float),
    "k_factor_db": ("k_factor_db", 1, float),
    "n_paths": ("n_paths", 1, int),
    "refine_factor": ("refine_factor", 1, int),
    "epsilon": ("epsilon", 1, float),
    "snr_db": ("snr_db", 1, float),
    "rng_seed": ("rng_seed", 1, int),
}


def parse_config(text: str, source: str = "<string>") -> SystemConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {source}: {exc}") from exc
    if not parser.has_section("system"):
        raise ConfigError(f"{source}: missing [system] section")

    values = {}
    for key, raw in parser.items("system"):
        if key not in _FILE_KEYS:
            raise ConfigError(f"{source}: unknown key {key!r}")
        name, scale, kind = _FILE_KEYS[key]
        try:
            number = float(raw)
        except ValueError:
            raise ConfigError(f"{source}: key {key!r} is not a number: {raw!r}") from None
        if kind is int:
            if number != int(number):
                raise ConfigError(f"{source}: key {key!r} must be an integer, got {raw!r}")
            values[name] = int(number)
        else:
            values[name] = number * scale
    if "cp_len" not in values:
        # derived from the delay spread when not pinned explicitly
        tau = values.get("max_delay", SystemConfig.max_delay)
        fs = values.get("sample_rate", SystemConfig.sample_rate)
        values["cp_len"] = max(1, math.ceil(tau * fs - 1e-9))
    return SystemConfig(**values)


def load_config(path) -> SystemConfig:
    path = Path(path)
    return parse_config(path.read_text(), source=str(path))


def dump_config(cfg: SystemConfig) -> str:
    lines = ["[system]"]
    for key, (name, scale, kind) in _FILE_KEYS.items():
        value = getattr(cfg, name)
        if kind is int:
            lines.append(f"{key} = {value}")
        else:
            lines.append(f"{key} = {value / scale!r}")
    return "\n".join(lines) + "\n"


def bundled_config(name: str = "paper") -> SystemConfig:
    """Load one of the configs shipped with the package (``paper`` or ``desk``)."""
    text = resources.files("dgmpsim").joinpath("configs").joinpath(f"{name}.ini").read_text()
    return parse_config(text, source=f"bundled:{name}.ini")


def paper_config(**changes) -> SystemConfig:
    return bundled_config("paper").replace(**changes)


def desk_config(**changes) -> SystemConfig:
    return bundled_config("desk").replace(**changes)
