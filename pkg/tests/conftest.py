import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dgmpsim.config import SystemConfig

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def small_config(**changes) -> SystemConfig:
    """Tiny system used by most unit tests (P = 4 > L_CP = 1)."""
    base = dict(n_ant_bs=16, n_rf_bs=2, n_ant_ue=8, n_rf_ue=1, n_users=2, n_subcarriers=4, cp_len=1,
                n_symbols=8, max_delay=4e-9, n_paths=1, refine_factor=10, epsilon=1e-3, snr_db=20.0)
    base.update(changes)
    return SystemConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
