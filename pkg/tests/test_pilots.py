import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from dgmpsim.channel import PathComponent, generate_channel, realization_from_paths
from dgmpsim.config import desk_config
from dgmpsim.mimo import steering_vector
from dgmpsim.pilots import (KRON_CHECK_LIMIT, MeasurementSet, SensingOperator, assemble_measurement,
                            direct_received, generate_pilots, kron_measurement_matrix, load_measurement,
                            normalize_columns, save_measurement, stacked_angle_coefficients)

from conftest import small_config

EPS = np.finfo(float).eps


def _families(pilots):
    return [pilots.z_rf, pilots.z_bb, pilots.f_rf, pilots.s_eff]


def test_pilot_shapes_and_unit_modulus(rng):
    cfg = small_config(n_rf_ue=2, n_ant_ue=8)
    pilots = generate_pilots(cfg, rng)
    assert pilots.z_rf.shape == (8, 16, 2)
    assert pilots.z_bb.shape == (8, 4, 2, 2)
    assert pilots.f_rf.shape == (8, 2, 8, 2)
    assert pilots.s_eff.shape == (8, 4, 2, 2)
    for fam in _families(pilots):
        assert np.max(np.abs(np.abs(fam) - 1.0)) <= 2 * EPS


def test_pilot_phases_uniform(rng):
    cfg = desk_config(n_symbols=800)
    pilots = generate_pilots(cfg, rng)
    phases = np.concatenate([np.mod(np.angle(f).ravel(), 2 * np.pi) for f in _families(pilots)])[:100_000]
    assert phases.size == 100_000
    result = stats.kstest(phases, stats.uniform(0, 2 * np.pi).cdf)
    # 1% critical value of the KS statistic for large n
    assert result.statistic < 1.628 / np.sqrt(phases.size)


def test_different_seeds_give_different_pilots():
    cfg = small_config()
    a = generate_pilots(cfg, np.random.default_rng(1))
    b = generate_pilots(cfg, np.random.default_rng(2))
    assert all(not np.array_equal(x, y) for x, y in zip(_families(a), _families(b)))


def test_combiners_share_rf_part_across_subcarriers(rng):
    cfg = small_config()
    pilots = generate_pilots(cfg, rng)
    Z = pilots.combiners()
    for p in range(cfg.n_subcarriers):
        for t in range(cfg.n_symbols):
            np.testing.assert_allclose(Z[p, t], pilots.z_rf[t] @ pilots.z_bb[t, p], atol=1e-13)
    F = pilots.transmit_pilots()
    np.testing.assert_allclose(F[2, 1, 0], pilots.f_rf[1, 0] @ pilots.s_eff[1, 2, 0], atol=1e-13)


def test_zero_channel_gives_zero_signal(rng):
    cfg = small_config()
    chan = realization_from_paths([[], []], cfg)
    meas = assemble_measurement(generate_pilots(cfg, rng), chan, cfg, rng)
    assert not np.any(meas.clean)
    assert meas.noise_var == 0.0


def test_two_routes_small_on_grid_example(rng):
    cfg = small_config(n_ant_bs=8, n_ant_ue=4, n_users=1, n_symbols=2, n_subcarriers=2, n_rf_bs=2)
    chan = generate_channel(cfg, rng, on_grid=True)
    pilots = generate_pilots(cfg, rng)
    direct = direct_received(pilots, chan)
    h = stacked_angle_coefficients(chan)
    for p in range(2):
        via_psi = kron_measurement_matrix(pilots, p) @ h[p]
        assert np.linalg.norm(via_psi - direct[p]) <= 1e-10 * np.linalg.norm(direct[p])


def _random_small_config(rng):
    n_bs = int(rng.integers(1, 17))
    n_ue = int(rng.integers(1, 17))
    P = int(rng.integers(2, 9))
    return small_config(n_ant_bs=n_bs, n_rf_bs=int(rng.integers(1, n_bs + 1)), n_ant_ue=n_ue,
                        n_rf_ue=int(rng.integers(1, n_ue + 1)), n_users=int(rng.integers(1, 5)),
                        n_subcarriers=P, cp_len=1, max_delay=float(rng.uniform(0, 4e-9)),
                        n_symbols=int(rng.integers(1, 9)), n_paths=int(rng.integers(1, 5)))


def test_two_routes_agree_on_random_configs():
    rng = np.random.default_rng(99)
    for _ in range(50):
        cfg = _random_small_config(rng)
        chan = generate_channel(cfg, rng, on_grid=bool(rng.integers(2)))
        pilots = generate_pilots(cfg, rng)
        # the explicit check inside assemble_measurement raises on disagreement
        meas = assemble_measurement(pilots, chan, cfg, None, check=True)
        h = stacked_angle_coefficients(chan)
        for p in range(cfg.n_subcarriers):
            assert np.linalg.norm(meas.psi_bar(p) @ h[p] - meas.clean[p]) <= 1e-10 * np.linalg.norm(meas.clean)


@given(st.integers(0, 2**32 - 1))
def test_structured_operator_matches_kronecker_matrix(seed):
    rng = np.random.default_rng(seed)
    cfg = _random_small_config(rng)
    pilots = generate_pilots(cfg, rng)
    op = SensingOperator(pilots)
    p = int(rng.integers(cfg.n_subcarriers))
    ref = kron_measurement_matrix(pilots, p)
    assert np.linalg.norm(op.full_matrix(p) - ref) <= 1e-10 * np.linalg.norm(ref)


def test_correlation_scores_match_explicit_normalized_columns(rng):
    cfg = small_config()
    pilots = generate_pilots(cfg, rng)
    op = SensingOperator(pilots)
    b = rng.standard_normal((cfg.n_subcarriers, op.n_rows)) + 1j * rng.standard_normal((cfg.n_subcarriers, op.n_rows))
    k = 1
    score = op.correlate(b, op.bs_factor(), op.ue_factor(k))[0]
    block = slice(k * cfg.block_size, (k + 1) * cfg.block_size)
    expected = sum(np.abs(normalize_columns(op.full_matrix(p)[:, block])[0].conj().T @ b[p]) ** 2
                   for p in range(cfg.n_subcarriers))
    np.testing.assert_allclose(score.reshape(-1, order="F"), expected, rtol=1e-10)


def test_fft_and_explicit_dictionary_factors_agree(rng):
    cfg = small_config()
    op = SensingOperator(generate_pilots(cfg, rng))
    off = 0.3
    grid_bs = (np.arange(cfg.n_ant_bs) + off) / cfg.n_ant_bs
    grid_ue = (np.arange(cfg.n_ant_ue) + off) / cfg.n_ant_ue
    np.testing.assert_allclose(op.bs_factor(offset=off), op.bs_factor(grid=grid_bs), atol=1e-10)
    np.testing.assert_allclose(op.ue_factor(0, offset=off), op.ue_factor(0, grid=grid_ue), atol=1e-10)


def test_measurement_matrices_differ_across_subcarriers(rng):
    cfg = small_config()
    op = SensingOperator(generate_pilots(cfg, rng))
    mats = [op.full_matrix(p) for p in range(cfg.n_subcarriers)]
    for i in range(len(mats)):
        for j in range(i + 1, len(mats)):
            assert not np.allclose(mats[i], mats[j])


def test_measurement_entries_zero_mean_with_uniform_row_variance():
    # E|a_ue^H f|^2 = N_ue and E|z^H a_bs|^2 = N_bs N_rf for unit phasors
    cfg = small_config(n_ant_bs=8, n_ant_ue=4, n_rf_bs=2, n_users=1, n_symbols=3, n_subcarriers=2)
    rng = np.random.default_rng(5)
    draws = np.stack([SensingOperator(generate_pilots(cfg, rng)).full_matrix(0) for _ in range(3000)])
    expected_var = cfg.n_ant_ue * cfg.n_ant_bs * cfg.n_rf_bs
    mean = draws.mean(axis=0)
    assert np.max(np.abs(mean)) < 6 * np.sqrt(expected_var / draws.shape[0])
    row_var = np.mean(np.abs(draws) ** 2, axis=(0, 2))
    np.testing.assert_allclose(row_var, expected_var, rtol=0.05)


def test_snr_calibration_over_noise_draws():
    cfg = desk_config(snr_db=10.0)
    rng = np.random.default_rng(8)
    chan = generate_channel(cfg, rng)
    pilots = generate_pilots(cfg, rng)
    signal, noise = [], []
    for _ in range(1000):
        meas = assemble_measurement(pilots, chan, cfg, rng, check=False)
        signal.append(np.mean(np.sum(np.abs(meas.clean) ** 2, axis=1)))
        noise.append(np.mean(np.sum(np.abs(meas.r_bar - meas.clean) ** 2, axis=1)))
    realized = 10 * np.log10(np.mean(signal) / np.mean(noise))
    assert abs(realized - 10.0) <= 0.5


def test_noise_variance_formula(rng):
    cfg = desk_config(snr_db=3.0)
    chan = generate_channel(cfg, rng)
    meas = assemble_measurement(generate_pilots(cfg, rng), chan, cfg, rng)
    energy = np.mean(np.sum(np.abs(meas.clean) ** 2, axis=1))
    assert meas.noise_var == pytest.approx(energy / cfg.n_measurements / 10 ** 0.3)


def test_infinite_snr_and_missing_rng_are_noiseless(rng):
    cfg = small_config(snr_db=float("inf"))
    chan = generate_channel(cfg, rng)
    pilots = generate_pilots(cfg, rng)
    for meas in (assemble_measurement(pilots, chan, cfg, rng), assemble_measurement(pilots, chan, cfg.replace(snr_db=0), None)):
        assert np.array_equal(meas.r_bar, meas.clean)
        assert meas.snr_db_realized == float("inf")


def test_assemble_rejects_mismatch_and_nonfinite(rng):
    cfg = small_config()
    chan = generate_channel(cfg, rng)
    pilots = generate_pilots(cfg, rng)
    with pytest.raises(ValueError, match="inconsistent"):
        assemble_measurement(pilots, chan, cfg.replace(n_ant_bs=32), rng)
    with pytest.raises(ValueError, match="pilot"):
        assemble_measurement(generate_pilots(cfg.replace(n_symbols=3), rng), chan, cfg, rng)
    chan.freq_channels[0, 0, 0, 0] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        assemble_measurement(pilots, chan, cfg, rng)


def test_kron_check_skipped_for_large_problems():
    cfg = desk_config()
    assert cfg.n_measurements * cfg.n_users * cfg.block_size <= KRON_CHECK_LIMIT


def test_normalize_columns_examples():
    out, norms = normalize_columns(np.eye(3))
    np.testing.assert_array_equal(out, np.eye(3))
    np.testing.assert_array_equal(norms, np.ones(3))
    out, norms = normalize_columns(np.array([[3.0], [4j]]))
    np.testing.assert_allclose(out[:, 0], [0.6, 0.8j])
    assert norms[0] == 5.0
    with pytest.raises(ValueError, match="column 1"):
        normalize_columns(np.array([[1.0, 0.0], [2.0, 0.0]]))


def test_measurement_export_roundtrip(tmp_path, rng):
    cfg = desk_config()
    chan = generate_channel(cfg, rng)
    meas = assemble_measurement(generate_pilots(cfg, rng), chan, cfg, rng)
    meas.meta["seeds"] = {"master": 3, "trial": 0}
    npz, sidecar = save_measurement(tmp_path / "m", meas, cfg)
    info = json.loads(sidecar.read_text())
    assert info["shapes"]["r_bar"] == [cfg.n_subcarriers, cfg.n_measurements]
    assert info["seeds"] == {"master": 3, "trial": 0}
    assert info["snr_db_target"] == cfg.snr_db
    back, back_cfg = load_measurement(npz)
    assert back_cfg == cfg
    assert isinstance(back, MeasurementSet)
    assert np.array_equal(back.r_bar, meas.r_bar)
    assert np.array_equal(back.pilots.z_bb, meas.pilots.z_bb)
    assert back.noise_var == meas.noise_var


def test_received_signal_of_single_path_matches_hand_formula(rng):
    cfg = small_config(n_users=1, n_subcarriers=4)
    path = PathComponent(0.8 + 0.1j, 1e-9, 0.21, 0.47, True)
    chan = realization_from_paths([[path]], cfg)
    pilots = generate_pilots(cfg, rng)
    r = direct_received(pilots, chan)
    p, t = 2, 5
    Z = pilots.z_rf[t] @ pilots.z_bb[t, p]
    f = pilots.f_rf[t, 0] @ pilots.s_eff[t, p, 0]
    phase = np.exp(-2j * np.pi * cfg.sample_rate * path.delay * (p + 1) / cfg.n_subcarriers)
    H = path.gain * phase * np.outer(steering_vector(16, 0.21), steering_vector(8, 0.47).conj())
    np.testing.assert_allclose(r[p, t * cfg.n_rf_bs:(t + 1) * cfg.n_rf_bs], Z.conj().T @ H @ f, atol=1e-12)
