import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dgmpsim.channel import (ChannelRealization, PathComponent, common_support, freq_response, generate_channel,
                             load_realization, realization_from_paths, save_realization, user_freq_channels)
from dgmpsim.config import desk_config, paper_config

from conftest import small_config


def test_single_path_config_gives_los_only(rng):
    cfg = small_config(n_paths=1, n_users=1)
    powers = []
    for _ in range(4000):
        chan = generate_channel(cfg, rng)
        (path,) = chan.per_user_paths[0]
        assert path.is_los
        powers.append(abs(path.gain) ** 2)
    # exponential with unit mean: stderr = 1/sqrt(4000)
    assert np.mean(powers) == pytest.approx(1.0, abs=4 / np.sqrt(4000))


def test_path_structure_invariants(rng):
    cfg = paper_config()
    chan = generate_channel(cfg, rng)
    assert chan.freq_channels.shape == (4, 32, 128, 32)
    for paths in chan.per_user_paths:
        assert len(paths) == cfg.n_paths
        assert sum(p.is_los for p in paths) == 1
        los = next(p for p in paths if p.is_los)
        assert los.delay == min(p.delay for p in paths)
        assert all(0 <= p.delay <= cfg.max_delay for p in paths)
        assert all(0 <= p.aoa_freq < 1 and 0 <= p.aod_freq < 1 for p in paths)


def test_rician_power_ratio(rng):
    # 20 dB K-factor: mean LOS power / mean summed NLOS power
    cfg = desk_config()
    los, nlos = [], []
    for _ in range(10_000):
        chan = generate_channel(cfg, rng)
        for paths in chan.per_user_paths:
            los.append(sum(abs(p.gain) ** 2 for p in paths if p.is_los))
            nlos.append(sum(abs(p.gain) ** 2 for p in paths if not p.is_los))
    ratio_db = 10 * np.log10(np.mean(los) / np.mean(nlos))
    assert abs(ratio_db - 20.0) <= 0.5


def test_on_grid_frequencies_are_integers(rng):
    cfg = desk_config()
    chan = generate_channel(cfg, rng, on_grid=True)
    for paths in chan.per_user_paths:
        for p in paths:
            assert (p.aoa_freq * cfg.n_ant_bs).is_integer()
            assert (p.aod_freq * cfg.n_ant_ue).is_integer()


def test_stored_channels_match_explicit_path_sum(rng):
    cfg = desk_config()
    chan = generate_channel(cfg, rng)
    for k, paths in enumerate(chan.per_user_paths):
        for p in range(1, cfg.n_subcarriers + 1):
            ref = freq_response(paths, p, cfg)
            assert np.linalg.norm(chan.freq_channels[k, p - 1] - ref) <= 1e-12 * np.linalg.norm(ref)


def test_zero_delay_path_is_flat_in_frequency():
    cfg = small_config()
    paths = [PathComponent(0.7 - 0.2j, 0.0, 0.31, 0.62, True)]
    H = [freq_response(paths, p, cfg) for p in range(1, cfg.n_subcarriers + 1)]
    for other in H[1:]:
        np.testing.assert_allclose(other, H[0], atol=1e-14)


def test_single_path_response_is_rank_one():
    cfg = small_config()
    paths = [PathComponent(1.3j, 2e-9, 0.137, 0.771, True)]
    s = np.linalg.svd(freq_response(paths, 3, cfg), compute_uv=False)
    assert s[1] <= 1e-10 * s[0]


def test_opposite_phase_paths_cancel():
    cfg = small_config()
    p = 3
    tau = 1e-9
    # extra delay P / (2 f_s p) adds a phase of pi on subcarrier p
    shift = cfg.n_subcarriers / (2 * cfg.sample_rate * p)
    paths = [PathComponent(0.5, tau, 0.2, 0.4, True), PathComponent(0.5, tau + shift, 0.2, 0.4)]
    assert np.max(np.abs(freq_response(paths, p, cfg))) <= 1e-12


def test_freq_response_rejects_bad_index():
    cfg = small_config()
    for p in (0, cfg.n_subcarriers + 1):
        with pytest.raises(ValueError):
            freq_response([], p, cfg)


def test_on_grid_support_identical_across_subcarriers(rng):
    cfg = desk_config()
    for _ in range(20):
        chan = generate_channel(cfg, rng, on_grid=True)
        for k in range(cfg.n_users):
            supports = common_support(chan, k, 1e-9)
            assert all(s == supports[0] for s in supports)
            assert 1 <= len(supports[0]) <= cfg.n_paths


def test_support_indices_follow_column_major_vec():
    cfg = small_config(n_users=1)
    paths = [[PathComponent(1.0, 0.0, 3 / 16, 5 / 8, True)]]
    chan = realization_from_paths(paths, cfg)
    assert common_support(chan, 0)[0] == frozenset({5 * 16 + 3})


def test_off_grid_supports_overlap(rng):
    # leakage spreads energy, yet the 95%-energy supports of different subcarriers mostly coincide
    cfg = paper_config()
    sizes = []
    for _ in range(3):
        chan = generate_channel(cfg, rng)
        for k in range(cfg.n_users):
            supports = common_support(chan, k, 0.95, mode="energy")
            sizes += [len(s) for s in supports]
            jaccard = [len(a & b) / len(a | b) for i, a in enumerate(supports) for b in supports[i + 1:]]
            assert np.mean(jaccard) >= 0.8
    assert max(sizes) > 1


def test_zero_channel_has_empty_support():
    cfg = small_config(n_users=1)
    chan = realization_from_paths([[]], cfg)
    assert not np.any(chan.freq_channels)
    assert common_support(chan, 0) == [frozenset()] * cfg.n_subcarriers


def test_power_normalization(rng):
    cfg = desk_config()
    energies = []
    for _ in range(1000):
        chan = generate_channel(cfg, rng)
        energies.append(np.mean(np.sum(np.abs(chan.freq_channels) ** 2, axis=(2, 3))))
    assert np.mean(energies) / (cfg.n_ant_bs * cfg.n_ant_ue) == pytest.approx(1.0, rel=0.10)


@given(st.integers(0, 2**63 - 1))
def test_determinism(seed):
    cfg = small_config(n_paths=3)
    a = generate_channel(cfg, np.random.default_rng(seed))
    b = generate_channel(cfg, np.random.default_rng(seed))
    assert a.per_user_paths == b.per_user_paths
    assert np.array_equal(a.freq_channels, b.freq_channels)


def test_json_roundtrip(tmp_path, rng):
    cfg = desk_config()
    chan = generate_channel(cfg, rng)
    save_realization(tmp_path / "c.json", chan, cfg)
    back, back_cfg = load_realization(tmp_path / "c.json")
    assert back_cfg == cfg
    assert back.per_user_paths == chan.per_user_paths
    assert np.array_equal(back.freq_channels, chan.freq_channels)


def test_json_rejects_tampered_config(tmp_path, rng):
    import json

    cfg = desk_config()
    save_realization(tmp_path / "c.json", generate_channel(cfg, rng), cfg)
    data = json.loads((tmp_path / "c.json").read_text())
    data["config"]["n_symbols"] = 9
    (tmp_path / "c.json").write_text(json.dumps(data))
    with pytest.raises(ValueError, match="hash"):
        load_realization(tmp_path / "c.json")


def test_user_freq_channels_empty_paths():
    cfg = small_config()
    assert user_freq_channels([], cfg).shape == (4, 16, 8)
    assert isinstance(realization_from_paths([[], []], cfg), ChannelRealization)
