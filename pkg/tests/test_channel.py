import numpy as np
import pytest
from scipy import stats

from outagealloc import channel as ch
from outagealloc.errors import ConfigError, DataFormatError


def small_cfg(**overrides):
    base = dict(n_taps=32, k=6, l=4, resource_count=4, gamma_th=0.4, seed=3)
    base.update(overrides)
    return ch.SimConfig(**base)


class TestImpulseResponse:
    def test_unit_tap_power(self):
        rng = np.random.default_rng(100)
        v = ch.init_impulse_response(1024, rng)
        mean_sq = np.mean(np.abs(v.taps) ** 2)
        assert abs(mean_sq - 1.0) < 3.0 / np.sqrt(1024)
        assert v.time_index == 0

    def test_power_of_two_required(self):
        with pytest.raises(ConfigError):
            ch.init_impulse_response(3, np.random.default_rng(0))

    def test_deterministic(self):
        a = ch.init_impulse_response(64, np.random.default_rng(5))
        b = ch.init_impulse_response(64, np.random.default_rng(5))
        assert np.array_equal(a.taps, b.taps)


class TestAdvance:
    def test_single_step_preserves_magnitude(self):
        rng = np.random.default_rng(2)
        v = ch.init_impulse_response(256, rng)
        w = ch.advance(v, 0.1, rng)
        assert np.max(np.abs(np.abs(w.taps) - np.abs(v.taps))) < 1e-12
        assert w.time_index == 1

    def test_thousand_steps_preserve_magnitude(self):
        rng = np.random.default_rng(7)
        v = ch.init_impulse_response(256, rng)
        mags0 = np.abs(v.taps)
        for _ in range(1000):
            v = ch.advance(v, 0.1, rng)
        assert np.max(np.abs(np.abs(v.taps) - mags0)) < 1e-9

    def test_deterministic(self):
        v = ch.init_impulse_response(64, np.random.default_rng(1))
        a = ch.advance(v, 0.1, np.random.default_rng(9))
        b = ch.advance(v, 0.1, np.random.default_rng(9))
        assert np.array_equal(a.taps, b.taps)

    def test_delta_must_be_positive(self):
        v = ch.init_impulse_response(64, np.random.default_rng(1))
        with pytest.raises(ConfigError):
            ch.advance(v, 0.0, np.random.default_rng(0))


class TestDft:
    def test_impulse(self):
        np.testing.assert_allclose(ch.dft([1, 0, 0, 0]), np.ones(4), atol=1e-15)

    def test_constant(self):
        np.testing.assert_allclose(ch.dft([1, 1, 1, 1]), [4, 0, 0, 0], atol=1e-12)

    def test_parseval(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal(128) + 1j * rng.standard_normal(128)
        X = ch.dft(x)
        time_energy = np.sum(np.abs(x) ** 2)
        freq_energy = np.sum(np.abs(X) ** 2) / 128
        assert abs(time_energy - freq_energy) / time_energy < 1e-9

    def test_linearity(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal(64) + 1j * rng.standard_normal(64)
        y = rng.standard_normal(64) + 1j * rng.standard_normal(64)
        lhs = ch.dft(2.0 * x + 3.0 * y)
        rhs = 2.0 * ch.dft(x) + 3.0 * ch.dft(y)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-9)

    def test_power_of_two_required(self):
        with pytest.raises(ConfigError):
            ch.dft(np.ones(6))

    def test_accepts_tap_vector(self):
        v = ch.init_impulse_response(64, np.random.default_rng(0))
        np.testing.assert_array_equal(ch.dft(v), ch.dft(v.taps))


class TestExtractResources:
    def test_equal_spacing(self):
        freq = np.arange(1024, dtype=complex)
        out = ch.extract_resources(freq, 4)
        np.testing.assert_array_equal(out, freq[[0, 256, 512, 768]])

    def test_identity_case(self):
        freq = np.arange(16, dtype=complex)
        np.testing.assert_array_equal(ch.extract_resources(freq, 16), freq)

    def test_divisibility_required(self):
        with pytest.raises(ConfigError):
            ch.extract_resources(np.zeros(1024, dtype=complex), 3)


class TestSimulateEpisode:
    def test_shape_contract(self):
        cfg = ch.SimConfig(n_taps=64, k=100, l=10, resource_count=8, gamma_th=0.5, seed=0)
        ep = ch.simulate_episode(cfg, ch.episode_rng(cfg.seed, 0))
        assert ep.samples.shape == (8, 110)

    def test_deterministic(self):
        cfg = small_cfg()
        a = ch.simulate_episode(cfg, ch.episode_rng(11, 2))
        b = ch.simulate_episode(cfg, ch.episode_rng(11, 2))
        assert np.array_equal(a.samples, b.samples)

    def test_matches_manual_composition(self):
        cfg = small_cfg()
        rng = ch.episode_rng(5, 3)
        v = ch.init_impulse_response(cfg.n_taps, rng)
        scale = np.sqrt(cfg.n_taps)
        cols = [ch.extract_resources(ch.dft(v) / scale, cfg.resource_count)]
        for _ in range(cfg.episode_length - 1):
            v = ch.advance(v, cfg.phase_half_width, rng)
            cols.append(ch.extract_resources(ch.dft(v) / scale, cfg.resource_count))
        manual = np.stack(cols, axis=1)
        ep = ch.simulate_episode(cfg, ch.episode_rng(5, 3))
        np.testing.assert_allclose(ep.samples, manual, atol=1e-10)

    def test_block_equals_single(self):
        cfg = small_cfg()
        block = ch.episode_series_block(cfg, 21, 0, 5)
        for i in range(5):
            ep = ch.simulate_episode(cfg, ch.episode_rng(21, i))
            assert np.array_equal(block[i], ep.samples)

    def test_block_chunking_invariance(self):
        cfg = small_cfg()
        one = ch.episode_series_block(cfg, 13, 0, 8)
        parts = np.concatenate(
            [ch.episode_series_block(cfg, 13, 0, 3), ch.episode_series_block(cfg, 13, 3, 5)]
        )
        assert np.array_equal(one, parts)

    def test_rayleigh_marginal(self):
        cfg = small_cfg(k=4, l=1)
        vals = np.empty(4000, dtype=np.complex128)
        for start, block in ch.iter_episode_blocks(cfg, 17, 4000):
            vals[start : start + block.shape[0]] = block[:, 1, 2]
        p = stats.kstest(np.abs(vals), "rayleigh", args=(0, np.sqrt(0.5))).pvalue
        assert p > 0.01

    def test_lag1_autocorrelation(self):
        cfg = ch.SimConfig(n_taps=64, k=200, l=10, resource_count=4, gamma_th=0.5, seed=0)
        block = ch.episode_series_block(cfg, 23, 0, 40)
        mags = np.abs(block[:, 0, :])
        x = mags[:, :-1].ravel()
        y = mags[:, 1:].ravel()
        corr = np.corrcoef(x, y)[0, 1]
        assert corr > 0.9

    def test_nondivisor_resource_count_allowed(self):
        # 6- and 10-resource setups with power-of-two tap counts use the
        # floored equal-spacing grid
        cfg = small_cfg(n_taps=64, resource_count=6)
        ep = ch.simulate_episode(cfg, ch.episode_rng(0, 0))
        assert ep.samples.shape == (6, cfg.episode_length)


class TestCapacityAndLabel:
    def test_three_unit_magnitudes_sum(self):
        assert ch.capacity(np.ones(3, dtype=complex), "sum") == pytest.approx(3.0)

    def test_single_sample(self):
        w = np.array([np.sqrt(3) * 1j])
        assert ch.capacity(w, "sum") == pytest.approx(2.0)
        assert ch.capacity(w, "mean") == pytest.approx(2.0)

    def test_all_zero(self):
        assert ch.capacity(np.zeros(5, dtype=complex), "mean") == 0.0

    def test_empty_window(self):
        with pytest.raises(ValueError):
            ch.capacity(np.array([], dtype=complex), "mean")

    def test_bad_mode(self):
        with pytest.raises(ConfigError):
            ch.capacity(np.ones(2, dtype=complex), "median")

    def test_label_no_outage(self):
        assert ch.label(np.ones(4, dtype=complex), 0.575, "mean") == 0

    def test_label_outage_on_zero_channel(self):
        assert ch.label(np.zeros(4, dtype=complex), 0.575, "mean") == 1

    def test_label_tie_is_no_outage(self):
        w = np.ones(4, dtype=complex)
        gamma = ch.capacity(w, "mean")
        assert ch.label(w, gamma, "mean") == 0


class TestDataset:
    def test_shape_contract(self):
        cfg = small_cfg(k=12, l=5)
        batch = ch.build_dataset(cfg, 50)
        assert batch.inputs.shape == (50, 12)
        assert batch.futures.shape == (50, 5)
        assert batch.labels.shape == (50,)
        assert set(np.unique(batch.labels)) <= {0, 1}

    def test_label_consistency(self):
        cfg = small_cfg()
        batch = ch.build_dataset(cfg, 120)
        for i in range(batch.n):
            recomputed = ch.label(batch.futures[i], cfg.gamma_th, cfg.capacity_mode)
            assert recomputed == batch.labels[i]

    def test_byte_identical_files(self, tmp_path):
        cfg = small_cfg()
        p1 = tmp_path / "a.ds"
        p2 = tmp_path / "b.ds"
        ch.build_dataset(cfg, 64, path=str(p1))
        ch.build_dataset(cfg, 64, path=str(p2))
        assert p1.read_bytes() == p2.read_bytes()

    def test_roundtrip(self, tmp_path):
        cfg = small_cfg()
        path = str(tmp_path / "data.ds")
        batch = ch.build_dataset(cfg, 33, path=path)
        loaded = ch.load_dataset(path)
        assert np.array_equal(batch.inputs, loaded.inputs)
        assert np.array_equal(batch.futures, loaded.futures)
        assert np.array_equal(batch.labels, loaded.labels)
        assert loaded.gamma_th == cfg.gamma_th
        assert loaded.capacity_mode == cfg.capacity_mode

    def test_p1_estimator_two_sample_consistency(self):
        # gamma tuned so the outage rate is ~0.1; the small-sample label
        # mean must sit within 3 sigma of a 50x larger run's estimate
        cfg = small_cfg(k=4, l=4, gamma_th=0.1445, seed=60)
        small = ch.build_dataset(cfg, 1000, seed=61)
        big = ch.build_dataset(cfg, 50_000, seed=62)
        tol = 3.0 * np.sqrt(0.1 * 0.9 / 1000)
        assert abs(small.labels.mean() - big.labels.mean()) < tol

    def test_truncated_file(self, tmp_path):
        cfg = small_cfg()
        path = str(tmp_path / "t.ds")
        ch.build_dataset(cfg, 10, path=path)
        blob = open(path, "rb").read()
        open(path, "wb").write(blob[:-7])
        with pytest.raises(DataFormatError) as ei:
            ch.load_dataset(path)
        assert ei.value.offset is not None

    def test_bad_magic(self, tmp_path):
        path = str(tmp_path / "bad.ds")
        open(path, "wb").write(b"NOTADATA" + b"\x00" * 64)
        with pytest.raises(DataFormatError):
            ch.load_dataset(path)

    def test_version_mismatch(self, tmp_path):
        cfg = small_cfg()
        path = str(tmp_path / "v.ds")
        ch.build_dataset(cfg, 5, path=path)
        blob = bytearray(open(path, "rb").read())
        blob[8] = 99  # version field
        open(path, "wb").write(bytes(blob))
        with pytest.raises(DataFormatError, match="version"):
            ch.load_dataset(path)

    def test_relabel(self):
        cfg = small_cfg()
        batch = ch.build_dataset(cfg, 200)
        harsher = ch.relabel(batch, gamma_th=5.0)
        assert harsher.labels.mean() >= batch.labels.mean()
        assert harsher.gamma_th == 5.0
        back = ch.relabel(harsher, cfg.gamma_th)
        assert np.array_equal(back.labels, batch.labels)


class TestSimConfigValidation:
    def test_rejects_non_power_of_two_taps(self):
        with pytest.raises(ConfigError):
            ch.SimConfig(n_taps=100)

    def test_rejects_bad_resource_count(self):
        with pytest.raises(ConfigError, match="resource_count"):
            ch.SimConfig(n_taps=64, resource_count=0)
        with pytest.raises(ConfigError, match="resource_count"):
            ch.SimConfig(n_taps=64, resource_count=65)

    def test_rejects_bad_threshold(self):
        with pytest.raises(ConfigError, match="gamma_th"):
            ch.SimConfig(gamma_th=0.0, resource_count=4)

    def test_rejects_bad_drift(self):
        with pytest.raises(ConfigError, match="phase_half_width"):
            ch.SimConfig(phase_half_width=-0.1, resource_count=4)
