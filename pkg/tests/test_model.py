"""Configuration validation and state serialization."""

import numpy as np
import pytest

from mgpclust.gibbs import sample_prior_state
from mgpclust.model import (Dataset, load_dataset, load_state, save_dataset,
                            save_state, validate_config, validate_state)

import helpers


class TestValidateConfig:
    def test_clean_config_and_data(self):
        config = helpers.make_config(n=3, K=2, r=3,
                                     decay=[[1 / 24, 1 / 3, 1.0]] * 2)
        data, _ = helpers.make_dataset(config, T=24)
        assert validate_config(config, data) == []

    def test_decay_ordering_violation(self):
        config = helpers.make_config(K=1, r=2, decay=[[1.0, 1 / 3]])
        violations = validate_config(config)
        assert len(violations) == 1
        assert "increasing" in violations[0]

    def test_non_contiguous_partitions_flagged(self):
        config = helpers.make_config(n=2, K=1, r=1, M=2, decay=[[0.5]])
        data, _ = helpers.make_dataset(config, T=3)
        bad = Dataset(times=data.times, y=data.y, x=data.x, z=data.z,
                      partition_of=np.array([0, 1, 0]))
        violations = validate_config(config, bad)
        assert any("nondecreasing" in v for v in violations)

    def test_dimension_mismatches_reported(self):
        config = helpers.make_config(n=3, K=2)
        data, _ = helpers.make_dataset(config, T=12)
        bad = Dataset(times=data.times, y=data.y[:2], x=data.x, z=data.z,
                      partition_of=data.partition_of)
        assert any("y must have shape" in v for v in validate_config(config, bad))

    def test_nan_rejected(self):
        config = helpers.make_config(n=2, K=1, r=1, decay=[[0.5]])
        data, _ = helpers.make_dataset(config, T=8)
        y = data.y.copy()
        y[0, 0, 3] = np.nan
        bad = Dataset(times=data.times, y=y, x=data.x, z=data.z,
                      partition_of=data.partition_of)
        assert any("missing" in v for v in validate_config(config, bad))

    def test_schedule_arithmetic(self):
        config = helpers.make_config(n_iterations=10, burn_in=10, thin=1)
        assert any("burn_in" in v for v in validate_config(config))

    def test_nonpositive_alpha(self):
        config = helpers.make_config(alpha=0.0)
        assert any("dp_concentration" in v for v in validate_config(config))


class TestStateInvariants:
    def test_prior_state_passes_validation(self):
        config = helpers.make_config(n=4, K=3, r=2, M=2)
        rng = np.random.default_rng(5)
        state = sample_prior_state(config, np.arange(10.0), rng)
        assert validate_state(state, config) == []

    def test_independent_mode_state_passes(self):
        config = helpers.make_config(n=4, K=2, r=1, M=2, dp_mode="independent",
                                     decay=[[0.3], [0.4]])
        state = sample_prior_state(config, np.arange(6.0), np.random.default_rng(6))
        assert state.clusters.labels.shape == (4, 2, 2)
        assert validate_state(state, config) == []

    def test_corrupted_coreg_detected(self):
        config = helpers.make_config(n=2, K=2, r=1, decay=[[0.3], [0.4]])
        state = sample_prior_state(config, np.arange(5.0), np.random.default_rng(7))
        bad = state.coreg.copy()
        bad[0, 1] = 0.2
        assert any("above the diagonal" in v
                   for v in validate_state(state.replace(coreg=bad), config))


class TestSerialization:
    def test_state_round_trip_bit_exact(self, tmp_path):
        config = helpers.make_config(n=4, K=2, r=2, M=3)
        state = sample_prior_state(config, np.arange(12.0), np.random.default_rng(8))
        save_state(state, tmp_path / "state")
        back = load_state(tmp_path / "state")
        assert np.array_equal(back.gamma, state.gamma)
        assert np.array_equal(back.lam, state.lam)
        assert np.array_equal(back.coreg, state.coreg)
        assert np.array_equal(back.tau2, state.tau2)
        assert np.array_equal(back.nu, state.nu)
        assert np.array_equal(back.clusters.labels, state.clusters.labels)
        for m in range(3):
            for g in range(1):
                assert back.clusters.counts[m][g] == state.clusters.counts[m][g]
                for a, b in zip(back.clusters.atoms[m][g],
                                state.clusters.atoms[m][g]):
                    assert np.array_equal(a, b)

    def test_dataset_round_trip_bit_exact(self, tmp_path):
        config = helpers.make_config(n=3, K=2)
        data, _ = helpers.make_dataset(config, T=10, irregular=True)
        data = Dataset(times=data.times, y=data.y, x=data.x, z=data.z,
                       partition_of=data.partition_of,
                       site_coords=np.random.default_rng(1).random((3, 2)),
                       transform_log={"note": "test"})
        save_dataset(data, tmp_path / "d")
        back = load_dataset(tmp_path / "d")
        for name in ("times", "y", "x", "z"):
            assert np.array_equal(getattr(back, name), getattr(data, name))
        assert np.array_equal(back.partition_of, data.partition_of)
        assert np.array_equal(back.site_coords, data.site_coords)
        assert back.transform_log == data.transform_log
