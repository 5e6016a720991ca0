"""Embedding-overlap probe against a dense matrix-exponential oracle."""

import math

import numpy as np
import pytest

from tsqk import ansatz, timeprobe
from tsqk.errors import UsageError

from oracles import probe_expm_oracle


def _spec(n=3, sel=2, walsh=2):
    return ansatz.AnsatzSpec(n, 1, ansatz.EMBED_RY_FIXED, sel_layers=sel,
                             walsh_locality=walsh)


class TestProbe:
    def test_zero_delta_is_one(self, rng):
        spec = _spec()
        beta = rng.uniform(-math.pi, math.pi, spec.n_beta)
        gamma = rng.uniform(-math.pi, math.pi, spec.n_gamma)
        result = timeprobe.probe(spec, beta, gamma, [0.0, 0.5])
        assert abs(result.values[0] - 1.0) <= 1e-12

    def test_zero_beta_is_flat_one(self, rng):
        spec = _spec()
        gamma = rng.uniform(-math.pi, math.pi, spec.n_gamma)
        result = timeprobe.probe(spec, np.zeros(spec.n_beta), gamma,
                                 np.linspace(0, 3, 7))
        assert np.all(np.abs(result.values - 1.0) <= 1e-12)

    def test_range_bounds(self, rng):
        spec = _spec()
        beta = rng.uniform(-math.pi, math.pi, spec.n_beta)
        gamma = rng.uniform(-math.pi, math.pi, spec.n_gamma)
        result = timeprobe.probe(spec, beta, gamma, np.linspace(0, 5, 41))
        assert np.all(result.values >= -1e-12)
        assert np.all(result.values <= 1 + 1e-12)

    def test_matches_dense_exponential_oracle(self, rng):
        for _ in range(5):
            spec = _spec(n=int(rng.integers(1, 4)), sel=int(rng.integers(1, 3)))
            beta = rng.uniform(-math.pi, math.pi, spec.n_beta)
            gamma = rng.uniform(-math.pi, math.pi, spec.n_gamma)
            deltas = rng.uniform(0, 4, 6)
            got = timeprobe.probe(spec, beta, gamma, deltas).values
            want = probe_expm_oracle(spec, beta, gamma, deltas)
            assert np.max(np.abs(got - want)) <= 1e-10

    def test_rational_spectrum_periodicity(self, rng):
        # gamma multiples of pi/2 and pi -> evolution period 4 in dt
        spec = ansatz.AnsatzSpec(2, 1, ansatz.EMBED_RY_FIXED, sel_layers=1,
                                 walsh_locality=1)
        assert spec.n_gamma == 2
        beta = rng.uniform(-math.pi, math.pi, spec.n_beta)
        gamma = np.array([math.pi, math.pi / 2])
        deltas = np.linspace(0, 2, 9)
        a = timeprobe.probe(spec, beta, gamma, deltas).values
        b = timeprobe.probe(spec, beta, gamma, deltas + 4.0).values
        assert np.max(np.abs(a - b)) <= 1e-12

    def test_markers_reproduce_grid_evaluations(self, rng):
        spec = _spec()
        beta = rng.uniform(-math.pi, math.pi, spec.n_beta)
        gamma = rng.uniform(-math.pi, math.pi, spec.n_gamma)
        grid = np.array([0.1, 0.4, 0.9])
        result = timeprobe.probe(spec, beta, gamma, np.linspace(0, 1, 5),
                                 train_times=grid)
        direct = timeprobe.probe(spec, beta, gamma, grid).values
        assert np.array_equal(result.marker_values, direct)
        assert np.array_equal(result.marker_times, grid)

    def test_empty_grid_rejected(self):
        spec = _spec()
        with pytest.raises(UsageError):
            timeprobe.probe(spec, np.zeros(spec.n_beta),
                            np.zeros(spec.n_gamma), [])
