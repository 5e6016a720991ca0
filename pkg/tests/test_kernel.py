"""Kernel values, Gram stacks, combined kernels, and shot estimation."""

import math

import numpy as np
import pytest

from tsqk import ansatz, data, kernel, sim
from tsqk.errors import UsageError

from conftest import kernel_prob, random_spec


def _spec(n=2, d=2):
    return ansatz.AnsatzSpec(n, d, ansatz.EMBED_QAOA, embed_layers=1,
                             sel_layers=1, walsh_locality=2)


def _instances(rng, n, p, d, lo=0.0, hi=math.pi):
    out = []
    for i in range(n):
        label = 1 if i % 2 == 0 else -1
        out.append(data.TimeSeriesInstance(rng.uniform(lo, hi, (p, d)), label))
    return out


class TestKappa:
    def test_identity_case(self, rng):
        spec = _spec()
        theta = ansatz.init_parameters(spec, rng)
        x = rng.uniform(0, math.pi, 2)
        assert kernel.kappa_t(spec, theta, x, x, 0.7) == pytest.approx(1.0, abs=1e-12)

    def test_swap_symmetry(self, rng):
        for _ in range(100):
            spec = random_spec(rng, max_qubits=3)
            theta = ansatz.init_parameters(spec, rng)
            x = rng.uniform(-2, 2, spec.n_features)
            xp = rng.uniform(-2, 2, spec.n_features)
            t = float(rng.uniform(0, 2))
            a = kernel.kappa_t(spec, theta, x, xp, t)
            b = kernel.kappa_t(spec, theta, xp, x, t)
            assert abs(a - b) <= 1e-12
            assert -1e-12 <= a <= 1 + 1e-12

    def test_single_qubit_half_overlap(self):
        spec = ansatz.AnsatzSpec(1, 1, ansatz.EMBED_RY_FIXED, sel_layers=1)
        theta = ansatz.ParameterSet([], np.zeros(3), np.zeros(1))
        got = kernel.kappa_t(spec, theta, [0.0], [math.pi / 2], 0.0)
        assert got == pytest.approx(0.5, abs=1e-12)

    def test_equal_embeddings_cancel_evolution(self, rng):
        # same features on both sides: V_t factors cancel at every t
        spec = _spec()
        theta = ansatz.init_parameters(spec, rng)
        x = rng.uniform(0, math.pi, 2)
        for t in rng.uniform(0, 3, 5):
            assert kernel.kappa_t(spec, theta, x, x, float(t)) == pytest.approx(1.0, abs=1e-12)


class TestGramStack:
    def test_singleton(self, rng):
        spec = _spec()
        theta = ansatz.init_parameters(spec, rng)
        insts = _instances(rng, 1, 3, 2)
        stack = kernel.gram_stack(spec, theta, insts, np.array([0.0, 0.5, 1.0]))
        assert stack.mats.shape == (3, 1, 1)
        assert np.all(stack.mats == 1.0)

    def test_duplicate_instances(self, rng):
        spec = _spec()
        theta = ansatz.init_parameters(spec, rng)
        inst = _instances(rng, 1, 2, 2)[0]
        twin = data.TimeSeriesInstance(inst.values.copy(), -1)
        stack = kernel.gram_stack(spec, theta, [inst, twin], np.array([0.2, 0.9]))
        assert np.allclose(stack.mats, 1.0, atol=1e-12)

    def test_matches_elementwise_oracle(self, rng):
        spec = _spec()
        theta = ansatz.init_parameters(spec, rng)
        insts = _instances(rng, 3, 2, 2)
        times = np.array([0.3, 1.1])
        stack = kernel.gram_stack(spec, theta, insts, times)
        for l, t in enumerate(times):
            for i in range(3):
                for j in range(3):
                    if i == j:
                        assert stack.mats[l, i, j] == 1.0
                        continue
                    want = kernel_prob(spec, insts[i].values[l], insts[j].values[l],
                                       theta, t)
                    assert stack.mats[l, i, j] == pytest.approx(want, abs=1e-12)

    def test_grid_mismatch_rejected(self, rng):
        spec = _spec()
        theta = ansatz.init_parameters(spec, rng)
        insts = _instances(rng, 2, 3, 2)
        with pytest.raises(UsageError):
            kernel.gram_stack(spec, theta, insts, np.array([0.0, 1.0]))

    def test_exact_mode_psd_and_range(self, rng):
        spec = _spec(n=3)
        theta = ansatz.init_parameters(spec, rng)
        insts = _instances(rng, 20, 2, 2)
        times = np.array([0.4, 0.9])
        stack = kernel.gram_stack(spec, theta, insts, times)
        assert np.all(stack.mats >= -1e-12) and np.all(stack.mats <= 1 + 1e-12)
        for l in range(2):
            assert np.max(np.abs(stack.mats[l] - stack.mats[l].T)) <= 1e-12
            assert np.linalg.eigvalsh(stack.mats[l]).min() >= -1e-9


class TestCombined:
    def test_selector_weights(self, rng):
        spec = _spec()
        theta = ansatz.init_parameters(spec, rng)
        insts = _instances(rng, 3, 3, 2)
        stack = kernel.gram_stack(spec, theta, insts, np.array([0.1, 0.5, 1.0]))
        eta = kernel.KernelWeights([1.0, 0.0, 0.0])
        assert np.array_equal(kernel.combined_kernel(stack, eta), stack.mats[0])

    def test_direct_substitution(self):
        mats = np.array([[[1.0, 0.0], [0.0, 1.0]], [[1.0, 1.0], [1.0, 1.0]]])
        stack = kernel.GramStack(np.array([0.0, 1.0]), mats)
        out = kernel.combined_kernel(stack, kernel.KernelWeights([0.5, 0.5]))
        assert np.array_equal(out, [[1.0, 0.5], [0.5, 1.0]])

    def test_identical_slices_any_weights(self, rng):
        base = rng.uniform(0, 1, (3, 3))
        base = (base + base.T) / 2
        mats = np.stack([base] * 4)
        stack = kernel.GramStack(np.arange(4.0), mats)
        eta = kernel.KernelWeights([0.1, 0.2, 0.3, 0.4])
        assert np.allclose(kernel.combined_kernel(stack, eta), base)

    def test_combined_psd(self, rng):
        spec = _spec(n=3)
        theta = ansatz.init_parameters(spec, rng)
        insts = _instances(rng, 12, 3, 2)
        times = np.array([0.2, 0.6, 1.0])
        stack = kernel.gram_stack(spec, theta, insts, times)
        eta = kernel.KernelWeights([0.5, 0.25, 0.25])
        combined = kernel.combined_kernel(stack, eta)
        assert np.linalg.eigvalsh(combined).min() >= -1e-9

    def test_length_mismatch(self, rng):
        mats = np.ones((2, 1, 1))
        stack = kernel.GramStack(np.array([0.0, 1.0]), mats)
        with pytest.raises(UsageError):
            kernel.combined_kernel(stack, kernel.KernelWeights([1.0]))


def _trained(rng, spec, insts, times):
    theta = ansatz.init_parameters(spec, rng)
    eta = np.full(len(times), 1.0 / len(times))
    return kernel.TrainedTSHK(spec, theta, kernel.KernelWeights(eta),
                              np.asarray(times))


class TestCrossGram:
    def test_matches_square_gram_on_self(self, rng):
        spec = _spec()
        insts = _instances(rng, 3, 2, 2)
        tshk = _trained(rng, spec, insts, [0.3, 0.8])
        stack, combined = kernel.cross_gram(tshk, insts, insts)
        square = kernel.gram_stack(spec, tshk.theta_star, insts, tshk.times)
        assert np.allclose(stack, square.mats, atol=1e-12)
        assert np.allclose(combined,
                           kernel.combined_kernel(square, tshk.eta_star), atol=1e-12)

    def test_duplicated_training_point(self, rng):
        spec = _spec()
        insts = _instances(rng, 3, 2, 2)
        tshk = _trained(rng, spec, insts, [0.3, 0.8])
        _, combined = kernel.cross_gram(tshk, insts, [insts[1]])
        assert combined.shape == (1, 3)
        assert combined[0, 1] == pytest.approx(1.0, abs=1e-12)

    def test_matches_elementwise_oracle(self, rng):
        spec = _spec()
        train = _instances(rng, 3, 2, 2)
        test = _instances(rng, 2, 2, 2)
        tshk = _trained(rng, spec, train, [0.3, 0.8])
        stack, _ = kernel.cross_gram(tshk, train, test)
        for l, t in enumerate(tshk.times):
            for a in range(2):
                for b in range(3):
                    want = kernel_prob(spec, test[a].values[l], train[b].values[l],
                                       tshk.theta_star, t)
                    assert stack[l, a, b] == pytest.approx(want, abs=1e-12)

    def test_scaling_applied_to_both_sides(self, rng):
        spec = _spec()
        raw = _instances(rng, 4, 2, 2, lo=-5.0, hi=5.0)
        ds = data.Dataset(raw, np.array([0.3, 0.8]), d=2)
        scaler = data.fit_scaler(ds)
        theta = ansatz.init_parameters(spec, rng)
        tshk = kernel.TrainedTSHK(spec, theta, kernel.KernelWeights([0.5, 0.5]),
                                  ds.times, feature_scaling=scaler)
        stack, _ = kernel.cross_gram(tshk, raw[:2], raw[2:])
        scaled = data.scale_instances(raw, scaler)
        want = kernel_prob(spec, scaled[2].values[0], scaled[0].values[0],
                           theta, 0.3)
        assert stack[0, 0, 0] == pytest.approx(want, abs=1e-12)


class TestShotMode:
    def test_estimates_concentrate(self, rng):
        spec = _spec()
        theta = ansatz.init_parameters(spec, rng)
        shots = 10**5
        for k in range(50):
            x = rng.uniform(0, math.pi, 2)
            xp = rng.uniform(0, math.pi, 2)
            t = float(rng.uniform(0, 1.5))
            exact = kernel.kappa_t(spec, theta, x, xp, t)
            est = kernel.kappa_t(spec, theta, x, xp, t,
                                 kernel.EvalMode.with_shots(shots, seed=k))
            bound = 5.0 * math.sqrt(max(exact * (1 - exact), 0.0) / shots)
            assert abs(est - exact) <= max(bound, 1e-12)

    def test_shot_gram_deterministic_and_symmetric(self, rng):
        spec = _spec()
        theta = ansatz.init_parameters(spec, rng)
        insts = _instances(rng, 3, 2, 2)
        mode = kernel.EvalMode.with_shots(2000, seed=5)
        a = kernel.gram_stack(spec, theta, insts, np.array([0.3, 0.8]), mode)
        b = kernel.gram_stack(spec, theta, insts, np.array([0.3, 0.8]), mode)
        assert np.array_equal(a.mats, b.mats)
        for l in range(2):
            assert np.array_equal(a.mats[l], a.mats[l].T)

    def test_shot_mode_needs_seed(self):
        with pytest.raises(UsageError):
            kernel.EvalMode(kernel.SHOTS, shots=100)


class TestExport:
    def test_save_load_roundtrip(self, rng, tmp_path):
        spec = _spec()
        theta = ansatz.init_parameters(spec, rng)
        insts = _instances(rng, 3, 2, 2)
        stack = kernel.gram_stack(spec, theta, insts, np.array([0.3, 0.8]))
        kernel.save_gram_stack(stack, tmp_path, prefix="k")
        back = kernel.load_gram_stack(tmp_path, prefix="k")
        assert np.array_equal(back.mats, stack.mats)
        assert np.array_equal(back.times, stack.times)
        assert back.mode.kind == kernel.EXACT
