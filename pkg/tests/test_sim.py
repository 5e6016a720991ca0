"""Statevector engine: gate action, sampling, batching, and invariants."""

import math

import numpy as np
import pytest

from tsqk import sim
from tsqk.errors import ConfigError, UsageError

from conftest import random_program, random_state


class TestZeroState:
    def test_one_qubit(self):
        state = sim.new_zero_state(1)
        assert np.array_equal(state.amplitudes, [1, 0])

    def test_two_qubits(self):
        state = sim.new_zero_state(2)
        assert np.array_equal(state.amplitudes, [1, 0, 0, 0])

    @pytest.mark.parametrize("n", [0, -1, 13])
    def test_out_of_range(self, n):
        with pytest.raises(ConfigError):
            sim.new_zero_state(n)


class TestApplyGate:
    def test_ry_pi_flips(self):
        state = sim.apply_gate(sim.new_zero_state(1), sim.ry(0, math.pi))
        assert state.amplitudes == pytest.approx([0, 1], abs=1e-15)

    def test_ry_zero_is_identity(self, rng):
        state = random_state(rng, 3)
        out = sim.apply_gate(state, sim.ry(1, 0.0))
        assert np.array_equal(out.amplitudes, state.amplitudes)

    def test_cx_truth_table(self):
        # |01> (index 1: qubit 0 set) -> |11> (index 3)
        state = sim.new_zero_state(2)
        state.amplitudes[:] = [0, 1, 0, 0]
        out = sim.apply_gate(state, sim.cx(0, 1))
        assert np.array_equal(out.amplitudes, [0, 0, 0, 1])

    def test_input_state_untouched(self):
        state = sim.new_zero_state(1)
        sim.apply_gate(state, sim.ry(0, 1.0))
        assert np.array_equal(state.amplitudes, [1, 0])

    def test_target_out_of_range(self):
        with pytest.raises(UsageError):
            sim.apply_gate(sim.new_zero_state(2), sim.ry(2, 1.0))

    def test_duplicate_targets_rejected(self):
        with pytest.raises(UsageError):
            sim.cx(1, 1)


class TestProbAllZeros:
    def test_zero_state(self):
        assert sim.prob_all_zeros(sim.new_zero_state(3)) == 1.0

    def test_uniform_two_qubits(self):
        state = sim.new_zero_state(2)
        state = sim.apply_gate(state, sim.ry(0, math.pi / 2))
        state = sim.apply_gate(state, sim.ry(1, math.pi / 2))
        assert sim.prob_all_zeros(state) == pytest.approx(0.25, abs=1e-15)

    def test_flipped_qubit(self):
        state = sim.apply_gate(sim.new_zero_state(2), sim.rx(0, math.pi))
        assert sim.prob_all_zeros(state) == pytest.approx(0.0, abs=1e-30)


class TestSampling:
    def test_deterministic_zero_state(self):
        counts = sim.sample_counts(sim.new_zero_state(2), 100, seed=1)
        assert counts.counts == {"00": 100}
        assert counts.width == 2 and counts.shots == 100

    def test_deterministic_one_state(self):
        state = sim.apply_gate(sim.new_zero_state(1), sim.ry(0, math.pi))
        counts = sim.sample_counts(state, 5, seed=9)
        assert counts.counts == {"1": 5}

    def test_zero_shots_rejected(self):
        with pytest.raises(UsageError):
            sim.sample_counts(sim.new_zero_state(1), 0, seed=0)

    def test_seed_reproducibility(self, rng):
        state = random_state(rng, 3)
        a = sim.sample_counts(state, 1000, seed=42)
        b = sim.sample_counts(state, 1000, seed=42)
        assert a.counts == b.counts

    def test_binomial_concentration(self):
        # uniform single-qubit state: count of "0" within 3 sigma of n*p,
        # cross-checked against an independent binomial draw
        state = sim.apply_gate(sim.new_zero_state(1), sim.ry(0, math.pi / 2))
        shots = 10**6
        counts = sim.sample_counts(state, shots, seed=7)
        sigma = math.sqrt(shots * 0.25)  # 500
        assert abs(counts.get("0") - shots / 2) <= 3 * sigma
        oracle = np.random.default_rng(123456).binomial(shots, 0.5)
        assert abs(oracle - shots / 2) <= 3 * sigma

    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_basis_ordering_contract(self, n):
        # every prepared basis state |b> samples exactly the bitstring b
        for b in range(2**n):
            state = sim.new_zero_state(n)
            for q in range(n):
                if (b >> q) & 1:
                    state = sim.apply_gate(state, sim.rx(q, math.pi))
            counts = sim.sample_counts(state, 50, seed=b)
            assert counts.counts == {format(b, f"0{n}b"): 50}


class TestInvariants:
    def test_norm_preserved_random_programs(self, rng):
        for _ in range(100):
            n = int(rng.integers(1, 7))
            state = sim.run_program(sim.new_zero_state(n), random_program(rng, n, 30))
            assert abs(state.norm_sq() - 1.0) <= 1e-10

    def test_gate_inverse_roundtrip(self, rng):
        for _ in range(60):
            n = int(rng.integers(1, 5))
            state = random_state(rng, n)
            gate = random_program(rng, n, 1)[0]
            back = sim.apply_gate(sim.apply_gate(state, gate), gate.adjoint())
            assert np.max(np.abs(back.amplitudes - state.amplitudes)) <= 1e-12

    def test_adjoint_program_roundtrip(self, rng):
        for _ in range(100):
            n = int(rng.integers(1, 5))
            state = random_state(rng, n)
            prog = random_program(rng, n, 20)
            back = sim.run_program(sim.run_program(state, prog),
                                   sim.adjoint_program(prog))
            assert np.max(np.abs(back.amplitudes - state.amplitudes)) <= 1e-12

    def test_diag_zphase_on_zeros_global_phase_only(self, rng):
        for _ in range(25):
            angle = float(rng.uniform(-2 * math.pi, 2 * math.pi))
            out = sim.apply_gate(sim.new_zero_state(3), sim.diag_zphase([0, 2], angle))
            # a diagonal gate moves no amplitude: everything off |000> is exactly 0
            assert np.all(out.amplitudes[1:] == 0)
            assert abs(sim.prob_all_zeros(out) - 1.0) <= 4 * np.finfo(float).eps

    def test_diag_zphase_parity_action(self):
        # phase exp(-i*angle*(1-2 b0)(1-2 b2)) on each basis state
        state = sim.new_zero_state(3)
        state.amplitudes[:] = np.full(8, 1 / math.sqrt(8))
        angle = 0.7
        out = sim.apply_gate(state, sim.diag_zphase([0, 2], angle))
        for b in range(8):
            parity = (1 - 2 * (b & 1)) * (1 - 2 * ((b >> 2) & 1))
            expect = state.amplitudes[b] * np.exp(-1j * angle * parity)
            assert out.amplitudes[b] == pytest.approx(expect, abs=1e-15)


class TestCompiledProgram:
    def test_batch_matches_serial_to_machine_rounding(self, rng):
        # same per-gate kernels, but numpy may take differently-rounded
        # SIMD paths at different batch widths: agreement to a few ulp
        for _ in range(20):
            n = int(rng.integers(1, 5))
            prog = random_program(rng, n, 25)
            compiled = sim.CompiledProgram.from_gates(n, prog)
            base = sim.program_angles(prog)
            angles = np.tile(base, (6, 1))
            angles[1:] += rng.normal(scale=0.3, size=angles[1:].shape)
            batch = compiled.run(angles)
            for r in range(6):
                gates = [
                    g if g.kind == sim.CX else sim.GateOp(g.kind, g.targets, angles[r, i])
                    for i, g in enumerate(prog)
                ]
                serial = sim.run_program(sim.new_zero_state(n), gates)
                assert np.max(np.abs(batch[r] - serial.amplitudes)) <= 1e-14

    def test_batch_is_deterministic(self, rng):
        n = 3
        prog = random_program(rng, n, 25)
        compiled = sim.CompiledProgram.from_gates(n, prog)
        angles = np.tile(sim.program_angles(prog), (40, 1))
        angles += rng.normal(scale=0.2, size=angles.shape)
        a = compiled.run(angles)
        b = compiled.run(angles)
        assert np.array_equal(a, b)

    def test_shift_taps_match_full_reruns(self, rng):
        for _ in range(10):
            n = int(rng.integers(1, 5))
            prog = random_program(rng, n, 18)
            compiled = sim.CompiledProgram.from_gates(n, prog)
            taps = [i for i, g in enumerate(prog) if g.kind != sim.CX]
            if not taps:
                continue
            shifts = rng.uniform(0.1, 1.5, size=len(taps))
            base = sim.program_angles(prog)[None, :]
            plus, minus = compiled.shift_tap_probs(base, taps, shifts)
            for k, g in enumerate(taps):
                for sgn, got in ((+1, plus[0, k]), (-1, minus[0, k])):
                    shifted = base[0].copy()
                    shifted[g] += sgn * shifts[k]
                    want = compiled.run_probs0(shifted[None, :])[0]
                    assert got == pytest.approx(want, abs=1e-12)

    def test_tap_on_cx_rejected(self):
        prog = [sim.cx(0, 1)]
        compiled = sim.CompiledProgram.from_gates(2, prog)
        with pytest.raises(UsageError):
            compiled.shift_tap_probs(np.zeros((1, 1)), [0], [1.0])
