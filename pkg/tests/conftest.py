"""Shared helpers: random programs, small specs, finite-difference oracles."""

import math

import numpy as np
import pytest

from tsqk import ansatz, sim


def random_program(rng, n_qubits, n_gates):
    """Random gate list over the full gate set."""
    gates = []
    for _ in range(n_gates):
        kind = rng.choice([sim.RX, sim.RY, sim.RZ, sim.CX, sim.DIAG_ZPHASE])
        if kind == sim.CX and n_qubits >= 2:
            q = rng.choice(n_qubits, size=2, replace=False)
            gates.append(sim.cx(int(q[0]), int(q[1])))
        elif kind == sim.DIAG_ZPHASE:
            size = int(rng.integers(1, n_qubits + 1))
            support = rng.choice(n_qubits, size=size, replace=False)
            gates.append(sim.diag_zphase(sorted(int(s) for s in support),
                                         float(rng.uniform(-math.pi, math.pi))))
        else:
            if kind == sim.CX:
                kind = sim.RY
            gates.append(sim.GateOp(kind, (int(rng.integers(n_qubits)),),
                                    float(rng.uniform(-math.pi, math.pi))))
    return gates


def random_state(rng, n_qubits):
    """Haar-ish random state by normalizing complex gaussians."""
    amps = rng.normal(size=2**n_qubits) + 1j * rng.normal(size=2**n_qubits)
    amps /= np.linalg.norm(amps)
    return sim.StateVector(n_qubits, amps.astype(np.complex128))


def random_spec(rng, max_qubits=4):
    n = int(rng.integers(1, max_qubits + 1))
    if rng.random() < 0.5:
        d = int(rng.integers(1, n + 1))
        embedding = ansatz.EMBED_RY_FIXED
        g = 1
    else:
        d = int(rng.integers(1, 4))
        embedding = ansatz.EMBED_QAOA
        g = int(rng.integers(1, 3))
    return ansatz.AnsatzSpec(
        n_qubits=n,
        n_features=d,
        embedding=embedding,
        embed_layers=g,
        sel_layers=int(rng.integers(1, 3)),
        walsh_locality=int(rng.integers(1, n + 1)),
    )


def kernel_prob(spec, x, xp, theta, t):
    """Plain single-circuit kernel evaluation through the public sim API."""
    circuit = ansatz.build_kernel_circuit(spec, x, xp, theta, t)
    state = sim.run_program(sim.new_zero_state(spec.n_qubits), list(circuit))
    return sim.prob_all_zeros(state)


def kernel_fd_derivative(spec, x, xp, theta, t, pidx, h=1e-6):
    """Central finite difference of the kernel value w.r.t. one parameter."""
    flat = theta.flatten()
    up, dn = flat.copy(), flat.copy()
    up[pidx] += h
    dn[pidx] -= h
    f_up = kernel_prob(spec, x, xp, ansatz.ParameterSet.from_flat(spec, up), t)
    f_dn = kernel_prob(spec, x, xp, ansatz.ParameterSet.from_flat(spec, dn), t)
    return (f_up - f_dn) / (2 * h)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
