"""Exact complex statevector engine for small qubit registers.

Dense double-precision simulation for up to MAX_QUBITS qubits with the
gate set needed by the kernel circuits: RX/RY/RZ rotations, CX, and
diagonal Pauli-Z-string phases.  Basis-index convention throughout the
package: qubit 0 is the least significant bit of the basis index, i.e.
the rightmost character of a measured bitstring.

Besides the single-state API, the module exposes a batched runner
(`CompiledProgram`) that evaluates many parameterizations of one gate
sequence at once through the same per-gate kernels.  Batched results are
deterministic and independent of evaluation order; relative to running
states one at a time they agree to machine rounding (numpy may pick
differently-rounded SIMD paths for different batch widths).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError, UsageError

# Gate kinds
RX = "RX"
RY = "RY"
RZ = "RZ"
CX = "CX"
DIAG_ZPHASE = "DIAG_ZPHASE"

_ROTATIONS = (RX, RY, RZ)
_KINDS = (RX, RY, RZ, CX, DIAG_ZPHASE)

#: Hard cap on register width; 2^12 amplitudes keeps every operation exact
#: and fast.  All shipped experiments use n <= 8.
MAX_QUBITS = 12


@dataclass(frozen=True)
class GateOp:
    """One gate: a rotation, a CX, or a diagonal Z-string phase.

    ``angle`` is in radians and absent for CX.  For DIAG_ZPHASE the
    ``targets`` tuple is the Z-string support and the gate multiplies
    basis state ``b`` by ``exp(-i * angle * prod_{j in support}(1-2*b_j))``,
    i.e. it implements ``exp(-i * angle * Z_S)``.
    """

    kind: str
    targets: tuple
    angle: Optional[float] = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise UsageError(f"unknown gate kind {self.kind!r}")
        targets = tuple(int(q) for q in self.targets)
        object.__setattr__(self, "targets", targets)
        if len(targets) == 0:
            raise UsageError("gate needs at least one target qubit")
        if len(set(targets)) != len(targets):
            raise UsageError(f"target qubits must be pairwise distinct, got {targets}")
        if self.kind == CX:
            if self.angle is not None:
                raise UsageError("CX takes no angle")
            if len(targets) != 2:
                raise UsageError("CX needs (control, target)")
        else:
            if self.angle is None:
                raise UsageError(f"{self.kind} needs an angle")
            object.__setattr__(self, "angle", float(self.angle))
            if self.kind in _ROTATIONS and len(targets) != 1:
                raise UsageError(f"{self.kind} acts on exactly one qubit")

    @property
    def zstring_support(self):
        """Qubit subset of the Z string (DIAG_ZPHASE only)."""
        return self.targets if self.kind == DIAG_ZPHASE else None

    def adjoint(self) -> "GateOp":
        if self.kind == CX:
            return self
        return GateOp(self.kind, self.targets, -self.angle)


def rx(qubit: int, angle: float) -> GateOp:
    return GateOp(RX, (qubit,), angle)


def ry(qubit: int, angle: float) -> GateOp:
    return GateOp(RY, (qubit,), angle)


def rz(qubit: int, angle: float) -> GateOp:
    return GateOp(RZ, (qubit,), angle)


def cx(control: int, target: int) -> GateOp:
    return GateOp(CX, (control, target))


def diag_zphase(support: Iterable[int], angle: float) -> GateOp:
    return GateOp(DIAG_ZPHASE, tuple(support), angle)


def adjoint_program(gates: Sequence[GateOp]) -> list:
    """Adjoint of a gate list: reversed order, each gate adjointed."""
    return [g.adjoint() for g in reversed(gates)]


@dataclass
class StateVector:
    """Normalized n-qubit state; amplitudes indexed with qubit 0 as LSB."""

    n_qubits: int
    amplitudes: np.ndarray

    def copy(self) -> "StateVector":
        return StateVector(self.n_qubits, self.amplitudes.copy())

    def norm_sq(self) -> float:
        return float(np.real(np.vdot(self.amplitudes, self.amplitudes)))


def new_zero_state(n_qubits: int) -> StateVector:
    """Prepare |0...0> on ``n_qubits`` qubits (1 <= n <= MAX_QUBITS)."""
    if not isinstance(n_qubits, (int, np.integer)) or isinstance(n_qubits, bool):
        raise ConfigError(f"n_qubits must be an integer, got {n_qubits!r}")
    if not 1 <= n_qubits <= MAX_QUBITS:
        raise ConfigError(f"n_qubits must be in [1, {MAX_QUBITS}], got {n_qubits}")
    amps = np.zeros(2**n_qubits, dtype=np.complex128)
    amps[0] = 1.0
    return StateVector(int(n_qubits), amps)


def _check_gate(gate: GateOp, n_qubits: int):
    for q in gate.targets:
        if not 0 <= q < n_qubits:
            raise UsageError(
                f"gate {gate.kind} targets qubit {q}, register has {n_qubits}"
            )


def _cx_perm(n_qubits: int, control: int, target: int) -> np.ndarray:
    idx = np.arange(2**n_qubits)
    return np.where((idx >> control) & 1 == 1, idx ^ (1 << target), idx)


def _zstring_signs(n_qubits: int, support: Sequence[int]) -> np.ndarray:
    idx = np.arange(2**n_qubits)
    signs = np.ones(2**n_qubits, dtype=np.float64)
    for q in support:
        signs *= 1.0 - 2.0 * ((idx >> q) & 1)
    return signs


def _apply_batch(amps: np.ndarray, n_qubits: int, kind: str, targets, theta,
                 perm=None, signs=None) -> np.ndarray:
    """Apply one gate to a (2^n, B) amplitude block; returns a new array.

    The batch is the contiguous innermost axis so every elementwise pass
    runs long inner loops regardless of the register size.  ``theta`` is
    a scalar or a (B,) vector of per-column angles; ``perm``/``signs``
    carry precomputed CX permutations / Z-string parities when available.
    """
    batch = amps.shape[1]
    if kind == CX:
        if perm is None:
            perm = _cx_perm(n_qubits, *targets)
        return amps.take(perm, axis=0)

    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim == 0:
        theta = np.broadcast_to(theta, (batch,))

    if kind == DIAG_ZPHASE:
        if signs is None:
            signs = _zstring_signs(n_qubits, targets)
        return amps * np.exp(signs[:, None] * ((-1j) * theta)[None, :])

    q = targets[0]
    half = theta * 0.5
    c = np.cos(half)
    s = np.sin(half)
    view = amps.reshape(-1, 2, 2**q, batch)
    a0 = view[:, 0]
    a1 = view[:, 1]
    out = np.empty_like(view)
    if kind == RX:
        ms = (-1j) * s
        out[:, 0] = c * a0 + ms * a1
        out[:, 1] = ms * a0 + c * a1
    elif kind == RY:
        out[:, 0] = c * a0 - s * a1
        out[:, 1] = s * a0 + c * a1
    elif kind == RZ:
        phase = c - 1j * s
        out[:, 0] = phase * a0
        out[:, 1] = np.conj(phase) * a1
    else:
        raise UsageError(f"unknown gate kind {kind!r}")
    return out.reshape(amps.shape)


def apply_gate(state: StateVector, gate: GateOp) -> StateVector:
    """Unitary action of one gate; the input state is left untouched."""
    _check_gate(gate, state.n_qubits)
    amps = _apply_batch(
        state.amplitudes[:, None], state.n_qubits, gate.kind, gate.targets, gate.angle
    )
    return StateVector(state.n_qubits, amps[:, 0])


def run_program(state: StateVector, gates: Sequence[GateOp]) -> StateVector:
    for gate in gates:
        state = apply_gate(state, gate)
    return state


def prob_all_zeros(state: StateVector) -> float:
    """Probability of measuring the all-zeros bitstring."""
    a0 = state.amplitudes[0]
    return float(a0.real * a0.real + a0.imag * a0.imag)


@dataclass
class CountsMap:
    """Bitstring -> count histogram; qubit 0 is the rightmost character."""

    counts: dict
    width: int
    shots: int

    def __getitem__(self, key: str) -> int:
        return self.counts[key]

    def get(self, key: str, default: int = 0) -> int:
        return self.counts.get(key, default)

    def items(self):
        return self.counts.items()

    def total(self) -> int:
        return sum(self.counts.values())


def _rng_from_seed(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def sample_outcomes(state: StateVector, shots: int, seed) -> np.ndarray:
    """Sample ``shots`` basis indices by inverse CDF over |amplitude|^2.

    Deterministic given ``seed`` (PCG64 stream).  Returned indices follow
    the package bit convention (qubit 0 = LSB).
    """
    if shots <= 0:
        raise UsageError(f"shots must be positive, got {shots}")
    probs = np.abs(state.amplitudes) ** 2
    cdf = np.cumsum(probs)
    cdf[-1] = max(cdf[-1], 1.0)  # guard the top bin against rounding
    u = _rng_from_seed(seed).random(shots)
    return np.searchsorted(cdf, u, side="right")


def sample_counts(state: StateVector, shots: int, seed) -> CountsMap:
    """Shot-sample the state into a sparse bitstring histogram."""
    outcomes = sample_outcomes(state, shots, seed)
    n = state.n_qubits
    values, freq = np.unique(outcomes, return_counts=True)
    counts = {format(int(v), f"0{n}b"): int(c) for v, c in zip(values, freq)}
    return CountsMap(counts, width=n, shots=int(shots))


class CompiledProgram:
    """A gate sequence compiled for batched evaluation.

    The structure (kinds and targets) is fixed; angles vary per batch row.
    Rows evolve independently, so evaluating B parameterizations costs one
    vectorized sweep instead of B python-level circuit runs.
    """

    def __init__(self, n_qubits: int, structure: Sequence[tuple]):
        if not 1 <= n_qubits <= MAX_QUBITS:
            raise ConfigError(f"n_qubits must be in [1, {MAX_QUBITS}], got {n_qubits}")
        self.n_qubits = int(n_qubits)
        self.dim = 2**self.n_qubits
        self.kinds = []
        self.targets = []
        self._perms = []
        self._signs = []
        for kind, targets in structure:
            targets = tuple(int(q) for q in targets)
            for q in targets:
                if not 0 <= q < n_qubits:
                    raise UsageError(f"qubit {q} out of range for n={n_qubits}")
            self.kinds.append(kind)
            self.targets.append(targets)
            self._perms.append(_cx_perm(n_qubits, *targets) if kind == CX else None)
            self._signs.append(
                _zstring_signs(n_qubits, targets) if kind == DIAG_ZPHASE else None
            )
        self.n_gates = len(self.kinds)

    @classmethod
    def from_gates(cls, n_qubits: int, gates: Sequence[GateOp]) -> "CompiledProgram":
        return cls(n_qubits, [(g.kind, g.targets) for g in gates])

    def _zero_cols(self, batch: int) -> np.ndarray:
        amps = np.zeros((self.dim, batch), dtype=np.complex128)
        amps[0, :] = 1.0
        return amps

    def _apply(self, g: int, amps: np.ndarray, theta, adjoint=False) -> np.ndarray:
        kind = self.kinds[g]
        if adjoint and kind != CX:
            theta = -np.asarray(theta)
        return _apply_batch(
            amps, self.n_qubits, kind, self.targets[g], theta,
            perm=self._perms[g], signs=self._signs[g],
        )

    def _run_cols(self, angles: np.ndarray) -> np.ndarray:
        amps = self._zero_cols(angles.shape[0])
        for g in range(self.n_gates):
            amps = self._apply(g, amps, angles[:, g])
        return amps

    def _check_angles(self, angles) -> np.ndarray:
        angles = np.atleast_2d(np.asarray(angles, dtype=np.float64))
        if angles.shape[1] != self.n_gates:
            raise UsageError(
                f"angle matrix has {angles.shape[1]} columns, program has {self.n_gates} gates"
            )
        return angles

    def run(self, angles: np.ndarray) -> np.ndarray:
        """Evolve a batch from |0...0>: ``angles`` is (B, n_gates);
        returns (B, dim) final states."""
        angles = self._check_angles(angles)
        return self._run_cols(angles).T

    def run_probs0(self, angles: np.ndarray) -> np.ndarray:
        """All-zeros probability per batch row."""
        a0 = self._run_cols(self._check_angles(angles))[0]
        return a0.real**2 + a0.imag**2

    def shift_tap_probs(self, angles: np.ndarray, tap_gates: Sequence[int],
                        tap_shifts: Sequence[float]):
        """All-zeros probabilities of one-angle-shifted variants of each row.

        For every row e and tap k (gate position ``tap_gates[k]``), returns
        the probabilities of the same circuit with that single gate's angle
        shifted by +/- ``tap_shifts[k]``.  Equivalent to rerunning the full
        circuit 2*len(taps) times per row, but computed from cached
        prefix/suffix states in two sweeps.

        Returns (plus, minus), each (B, len(taps)).
        """
        angles = self._check_angles(angles)
        batch = angles.shape[0]
        tap_gates = list(tap_gates)
        tap_shifts = np.asarray(tap_shifts, dtype=np.float64)

        # prefix states: fwd[g] = state before gate g
        fwd = [None] * (self.n_gates + 1)
        amps = self._zero_cols(batch)
        fwd[0] = amps
        for g in range(self.n_gates):
            amps = self._apply(g, amps, angles[:, g])
            fwd[g + 1] = amps

        # suffix functionals: bwd[g] s.t. <0| G_{last}..G_g = bwd[g]^dagger
        bwd = [None] * (self.n_gates + 1)
        amps = self._zero_cols(batch)
        bwd[self.n_gates] = amps
        for g in range(self.n_gates - 1, -1, -1):
            amps = self._apply(g, amps, angles[:, g], adjoint=True)
            bwd[g] = amps

        plus = np.empty((batch, len(tap_gates)))
        minus = np.empty((batch, len(tap_gates)))
        for k, g in enumerate(tap_gates):
            if self.kinds[g] == CX:
                raise UsageError("cannot shift an angle-free gate")
            suffix = np.conj(bwd[g + 1])
            for sign, out in ((1.0, plus), (-1.0, minus)):
                shifted = self._apply(g, fwd[g], angles[:, g] + sign * tap_shifts[k])
                amp = np.einsum("db,db->b", suffix, shifted)
                out[:, k] = amp.real**2 + amp.imag**2
        return plus, minus


def program_angles(gates: Sequence[GateOp]) -> np.ndarray:
    """Angle vector of a concrete gate list (0.0 for CX columns)."""
    return np.array(
        [0.0 if g.kind == CX else g.angle for g in gates], dtype=np.float64
    )
