"""Parameterized circuit families and their differentiation metadata.

Three building blocks make up every kernel circuit:

* a data embedding U(x): either a fixed single-qubit RY layer or a
  layered QAOA-style feature map (data-scaled RZ phases, pairwise ZZ
  data products around a ring, RX mixers),
* a layered strongly-entangling eigenvector circuit W(beta)
  (RZ.RY.RZ per qubit plus a CX ring with a per-layer range),
* a diagonal evolution D(gamma, t) = exp(-i t sum_S gamma_S Z_S) over a
  locality-truncated basis of Z strings.

The full kernel circuit for a pair of feature vectors is
``V_t . U(x) . U(x')^dag . V_t^dag`` applied to the zero state, with
``V_t = W^dag D W``.  Every gate angle is (a signed product of data
features and the time value) times one trainable parameter, which is
what makes the parameter-shift rule exact; ``KernelTemplate`` exploits
the same structure to evaluate batches of circuits and their gradients
without per-circuit python overhead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional, Sequence

import numpy as np

from . import sim
from .errors import ConfigError, UsageError
from .sim import CX, DIAG_ZPHASE, RX, RY, RZ, GateOp, adjoint_program

EMBED_RY_FIXED = "ry_fixed"
EMBED_QAOA = "qaoa"

# parameter-shift constants, in the units of each gate's stored angle
_SHIFT = {RX: math.pi / 2, RY: math.pi / 2, RZ: math.pi / 2, DIAG_ZPHASE: math.pi / 4}
# base weight of the +/- pair; the DIAG_ZPHASE convention exp(-i*theta*Z_S)
# doubles the rotation-convention generator, so its 1/2 is cancelled
_BASE_W = {RX: 0.5, RY: 0.5, RZ: 0.5, DIAG_ZPHASE: 1.0}


def zstring_basis(n_qubits: int, locality: int) -> tuple:
    """Ordered nonempty qubit subsets with |S| <= locality.

    Deterministic order: by size, then lexicographically; one diagonal
    coefficient per subset.
    """
    if not 1 <= locality <= n_qubits:
        raise ConfigError(
            f"walsh locality must be in [1, n_qubits], got {locality} for n={n_qubits}"
        )
    basis = []
    for size in range(1, locality + 1):
        basis.extend(combinations(range(n_qubits), size))
    return tuple(basis)


@dataclass(frozen=True)
class AnsatzSpec:
    """Shape of the circuit family: widths, embedding kind, layer counts."""

    n_qubits: int
    n_features: int
    embedding: str = EMBED_RY_FIXED
    embed_layers: int = 1
    sel_layers: int = 1
    walsh_locality: Optional[int] = None

    def __post_init__(self):
        if not 1 <= self.n_qubits <= sim.MAX_QUBITS:
            raise ConfigError(f"n_qubits must be in [1, {sim.MAX_QUBITS}]")
        if self.n_features < 1:
            raise ConfigError("n_features must be >= 1")
        if self.embedding not in (EMBED_RY_FIXED, EMBED_QAOA):
            raise ConfigError(f"unknown embedding {self.embedding!r}")
        if self.embedding == EMBED_RY_FIXED and self.n_features > self.n_qubits:
            raise ConfigError("ry_fixed embedding needs n_features <= n_qubits")
        if self.embedding == EMBED_QAOA and self.embed_layers < 1:
            raise ConfigError("qaoa embedding needs embed_layers >= 1")
        if self.sel_layers < 1:
            raise ConfigError("sel_layers must be >= 1")
        if self.walsh_locality is None:
            object.__setattr__(self, "walsh_locality", min(self.n_qubits, 2))
        if not 1 <= self.walsh_locality <= self.n_qubits:
            raise ConfigError("walsh_locality must be in [1, n_qubits]")

    @property
    def n_alpha(self) -> int:
        if self.embedding == EMBED_RY_FIXED:
            return 0
        return 3 * self.n_qubits * self.embed_layers

    @property
    def n_beta(self) -> int:
        return 3 * self.n_qubits * self.sel_layers

    @property
    def n_gamma(self) -> int:
        return len(self.zstring_basis())

    @property
    def n_params(self) -> int:
        return self.n_alpha + self.n_beta + self.n_gamma

    def zstring_basis(self) -> tuple:
        return zstring_basis(self.n_qubits, self.walsh_locality)

    def to_dict(self) -> dict:
        return {
            "n_qubits": self.n_qubits,
            "n_features": self.n_features,
            "embedding": self.embedding,
            "embed_layers": self.embed_layers,
            "sel_layers": self.sel_layers,
            "walsh_locality": self.walsh_locality,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnsatzSpec":
        return cls(**d)


@dataclass
class ParameterSet:
    """Trainable angles partitioned by role: embedding / eigenvector / diagonal."""

    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64).reshape(-1)
        self.beta = np.asarray(self.beta, dtype=np.float64).reshape(-1)
        self.gamma = np.asarray(self.gamma, dtype=np.float64).reshape(-1)

    def validate_for(self, spec: AnsatzSpec):
        if len(self.alpha) != spec.n_alpha:
            raise UsageError(f"alpha must have {spec.n_alpha} entries, got {len(self.alpha)}")
        if len(self.beta) != spec.n_beta:
            raise UsageError(f"beta must have {spec.n_beta} entries, got {len(self.beta)}")
        if len(self.gamma) != spec.n_gamma:
            raise UsageError(f"gamma must have {spec.n_gamma} entries, got {len(self.gamma)}")

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.alpha, self.beta, self.gamma])

    @classmethod
    def from_flat(cls, spec: AnsatzSpec, flat: np.ndarray) -> "ParameterSet":
        flat = np.asarray(flat, dtype=np.float64).reshape(-1)
        if len(flat) != spec.n_params:
            raise UsageError(f"expected {spec.n_params} parameters, got {len(flat)}")
        a, b = spec.n_alpha, spec.n_alpha + spec.n_beta
        return cls(flat[:a], flat[a:b], flat[b:])

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "gamma": self.gamma.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParameterSet":
        return cls(np.array(d["alpha"]), np.array(d["beta"]), np.array(d["gamma"]))


def init_parameters(spec: AnsatzSpec, rng: np.random.Generator) -> ParameterSet:
    """Fresh parameters, each entry uniform on [-pi, pi]."""
    draw = lambda k: rng.uniform(-math.pi, math.pi, size=k)
    return ParameterSet(draw(spec.n_alpha), draw(spec.n_beta), draw(spec.n_gamma))


# ---------------------------------------------------------------------------
# symbolic gate records
#
# Each record describes one gate whose angle is
#     sign * [x~_side[f1]] * [x~_side[f2]] * [t] * (theta[pidx] or 1)
# with bracketed factors present only when the index/flag says so.
# x~ is the feature vector cyclically extended to the register width.

@dataclass(frozen=True)
class _Rec:
    kind: str
    targets: tuple
    pidx: int = -1      # global parameter index, -1 for unparameterized angles
    side: int = -1      # 0: x, 1: x_prime, -1: no data factor
    f1: int = -1
    f2: int = -1
    use_t: bool = False
    sign: float = 1.0

    def flipped(self) -> "_Rec":
        if self.kind == CX:
            return self
        return _Rec(self.kind, self.targets, self.pidx, self.side,
                    self.f1, self.f2, self.use_t, -self.sign)


def _adjoint_records(records) -> list:
    return [r.flipped() for r in reversed(records)]


def _embed_records(spec: AnsatzSpec, side: int, alpha_base: int) -> list:
    n, d = spec.n_qubits, spec.n_features
    recs = []
    if spec.embedding == EMBED_RY_FIXED:
        for j in range(d):
            recs.append(_Rec(RY, (j,), side=side, f1=j))
        return recs
    for layer in range(spec.embed_layers):
        base = alpha_base + 3 * n * layer
        for j in range(n):
            recs.append(_Rec(RZ, (j,), pidx=base + j, side=side, f1=j))
        for j in range(n):
            support = tuple(sorted({j, (j + 1) % n}))
            recs.append(_Rec(DIAG_ZPHASE, support, pidx=base + n + j,
                             side=side, f1=j, f2=(j + 1) % n))
        for j in range(n):
            recs.append(_Rec(RX, (j,), pidx=base + 2 * n + j))
    return recs


def _w_records(spec: AnsatzSpec, beta_base: int) -> list:
    n = spec.n_qubits
    recs = []
    for layer in range(spec.sel_layers):
        base = beta_base + 3 * n * layer
        for j in range(n):
            recs.append(_Rec(RZ, (j,), pidx=base + 3 * j))
            recs.append(_Rec(RY, (j,), pidx=base + 3 * j + 1))
            recs.append(_Rec(RZ, (j,), pidx=base + 3 * j + 2))
        if n >= 2:
            reach = (layer % (n - 1)) + 1
            for j in range(n):
                recs.append(_Rec(CX, (j, (j + reach) % n)))
    return recs


def _d_records(spec: AnsatzSpec, gamma_base: int, tsign: float) -> list:
    return [
        _Rec(DIAG_ZPHASE, subset, pidx=gamma_base + i, use_t=True, sign=tsign)
        for i, subset in enumerate(spec.zstring_basis())
    ]


def _materialize(records, x, xp, t, theta) -> list:
    gates = []
    for r in records:
        if r.kind == CX:
            gates.append(sim.cx(*r.targets))
            continue
        angle = r.sign
        if r.f1 >= 0:
            feat = x if r.side == 0 else xp
            angle *= feat[r.f1]
        if r.f2 >= 0:
            feat = x if r.side == 0 else xp
            angle *= feat[r.f2]
        if r.use_t:
            angle *= t
        if r.pidx >= 0:
            angle *= theta[r.pidx]
        gates.append(GateOp(r.kind, r.targets, angle))
    return gates


def _extend_features(spec: AnsatzSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if len(x) != spec.n_features:
        raise UsageError(f"expected {spec.n_features} features, got {len(x)}")
    idx = np.arange(spec.n_qubits) % spec.n_features
    return x[idx]


# ---------------------------------------------------------------------------
# public builders

def build_embedding(spec: AnsatzSpec, x, alpha) -> list:
    """Embedding program U(x, alpha) as a gate list."""
    alpha = np.asarray(alpha, dtype=np.float64).reshape(-1)
    if len(alpha) != spec.n_alpha:
        raise UsageError(f"alpha must have {spec.n_alpha} entries, got {len(alpha)}")
    xt = _extend_features(spec, x)
    theta = np.concatenate([alpha, np.zeros(spec.n_beta + spec.n_gamma)])
    return _materialize(_embed_records(spec, side=0, alpha_base=0), xt, xt, 0.0, theta)


def build_eigenvector_circuit(spec: AnsatzSpec, beta) -> list:
    """Eigenvector program W(beta): layered RZ.RY.RZ plus a CX ring."""
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    if len(beta) != spec.n_beta:
        raise UsageError(f"beta must have {spec.n_beta} entries, got {len(beta)}")
    theta = np.concatenate([np.zeros(spec.n_alpha), beta, np.zeros(spec.n_gamma)])
    return _materialize(_w_records(spec, beta_base=spec.n_alpha), None, None, 0.0, theta)


def build_time_evolution(spec: AnsatzSpec, gamma, t: float, w_program) -> list:
    """Evolution program V_t = W^dag . D(gamma, t) . W as a gate list.

    The eigenvector slot is resolved by the caller: pass the W program
    from :func:`build_eigenvector_circuit`.
    """
    gamma = np.asarray(gamma, dtype=np.float64).reshape(-1)
    if len(gamma) != spec.n_gamma:
        raise UsageError(f"gamma must have {spec.n_gamma} entries, got {len(gamma)}")
    d_gates = [
        sim.diag_zphase(subset, float(t) * gamma[i])
        for i, subset in enumerate(spec.zstring_basis())
    ]
    w_program = list(w_program)
    return w_program + d_gates + adjoint_program(w_program)


def _kernel_records(spec: AnsatzSpec) -> list:
    a0, b0, g0 = 0, spec.n_alpha, spec.n_alpha + spec.n_beta
    w = _w_records(spec, b0)
    v_t = w + _d_records(spec, g0, +1.0) + _adjoint_records(w)
    v_t_adj = w + _d_records(spec, g0, -1.0) + _adjoint_records(w)
    u_x = _embed_records(spec, side=0, alpha_base=a0)
    u_xp_adj = _adjoint_records(_embed_records(spec, side=1, alpha_base=a0))
    return v_t + u_x + u_xp_adj + v_t_adj


class BoundKernelCircuit:
    """A kernel circuit with concrete angles plus its parameter registry.

    Iterable as a gate list (usable with :func:`tsqk.sim.run_program`);
    also knows, for every trainable parameter, where it occurs in the
    program and with what chain-rule factor.
    """

    def __init__(self, spec: AnsatzSpec, records, gates, theta: ParameterSet,
                 xt, xpt, t):
        self.spec = spec
        self.records = records
        self.gates = gates
        self.theta = theta
        self.xt = xt
        self.xpt = xpt
        self.t = t

    def __iter__(self):
        return iter(self.gates)

    def __len__(self):
        return len(self.gates)

    def __getitem__(self, i):
        return self.gates[i]

    def chain_factor(self, rec: "_Rec") -> float:
        """d(gate angle)/d(parameter) for one parameterized record."""
        chain = rec.sign
        feat = self.xt if rec.side == 0 else self.xpt
        if rec.f1 >= 0:
            chain *= feat[rec.f1]
        if rec.f2 >= 0:
            chain *= feat[rec.f2]
        if rec.use_t:
            chain *= self.t
        return chain


def build_kernel_circuit(spec: AnsatzSpec, x, x_prime, theta: ParameterSet,
                         t: float) -> BoundKernelCircuit:
    """Kernel-element program V_t . U(x) . U(x')^dag . V_t^dag on |0...0>."""
    theta.validate_for(spec)
    xt = _extend_features(spec, x)
    xpt = _extend_features(spec, x_prime)
    records = _kernel_records(spec)
    gates = _materialize(records, xt, xpt, float(t), theta.flatten())
    return BoundKernelCircuit(spec, records, gates, theta, xt, xpt, float(t))


@dataclass(frozen=True)
class TangentTerm:
    """One shifted-evaluation pair of the parameter-shift rule.

    The derivative contribution of this occurrence is
    ``coefficient * (f(angle + shift) - f(angle - shift))`` where the
    shift applies to the stored gate angle at ``gate_index``.  The
    coefficient folds together the rule's 1/2 (for half-angle rotation
    gates), the x2 for ``exp(-i theta Z_S)`` diagonal phases (expressed
    as a pi/4 shift of the stored angle with unit weight), and the
    chain-rule factor of the angle in the parameter (data features,
    time, adjoint sign).
    """

    gate_index: int
    shift: float
    coefficient: float


def shift_rule_tangents(circuit: BoundKernelCircuit, parameter_index: int) -> list:
    """Occurrence-wise shift tangents of one trainable parameter."""
    spec = circuit.spec
    if not 0 <= parameter_index < spec.n_params:
        raise UsageError(
            f"parameter index {parameter_index} out of range [0, {spec.n_params})"
        )
    terms = []
    for pos, rec in enumerate(circuit.records):
        if rec.pidx != parameter_index:
            continue
        chain = circuit.chain_factor(rec)
        terms.append(TangentTerm(pos, _SHIFT[rec.kind], _BASE_W[rec.kind] * chain))
    return terms


def shift_rule_derivative(circuit: BoundKernelCircuit, parameter_index: int) -> float:
    """Reference evaluation of d(prob_all_zeros)/d(theta_p) by circuit reruns.

    Sums the +/- shifted full-circuit evaluations over every occurrence.
    ``KernelTemplate.gradients`` computes the same values from cached
    sweep states; this version exists as the plainly-auditable path.
    """
    total = 0.0
    for term in shift_rule_tangents(circuit, parameter_index):
        vals = []
        for sgn in (+1.0, -1.0):
            gates = list(circuit.gates)
            g = gates[term.gate_index]
            gates[term.gate_index] = GateOp(g.kind, g.targets, g.angle + sgn * term.shift)
            state = sim.run_program(sim.new_zero_state(circuit.spec.n_qubits), gates)
            vals.append(sim.prob_all_zeros(state))
        total += term.coefficient * (vals[0] - vals[1])
    return total


# ---------------------------------------------------------------------------
# batched evaluation

_CHUNK_COMPLEX = 1 << 23  # cap on rows*dim complex temporaries per chunk


class KernelTemplate:
    """Compiled kernel-circuit family for one spec: batch probs and grads.

    Rows are independent (x, x', t) bindings of the same gate structure.
    Exact-mode kernels, Gram assembly, and the training gradient all run
    through here.
    """

    def __init__(self, spec: AnsatzSpec):
        self.spec = spec
        self.records = _kernel_records(spec)
        self.compiled = sim.CompiledProgram(
            spec.n_qubits, [(r.kind, r.targets) for r in self.records]
        )
        self.param_positions = [i for i, r in enumerate(self.records) if r.pidx >= 0]
        self.param_pidx = np.array(
            [self.records[i].pidx for i in self.param_positions], dtype=np.intp
        )
        self.param_shifts = np.array(
            [_SHIFT[self.records[i].kind] for i in self.param_positions]
        )
        self.param_base_w = np.array(
            [_BASE_W[self.records[i].kind] for i in self.param_positions]
        )

    def _rows(self, X, XP, ts, theta_flat):
        """Angle matrix (B, G) and chain-factor matrix (B, G)."""
        n = self.spec.n_qubits
        idx = np.arange(n) % self.spec.n_features
        Xt = np.asarray(X, dtype=np.float64)[:, idx]
        XPt = np.asarray(XP, dtype=np.float64)[:, idx]
        ts = np.asarray(ts, dtype=np.float64)
        batch = Xt.shape[0]
        G = len(self.records)
        angles = np.empty((batch, G))
        chains = np.zeros((batch, G))
        for g, rec in enumerate(self.records):
            if rec.kind == CX:
                angles[:, g] = 0.0
                continue
            factor = np.full(batch, rec.sign)
            feat = Xt if rec.side == 0 else XPt
            if rec.f1 >= 0:
                factor = factor * feat[:, rec.f1]
            if rec.f2 >= 0:
                factor = factor * feat[:, rec.f2]
            if rec.use_t:
                factor = factor * ts
            if rec.pidx >= 0:
                chains[:, g] = factor
                angles[:, g] = factor * theta_flat[rec.pidx]
            else:
                angles[:, g] = factor
        return angles, chains

    def _chunks(self, batch: int):
        per = max(1, _CHUNK_COMPLEX // max(1, self.compiled.dim))
        for lo in range(0, batch, per):
            yield lo, min(batch, lo + per)

    def probs(self, X, XP, ts, theta: ParameterSet) -> np.ndarray:
        """Exact kernel values for each (x, x', t) row."""
        theta.validate_for(self.spec)
        flat = theta.flatten()
        X = np.atleast_2d(X)
        XP = np.atleast_2d(XP)
        out = np.empty(X.shape[0])
        for lo, hi in self._chunks(X.shape[0]):
            angles, _ = self._rows(X[lo:hi], XP[lo:hi], np.asarray(ts)[lo:hi], flat)
            out[lo:hi] = self.compiled.run_probs0(angles)
        return out

    def states(self, X, XP, ts, theta: ParameterSet) -> np.ndarray:
        """Final statevectors (B, 2^n) for each row; used by shot sampling."""
        theta.validate_for(self.spec)
        flat = theta.flatten()
        X = np.atleast_2d(X)
        XP = np.atleast_2d(XP)
        out = np.empty((X.shape[0], self.compiled.dim), dtype=np.complex128)
        for lo, hi in self._chunks(X.shape[0]):
            angles, _ = self._rows(X[lo:hi], XP[lo:hi], np.asarray(ts)[lo:hi], flat)
            out[lo:hi] = self.compiled.run(angles)
        return out

    def gradients(self, X, XP, ts, theta: ParameterSet) -> np.ndarray:
        """Shift-rule gradient of each row's kernel value w.r.t. all parameters.

        Per occurrence of a parameter, evaluates the +/- shifted circuit
        (via cached prefix/suffix sweeps) and combines with the chain
        factor; rows return as (B, n_params).
        """
        theta.validate_for(self.spec)
        flat = theta.flatten()
        X = np.atleast_2d(X)
        XP = np.atleast_2d(XP)
        n_params = self.spec.n_params
        grad = np.empty((X.shape[0], n_params))
        # occurrence -> parameter scatter as a dense indicator (P x n_params)
        scatter = np.zeros((len(self.param_positions), n_params))
        scatter[np.arange(len(self.param_positions)), self.param_pidx] = 1.0
        for lo, hi in self._chunks(X.shape[0]):
            angles, chains = self._rows(X[lo:hi], XP[lo:hi], np.asarray(ts)[lo:hi], flat)
            plus, minus = self.compiled.shift_tap_probs(
                angles, self.param_positions, self.param_shifts
            )
            contrib = (plus - minus) * chains[:, self.param_positions]
            contrib *= self.param_base_w[None, :]
            grad[lo:hi] = contrib @ scatter
        return grad


_template_cache: dict = {}


def kernel_template(spec: AnsatzSpec) -> KernelTemplate:
    """Memoized template; compiling the structure is spec-dependent only."""
    tpl = _template_cache.get(spec)
    if tpl is None:
        tpl = KernelTemplate(spec)
        _template_cache[spec] = tpl
    return tpl
