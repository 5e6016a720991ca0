"""Time-resolved fidelity kernels, Gram stacks, and their weighted sums.

The kernel value for a feature pair at time t is the all-zeros
probability of the composed circuit from :mod:`tsqk.ansatz`, either
exactly from the statevector or as an all-zeros frequency over a seeded
shot sample.  Gram assembly computes the upper triangle once and
mirrors it; in exact mode the diagonal is pinned to 1 (the circuit for
x = x' is a unitary times its own adjoint).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import ansatz, data, sim
from .ansatz import AnsatzSpec, ParameterSet
from .errors import UsageError

EXACT = "exact"
SHOTS = "shots"


@dataclass(frozen=True)
class EvalMode:
    """Kernel evaluation mode: exact statevector or seeded shot sampling."""

    kind: str
    shots: Optional[int] = None
    seed: Optional[int] = None

    def __post_init__(self):
        if self.kind not in (EXACT, SHOTS):
            raise UsageError(f"unknown mode {self.kind!r}")
        if self.kind == SHOTS:
            if not self.shots or self.shots < 1:
                raise UsageError("shot mode needs a positive shot count")
            if self.seed is None:
                raise UsageError("shot mode needs a seed")

    @classmethod
    def exact(cls) -> "EvalMode":
        return cls(EXACT)

    @classmethod
    def with_shots(cls, shots: int, seed: int) -> "EvalMode":
        return cls(SHOTS, shots=shots, seed=seed)


EXACT_MODE = EvalMode.exact()


@dataclass
class GramStack:
    """Per-time Gram matrices K_t on a shared time grid."""

    times: np.ndarray
    mats: np.ndarray  # (p, N, N)
    mode: EvalMode = EXACT_MODE

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.mats = np.asarray(self.mats, dtype=np.float64)
        if self.mats.ndim != 3 or self.mats.shape[0] != len(self.times):
            raise UsageError("mats must be (p, N, N) aligned with times")
        if self.mats.shape[1] != self.mats.shape[2]:
            raise UsageError("each K_t must be square")

    @property
    def p(self) -> int:
        return len(self.times)

    @property
    def n(self) -> int:
        return self.mats.shape[1]

    def equal_weight_sum(self) -> np.ndarray:
        return self.mats.sum(axis=0)


@dataclass
class KernelWeights:
    """Convex weights over the time grid (entries >= 0, summing to 1)."""

    eta: np.ndarray

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=np.float64).reshape(-1)
        if np.any(eta < -1e-12):
            raise UsageError(f"weights must be >= -1e-12, got min {eta.min()}")
        eta = np.maximum(eta, 0.0)
        if abs(eta.sum() - 1.0) > 1e-12:
            raise UsageError(f"weights must sum to 1, got {eta.sum()}")
        self.eta = eta

    def __len__(self):
        return len(self.eta)


@dataclass
class TrainedTSHK:
    """A trained kernel: circuit spec, optimal angles and time weights.

    ``times`` is the data grid; ``evolution_times`` is the per-slice time
    fed to the evolution circuit (equal to ``times`` except in the
    time-independence ablation, which pins it to a constant).
    """

    spec: AnsatzSpec
    theta_star: ParameterSet
    eta_star: KernelWeights
    times: np.ndarray
    feature_scaling: Optional[data.FeatureScaler] = None
    evolution_times: Optional[np.ndarray] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        if np.any(np.diff(self.times) <= 0):
            raise UsageError("times must be strictly increasing")
        if self.evolution_times is None:
            self.evolution_times = self.times.copy()
        self.evolution_times = np.asarray(self.evolution_times, dtype=np.float64)
        if len(self.evolution_times) != len(self.times):
            raise UsageError("evolution_times must align with times")
        if len(self.eta_star) != len(self.times):
            raise UsageError("eta must have one weight per time step")
        self.theta_star.validate_for(self.spec)

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "theta_star": self.theta_star.to_dict(),
            "eta_star": self.eta_star.eta.tolist(),
            "times": self.times.tolist(),
            "evolution_times": self.evolution_times.tolist(),
            "feature_scaling": (self.feature_scaling.to_dict()
                                if self.feature_scaling else None),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainedTSHK":
        return cls(
            spec=AnsatzSpec.from_dict(d["spec"]),
            theta_star=ParameterSet.from_dict(d["theta_star"]),
            eta_star=KernelWeights(np.array(d["eta_star"])),
            times=np.array(d["times"]),
            feature_scaling=(data.FeatureScaler.from_dict(d["feature_scaling"])
                             if d.get("feature_scaling") else None),
            evolution_times=np.array(d["evolution_times"]),
        )


def _element_seed(seed: int, l: int, i: int, j: int) -> int:
    """Stable per-element sub-seed so evaluation order cannot matter."""
    return int(np.random.SeedSequence((seed, l, i, j)).generate_state(1)[0])


def _shot_estimate(state_row: np.ndarray, shots: int, seed: int) -> float:
    state = sim.StateVector(int(np.log2(len(state_row))), state_row)
    outcomes = sim.sample_outcomes(state, shots, seed)
    return float(np.count_nonzero(outcomes == 0)) / shots


def kappa_t(spec: AnsatzSpec, theta: ParameterSet, x, x_prime, t: float,
            mode: EvalMode = EXACT_MODE) -> float:
    """Kernel value for one feature pair at one time."""
    tpl = ansatz.kernel_template(spec)
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    xp = np.asarray(x_prime, dtype=np.float64).reshape(1, -1)
    if mode.kind == EXACT:
        return float(tpl.probs(x, xp, [t], theta)[0])
    state = tpl.states(x, xp, [t], theta)[0]
    return _shot_estimate(state, mode.shots, mode.seed)


def _check_grid(instances, times):
    times = np.asarray(times, dtype=np.float64)
    p = len(times)
    for inst in instances:
        if inst.values.shape[0] != p:
            raise UsageError(
                f"instance has {inst.values.shape[0]} steps, time grid has {p}"
            )
    return times


def gram_stack(spec: AnsatzSpec, theta: ParameterSet, instances,
               times, mode: EvalMode = EXACT_MODE) -> GramStack:
    """All per-time Gram matrices over a set of instances.

    ``times`` holds the evolution time per slice.  Exact mode computes
    the strict upper triangle, mirrors it, and pins the diagonal to 1;
    shot mode samples the diagonal as well, each element from its own
    seeded sub-stream.
    """
    times = _check_grid(instances, times)
    n = len(instances)
    p = len(times)
    tpl = ansatz.kernel_template(spec)

    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    if mode.kind == SHOTS:
        pairs = [(i, i) for i in range(n)] + pairs
    rows_x = np.empty((len(pairs) * p, spec.n_features))
    rows_xp = np.empty_like(rows_x)
    rows_t = np.empty(len(pairs) * p)
    for k, (i, j) in enumerate(pairs):
        lo = k * p
        rows_x[lo:lo + p] = instances[i].values
        rows_xp[lo:lo + p] = instances[j].values
        rows_t[lo:lo + p] = times

    mats = np.empty((p, n, n))
    if mode.kind == EXACT:
        probs = tpl.probs(rows_x, rows_xp, rows_t, theta)
        for k, (i, j) in enumerate(pairs):
            vals = probs[k * p:(k + 1) * p]
            mats[:, i, j] = vals
            mats[:, j, i] = vals
        idx = np.arange(n)
        mats[:, idx, idx] = 1.0
    else:
        states = tpl.states(rows_x, rows_xp, rows_t, theta)
        for k, (i, j) in enumerate(pairs):
            for l in range(p):
                est = _shot_estimate(states[k * p + l], mode.shots,
                                     _element_seed(mode.seed, l, i, j))
                mats[l, i, j] = est
                mats[l, j, i] = est
    return GramStack(times, mats, mode)


def combined_kernel(stack: GramStack, eta: KernelWeights) -> np.ndarray:
    """Weighted sum over the time axis of the stack."""
    if len(eta) != stack.p:
        raise UsageError(f"eta has {len(eta)} weights, stack has {stack.p} slices")
    return np.tensordot(eta.eta, stack.mats, axes=1)


def cross_gram(tshk: TrainedTSHK, train, test,
               mode: EvalMode = EXACT_MODE) -> Tuple[np.ndarray, np.ndarray]:
    """Per-time test-vs-train kernel matrices and their combined sum.

    Rows index test instances, columns training instances.  The model's
    stored feature scaling is applied to both sides.
    """
    train = data.scale_instances(train, tshk.feature_scaling)
    test = data.scale_instances(test, tshk.feature_scaling)
    times = _check_grid(list(train) + list(test), tshk.times)
    ev_times = tshk.evolution_times
    p = len(times)
    m, n = len(test), len(train)
    tpl = ansatz.kernel_template(tshk.spec)

    rows_x = np.empty((m * n * p, tshk.spec.n_features))
    rows_xp = np.empty_like(rows_x)
    rows_t = np.empty(m * n * p)
    k = 0
    for a in range(m):
        for b in range(n):
            rows_x[k:k + p] = test[a].values
            rows_xp[k:k + p] = train[b].values
            rows_t[k:k + p] = ev_times
            k += p

    stack = np.empty((p, m, n))
    if mode.kind == EXACT:
        probs = tpl.probs(rows_x, rows_xp, rows_t, tshk.theta_star)
        stack[:] = probs.reshape(m, n, p).transpose(2, 0, 1)
    else:
        states = tpl.states(rows_x, rows_xp, rows_t, tshk.theta_star)
        k = 0
        for a in range(m):
            for b in range(n):
                for l in range(p):
                    stack[l, a, b] = _shot_estimate(
                        states[k], mode.shots,
                        _element_seed(mode.seed, l, a, n + b))
                    k += 1
    combined = np.tensordot(tshk.eta_star.eta, stack, axes=1)
    return stack, combined


def model_gram(tshk: TrainedTSHK, instances,
               mode: EvalMode = EXACT_MODE) -> Tuple[GramStack, np.ndarray]:
    """Square Gram stack of a trained model over one instance set,
    with the model's scaling applied, plus the eta-combined matrix."""
    scaled = data.scale_instances(instances, tshk.feature_scaling)
    _check_grid(scaled, tshk.times)
    stack = gram_stack(tshk.spec, tshk.theta_star, scaled,
                       tshk.evolution_times, mode)
    return stack, combined_kernel(stack, tshk.eta_star)


# ---------------------------------------------------------------------------
# export

def save_gram_stack(stack: GramStack, directory, prefix: str = "gram"):
    """One CSV per time slice plus a JSON manifest (times, N, mode, seed)."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for l in range(stack.p):
        path = os.path.join(directory, f"{prefix}_t{l:03d}.csv")
        with open(path, "w") as fh:
            for row in stack.mats[l]:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        paths.append(os.path.basename(path))
    manifest = {
        "times": stack.times.tolist(),
        "n": stack.n,
        "mode": stack.mode.kind,
        "shots": stack.mode.shots,
        "seed": stack.mode.seed,
        "slices": paths,
    }
    with open(os.path.join(directory, f"{prefix}_manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_gram_stack(directory, prefix: str = "gram") -> GramStack:
    with open(os.path.join(directory, f"{prefix}_manifest.json")) as fh:
        manifest = json.load(fh)
    mats = []
    for name in manifest["slices"]:
        mats.append(np.loadtxt(os.path.join(directory, name), delimiter=",", ndmin=2))
    mode = (EvalMode.exact() if manifest["mode"] == EXACT
            else EvalMode.with_shots(manifest["shots"], manifest["seed"]))
    return GramStack(np.array(manifest["times"]), np.array(mats), mode)
