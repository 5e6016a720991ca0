"""Embedding-overlap probe of the learned evolution operator.

For a trained (beta, gamma), the overlap between the data-independent
embedding spaces at times t and t + dt reduces to the all-zeros
probability of W^dag D(gamma, dt) W applied to the zero state; plotting
it over dt reveals how strongly the learned inner-product space actually
moves with time.  (The data-integrated form of the overlap differs from
this quantity only by the constant feature-volume factor, which is set
to one here; no numerical integration is involved.)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import ansatz, sim
from .ansatz import AnsatzSpec
from .errors import UsageError


@dataclass
class ProbeResult:
    """Overlap values on a dt grid, plus markers at the training times."""

    deltas: np.ndarray
    values: np.ndarray
    marker_times: Optional[np.ndarray] = None
    marker_values: Optional[np.ndarray] = None


def _overlap_values(spec: AnsatzSpec, beta, gamma, deltas) -> np.ndarray:
    gamma = np.asarray(gamma, dtype=np.float64).reshape(-1)
    deltas = np.asarray(deltas, dtype=np.float64).reshape(-1)
    w_prog = ansatz.build_eigenvector_circuit(spec, beta)
    template = ansatz.build_time_evolution(spec, gamma, 1.0, w_prog)
    compiled = sim.CompiledProgram.from_gates(spec.n_qubits, template)
    base = sim.program_angles(template)
    angles = np.tile(base, (len(deltas), 1))
    d_lo = len(w_prog)
    angles[:, d_lo:d_lo + spec.n_gamma] = np.outer(deltas, gamma)
    return compiled.run_probs0(angles)


def probe(spec: AnsatzSpec, beta, gamma, deltas,
          train_times=None) -> ProbeResult:
    """Evaluate the overlap on a dt grid; dt = 0 gives exactly 1.

    ``train_times``, when given, adds marker evaluations at the grid the
    kernel was trained on.
    """
    deltas = np.asarray(deltas, dtype=np.float64).reshape(-1)
    if len(deltas) == 0:
        raise UsageError("need at least one dt value")
    values = _overlap_values(spec, beta, gamma, deltas)
    marker_times = marker_values = None
    if train_times is not None:
        marker_times = np.asarray(train_times, dtype=np.float64).reshape(-1)
        marker_values = _overlap_values(spec, beta, gamma, marker_times)
    return ProbeResult(deltas, values, marker_times, marker_values)
