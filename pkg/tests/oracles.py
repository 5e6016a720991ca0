"""Independent oracles used by the test suite.

Each oracle deliberately avoids the code path it checks: the inner-QP
oracle is a multilevel grid scan over the feasible polytope, the SVM
oracle enumerates bound configurations of the dual, and the probe oracle
builds the dense Hamiltonian and exponentiates it.
"""

import itertools
import math

import numpy as np
import scipy.linalg

from tsqk import ansatz, sim


# ---------------------------------------------------------------------------
# KOMD inner problem: grid scan over the product of class simplices

def _bounded_compositions(lows, highs, total):
    """Integer tuples with lows[i] <= k_i <= highs[i] summing to total."""
    m = len(lows)
    if m == 1:
        if lows[0] <= total <= highs[0]:
            yield (total,)
        return
    rest_lo = sum(lows[1:])
    rest_hi = sum(highs[1:])
    first_lo = max(lows[0], total - rest_hi)
    first_hi = min(highs[0], total - rest_lo)
    for first in range(first_lo, first_hi + 1):
        for rest in _bounded_compositions(lows[1:], highs[1:], total - first):
            yield (first,) + rest


def _grid_points(m, resolution, center=None, radius=None):
    if center is None:
        lows = [0] * m
        highs = [resolution] * m
    else:
        lows = [max(0, math.ceil((c - radius) * resolution)) for c in center]
        highs = [min(resolution, math.floor((c + radius) * resolution)) for c in center]
    pts = [np.array(comp, dtype=np.float64) / resolution
           for comp in _bounded_compositions(lows, highs, resolution)]
    return np.array(pts)


def komd_grid_min(k_e, labels, lam, base_resolution=25, levels=7):
    """Grid-scan minimum of the margin objective over the feasible polytope.

    Full scan at the base resolution, then repeated local rescans at
    doubled resolution around the incumbent.  Valid for convex
    objectives; returns the best loss found.
    """
    labels = np.asarray(labels)
    pos = np.where(labels == 1)[0]
    neg = np.where(labels == -1)[0]
    y = labels.astype(np.float64)
    a_mat = k_e * np.outer(y, y)
    app = a_mat[np.ix_(pos, pos)]
    apn = a_mat[np.ix_(pos, neg)]
    ann = a_mat[np.ix_(neg, neg)]

    best = np.inf
    inc_pos = inc_neg = None
    for level in range(levels):
        res = base_resolution * 2**level
        if level == 0:
            grid_pos = _grid_points(len(pos), res)
            grid_neg = _grid_points(len(neg), res)
        else:
            radius = 8.0 / (res // 2)
            grid_pos = _grid_points(len(pos), res, inc_pos, radius)
            grid_neg = _grid_points(len(neg), res, inc_neg, radius)
        qpp = np.einsum("ai,ij,aj->a", grid_pos, app, grid_pos)
        qnn = np.einsum("bi,ij,bj->b", grid_neg, ann, grid_neg)
        cross = grid_pos @ apn @ grid_neg.T
        npos = (grid_pos**2).sum(axis=1)
        nneg = (grid_neg**2).sum(axis=1)
        total = ((1.0 - lam) * (qpp[:, None] + 2.0 * cross + qnn[None, :])
                 + lam * (npos[:, None] + nneg[None, :]))
        a_idx, b_idx = np.unravel_index(np.argmin(total), total.shape)
        if total[a_idx, b_idx] < best:
            best = float(total[a_idx, b_idx])
        inc_pos = grid_pos[a_idx]
        inc_neg = grid_neg[b_idx]
    return best


# ---------------------------------------------------------------------------
# soft-margin SVM dual: enumerate bound configurations

def svm_dual_oracle(gram, labels, c_bound):
    """Exact max of the dual by enumerating {0, C, free} per point.

    For each configuration, the free block solves the stationarity system
    with the equality constraint; feasible candidates' objectives are
    compared.  Exponential in N, fine for N <= 8.
    """
    gram = np.asarray(gram, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    n = len(y)
    q_mat = gram * np.outer(y, y)

    def objective(alpha):
        return float(alpha.sum() - 0.5 * alpha @ q_mat @ alpha)

    best = -np.inf
    best_alpha = None
    for config in itertools.product((0, 1, 2), repeat=n):
        alpha = np.zeros(n)
        fixed = 0.0
        free = [i for i, cfg in enumerate(config) if cfg == 2]
        for i, cfg in enumerate(config):
            if cfg == 1:
                alpha[i] = c_bound
        fixed = float(np.dot(alpha, y))
        if free:
            # stationarity on the free block with sum alpha_i y_i = 0:
            # Q_ff a_f + y_f b = 1 - Q_fb a_b ;  y_f . a_f = -fixed
            m = len(free)
            kkt = np.zeros((m + 1, m + 1))
            kkt[:m, :m] = q_mat[np.ix_(free, free)]
            kkt[:m, m] = y[free]
            kkt[m, :m] = y[free]
            rhs = np.zeros(m + 1)
            bound_idx = [i for i, cfg in enumerate(config) if cfg == 1]
            rhs[:m] = 1.0 - q_mat[np.ix_(free, bound_idx)] @ alpha[bound_idx] \
                if bound_idx else 1.0
            rhs[m] = -fixed
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                continue
            alpha[free] = sol[:m]
            if np.any(alpha[free] < -1e-9) or np.any(alpha[free] > c_bound + 1e-9):
                continue
        elif abs(fixed) > 1e-9:
            continue
        if abs(float(np.dot(alpha, y))) > 1e-9:
            continue
        value = objective(alpha)
        if value > best:
            best = value
            best_alpha = alpha
    return best, best_alpha


# ---------------------------------------------------------------------------
# probe: dense Hamiltonian exponentiation

def probe_expm_oracle(spec, beta, gamma, deltas):
    """Overlap values from expm(-i * dt * H) with H built densely."""
    dim = 2**spec.n_qubits
    w_prog = ansatz.build_eigenvector_circuit(spec, beta)
    w_mat = np.zeros((dim, dim), dtype=np.complex128)
    for b in range(dim):
        col = np.zeros(dim, dtype=np.complex128)
        col[b] = 1.0
        state = sim.StateVector(spec.n_qubits, col)
        w_mat[:, b] = sim.run_program(state, w_prog).amplitudes
    diag = np.zeros(dim)
    for coeff, subset in zip(gamma, spec.zstring_basis()):
        signs = np.ones(dim)
        for q in subset:
            signs *= 1.0 - 2.0 * ((np.arange(dim) >> q) & 1)
        diag += coeff * signs
    h_mat = w_mat.conj().T @ np.diag(diag) @ w_mat
    values = []
    for dt in np.asarray(deltas, dtype=np.float64).reshape(-1):
        u_mat = scipy.linalg.expm(-1j * dt * h_mat)
        values.append(abs(u_mat[0, 0]) ** 2)
    return np.array(values)
