"""Kernel training: max over circuit angles of the min of a convex
margin objective over per-class dual simplices.

The inner problem minimizes
``(1 - lambda) * phi^T Yhat K_e Yhat phi + lambda * ||phi||^2`` over the
product of the two class probability simplices; it is solved by
accelerated projected gradient with exact sort-based simplex projection.
The outer ascent uses the envelope theorem: with lambda > 0 the inner
minimizer is unique, so the gradient of the inner minimum equals the
partial gradient at the fixed minimizer, assembled from parameter-shift
kernel derivatives.  Optimal time weights come from the per-time
quadratic forms of the final dual solution.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import ansatz, data, kernel
from .ansatz import AnsatzSpec, ParameterSet
from .errors import DegenerateKernelError, TrainingError, UsageError
from .kernel import EXACT_MODE, GramStack, KernelWeights, TrainedTSHK


@dataclass
class KomdProblem:
    """One margin-separation instance: equal-weight Gram, labels, penalty."""

    k_e: np.ndarray
    labels: np.ndarray
    lam: float

    def __post_init__(self):
        self.k_e = np.asarray(self.k_e, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        n = len(self.labels)
        if self.k_e.shape != (n, n):
            raise UsageError(f"K_e shape {self.k_e.shape} does not match {n} labels")
        if np.max(np.abs(self.k_e - self.k_e.T)) > 1e-8:
            raise UsageError("K_e must be symmetric")
        if not 0.0 <= self.lam <= 1.0:
            raise UsageError(f"lambda must be in [0, 1], got {self.lam}")
        if not (np.any(self.labels == 1) and np.any(self.labels == -1)):
            raise TrainingError("the separation loss is undefined without both classes")

    @property
    def n(self) -> int:
        return len(self.labels)


@dataclass
class DualSolution:
    phi: np.ndarray
    loss_value: float
    kkt_residual: float
    iterations: int = 0


@dataclass
class TrainConfig:
    """Optimizer settings for the max-min training loop."""

    iterations: int = 250
    batch_size: int = 4
    lam: float = 0.1
    learning_rate: float = 0.05
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    restarts: int = 1
    seed: int = 0
    inner_tol: float = 1e-8
    inner_max_iter: int = 10_000
    eval_fraction: float = 0.25
    time_mode: str = "actual"  # "actual" | "fixed"
    fixed_time: float = 1.0

    def __post_init__(self):
        if self.iterations < 0:
            raise UsageError("iterations must be >= 0")
        if self.batch_size < 2:
            raise UsageError("batch_size must be >= 2")
        if not 0.0 <= self.lam <= 1.0:
            raise UsageError("lambda must be in [0, 1]")
        if self.restarts < 1:
            raise UsageError("restarts must be >= 1")
        if self.time_mode not in ("actual", "fixed"):
            raise UsageError(f"unknown time_mode {self.time_mode!r}")
        if not 0.0 < self.eval_fraction < 1.0:
            raise UsageError("eval_fraction must be in (0, 1)")


def komd_loss(problem: KomdProblem, phi) -> float:
    """(1 - lambda) phi^T Yhat K_e Yhat phi + lambda ||phi||^2."""
    phi = np.asarray(phi, dtype=np.float64).reshape(-1)
    if len(phi) != problem.n:
        raise UsageError(f"phi must have {problem.n} entries, got {len(phi)}")
    v = problem.labels * phi
    quad = float(v @ problem.k_e @ v)
    return (1.0 - problem.lam) * quad + problem.lam * float(phi @ phi)


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the unit simplex (sort-based)."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 1:
        return np.ones(1)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    rho = ind[u - css / ind > 0][-1]
    tau = css[rho - 1] / rho
    return np.maximum(v - tau, 0.0)


def solve_inner(problem: KomdProblem, tol: float = 1e-8,
                max_iter: int = 10_000) -> DualSolution:
    """Minimize the margin objective over the two class simplices.

    Accelerated projected gradient (constant step 1/L with
    L = 2((1-lambda)||K_e||_2 + lambda), momentum restarts) stopping when
    the projected-gradient fixed-point residual falls below ``tol``.
    """
    y = problem.labels.astype(np.float64)
    pos = np.where(problem.labels == 1)[0]
    neg = np.where(problem.labels == -1)[0]
    a_mat = problem.k_e * np.outer(y, y)
    lam = problem.lam

    def grad(phi):
        return 2.0 * (1.0 - lam) * (a_mat @ phi) + 2.0 * lam * phi

    def project(phi):
        out = np.empty_like(phi)
        out[pos] = project_simplex(phi[pos])
        out[neg] = project_simplex(phi[neg])
        return out

    spectral = float(np.max(np.abs(np.linalg.eigvalsh(problem.k_e)))) if problem.n else 0.0
    step_l = max(2.0 * ((1.0 - lam) * spectral + lam), 1e-12)

    x_prev = np.empty(problem.n)
    x_prev[pos] = 1.0 / len(pos)
    x_prev[neg] = 1.0 / len(neg)
    y_vec = x_prev.copy()
    t_mom = 1.0
    x = x_prev
    residual = math.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        x = project(y_vec - grad(y_vec) / step_l)
        residual = float(np.max(np.abs(x - project(x - grad(x)))))
        if residual <= tol:
            break
        if np.dot(y_vec - x, x - x_prev) > 0.0:
            t_mom = 1.0
            y_vec = x
        else:
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_mom * t_mom))
            y_vec = x + ((t_mom - 1.0) / t_next) * (x - x_prev)
            t_mom = t_next
        x_prev = x
    return DualSolution(x, komd_loss(problem, x), residual, iterations)


# ---------------------------------------------------------------------------
# outer ascent

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0)


def adam_step(params: np.ndarray, grad: np.ndarray, state: AdamState,
              lr: float, betas: Tuple[float, float] = (0.9, 0.999),
              eps: float = 1e-8) -> Tuple[np.ndarray, AdamState]:
    """One Adam ascent update (gradient ascent: params move along +grad)."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise UsageError("parameter, gradient and state shapes must match")
    b1, b2 = betas
    step = state.step + 1
    m = b1 * state.m + (1.0 - b1) * grad
    v = b2 * state.v + (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1**step)
    v_hat = v / (1.0 - b2**step)
    new_params = params + lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_params, AdamState(m, v, step)


def sample_batch(dataset, n_batch: int, rng: np.random.Generator) -> list:
    """Uniform subset without replacement, resampled until both classes appear."""
    instances = dataset.instances if isinstance(dataset, data.Dataset) else list(dataset)
    n = len(instances)
    if n_batch < 2:
        raise UsageError("batch size must be >= 2")
    if n_batch > n:
        raise UsageError(f"batch size {n_batch} exceeds dataset size {n}")
    labels = np.array([inst.label for inst in instances])
    if not (np.any(labels == 1) and np.any(labels == -1)):
        raise TrainingError("cannot form a two-class batch from a single-class set")
    for _ in range(10_000):
        idx = rng.choice(n, size=n_batch, replace=False)
        chosen = labels[idx]
        if np.any(chosen == 1) and np.any(chosen == -1):
            return [instances[i] for i in idx]
    raise TrainingError("failed to draw a batch containing both classes")


def outer_gradient(spec: AnsatzSpec, theta: ParameterSet, batch,
                   times, phi_star, lam: float) -> np.ndarray:
    """Envelope gradient of the inner minimum w.r.t. every circuit angle.

    With the dual solution held fixed:
    (1 - lambda) * sum_ij phi_i phi_j y_i y_j sum_l dK_t_l[i, j]/dtheta,
    kernel partials by the parameter-shift rule.  Batch instances must
    already carry embedded (scaled) features.
    """
    phi_star = np.asarray(phi_star, dtype=np.float64).reshape(-1)
    n = len(batch)
    if len(phi_star) != n:
        raise UsageError("phi must match the batch size")
    if lam >= 1.0:
        return np.zeros(spec.n_params)
    times = np.asarray(times, dtype=np.float64)
    p = len(times)
    labels = np.array([inst.label for inst in batch], dtype=np.float64)

    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    if not pairs:
        return np.zeros(spec.n_params)
    rows_x = np.empty((len(pairs) * p, spec.n_features))
    rows_xp = np.empty_like(rows_x)
    rows_t = np.empty(len(pairs) * p)
    weights = np.empty(len(pairs) * p)
    for k, (i, j) in enumerate(pairs):
        lo = k * p
        rows_x[lo:lo + p] = batch[i].values
        rows_xp[lo:lo + p] = batch[j].values
        rows_t[lo:lo + p] = times
        weights[lo:lo + p] = 2.0 * phi_star[i] * phi_star[j] * labels[i] * labels[j]

    grads = ansatz.kernel_template(spec).gradients(rows_x, rows_xp, rows_t, theta)
    return (1.0 - lam) * (weights @ grads)


def extract_weights(stack: GramStack, labels, phi_star) -> KernelWeights:
    """Per-time quadratic forms of the dual solution, clamped and normalized."""
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    phi_star = np.asarray(phi_star, dtype=np.float64).reshape(-1)
    if stack.n != len(labels) or stack.n != len(phi_star):
        raise UsageError("stack, labels and phi dimensions must agree")
    v = labels * phi_star
    forms = np.einsum("lij,i,j->l", stack.mats, v, v)
    forms = np.maximum(forms, 0.0)
    denom = forms.sum()
    if denom <= 0.0:
        raise DegenerateKernelError("all per-time quadratic forms vanished")
    return KernelWeights(forms / denom)


# ---------------------------------------------------------------------------
# full training loop

@dataclass
class RestartSummary:
    index: int
    eval_loss: float
    status: str
    final_train_loss: float = math.nan


@dataclass
class TrainResult:
    tshk: TrainedTSHK
    trace: list            # rows: (restart, iteration, loss, loss / batch^2)
    restarts: list
    best_restart: int


def _stratified_split(dataset: data.Dataset, eval_fraction: float,
                      rng: np.random.Generator):
    """Per-class shuffled split keeping both classes in both parts."""
    labels = dataset.labels()
    train_idx, eval_idx = [], []
    for cls in (1, -1):
        idx = np.where(labels == cls)[0]
        idx = rng.permutation(idx)
        k = max(1, int(round(eval_fraction * len(idx))))
        k = min(k, len(idx) - 1)
        eval_idx.extend(idx[:k])
        train_idx.extend(idx[k:])
    return sorted(train_idx), sorted(eval_idx)


def _evolution_times(times: np.ndarray, config: TrainConfig) -> np.ndarray:
    if config.time_mode == "fixed":
        return np.full(len(times), config.fixed_time)
    return times.copy()


def _full_set_loss(spec, theta, instances, labels, ev_times, config):
    stack = kernel.gram_stack(spec, theta, instances, ev_times, EXACT_MODE)
    problem = KomdProblem(stack.equal_weight_sum(), labels, config.lam)
    return solve_inner(problem, config.inner_tol, config.inner_max_iter), stack


def _run_restart(r: int, spec, train_insts, ev_times, config):
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((config.seed, r))))
    theta_flat = ansatz.init_parameters(spec, rng).flatten()
    adam = AdamState.zeros(spec.n_params)
    trace_rows = []
    status = "ok"
    for it in range(config.iterations):
        batch = sample_batch(train_insts, config.batch_size, rng)
        theta = ParameterSet.from_flat(spec, theta_flat)
        stack = kernel.gram_stack(spec, theta, batch, ev_times, EXACT_MODE)
        labels = np.array([inst.label for inst in batch])
        problem = KomdProblem(stack.equal_weight_sum(), labels, config.lam)
        sol = solve_inner(problem, config.inner_tol, config.inner_max_iter)
        if not math.isfinite(sol.loss_value):
            status = f"aborted: non-finite loss at iteration {it}"
            break
        trace_rows.append((r, it, sol.loss_value,
                           sol.loss_value / config.batch_size**2))
        grad = outer_gradient(spec, theta, batch, ev_times, sol.phi, config.lam)
        theta_flat, adam = adam_step(
            theta_flat, grad, adam, config.learning_rate,
            (config.adam_beta1, config.adam_beta2), config.adam_eps)
    return theta_flat, trace_rows, status


def train(dataset: data.Dataset, spec: AnsatzSpec, config: TrainConfig,
          eval_dataset: Optional[data.Dataset] = None,
          feature_range: Tuple[float, float] = (0.0, math.pi),
          threads: int = 1) -> TrainResult:
    """Full training: restarts of the mini-batched max-min loop, restart
    selection by the inner loss on a held-out evaluation set, and a final
    full-training-set convex pass to extract the time weights.

    When ``eval_dataset`` is given it is used for restart selection (the
    protocol used for the shipped experiment configs); otherwise a
    stratified ``eval_fraction`` split of ``dataset`` is held out and the
    remainder trains.
    """
    if config.lam == 0.0:
        raise TrainingError(
            "lambda = 0 makes the inner minimizer potentially non-unique; "
            "the envelope gradient needs lambda > 0")
    if not dataset.both_classes_present():
        raise TrainingError("training needs both classes")
    if config.batch_size > dataset.n:
        raise UsageError("batch size exceeds dataset size")

    split_rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence((config.seed, 0xEAC))))
    if eval_dataset is None:
        train_idx, eval_idx = _stratified_split(dataset, config.eval_fraction, split_rng)
        train_ds = dataset.subset(train_idx)
        eval_ds = dataset.subset(eval_idx)
    else:
        train_ds = dataset
        eval_ds = eval_dataset

    scaler = data.fit_scaler(train_ds, feature_range[0], feature_range[1])
    train_insts = data.scale_instances(train_ds.instances, scaler)
    eval_insts = data.scale_instances(eval_ds.instances, scaler)
    train_labels = train_ds.labels()
    eval_labels = eval_ds.labels()
    if not (np.any(eval_labels == 1) and np.any(eval_labels == -1)):
        raise TrainingError("evaluation split must contain both classes")

    ev_times = _evolution_times(dataset.times, config)

    def run_and_score(r):
        theta_flat, rows, status = _run_restart(r, spec, train_insts,
                                                ev_times, config)
        if status == "ok":
            theta = ParameterSet.from_flat(spec, theta_flat)
            sol, _ = _full_set_loss(spec, theta, eval_insts, eval_labels,
                                    ev_times, config)
            eval_loss = sol.loss_value
        else:
            eval_loss = -math.inf
        return theta_flat, rows, status, eval_loss

    results = []
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_and_score, range(config.restarts)))
    else:
        results = [run_and_score(r) for r in range(config.restarts)]

    trace = []
    summaries = []
    best_r, best_loss = -1, -math.inf
    for r, (theta_flat, rows, status, eval_loss) in enumerate(results):
        trace.extend(rows)
        summaries.append(RestartSummary(r, eval_loss, status))
        if status == "ok" and eval_loss > best_loss:
            best_r, best_loss = r, eval_loss
    if best_r < 0:
        raise TrainingError("every restart aborted; nothing to select")

    theta_star = ParameterSet.from_flat(spec, results[best_r][0])
    final_sol, final_stack = _full_set_loss(spec, theta_star, train_insts,
                                            train_labels, ev_times, config)
    summaries[best_r].final_train_loss = final_sol.loss_value
    eta_star = extract_weights(final_stack, train_labels, final_sol.phi)

    tshk = TrainedTSHK(spec, theta_star, eta_star, dataset.times,
                       feature_scaling=scaler, evolution_times=ev_times)
    return TrainResult(tshk, trace, summaries, best_r)
