"""Soft-margin kernel SVM (dual), decision functions, metrics, kernel
alignment, and spectral Gram regularization.

The dual is solved by sequential minimal optimization with
maximal-violating-pair selection; at these problem sizes (N <= ~150) no
QP library is needed.  Indefinite Gram matrices (from shot noise or
injected corruption) are handled with the usual curvature floor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .errors import UsageError

_CURVATURE_FLOOR = 1e-12


@dataclass
class SvmModel:
    """Fitted dual: coefficients, bias, supports, and training metadata."""

    dual_coeffs: np.ndarray
    bias: float
    support: np.ndarray
    labels: np.ndarray
    c_bound: float
    train_decisions: np.ndarray = None
    kkt_gap: float = float("nan")

    def dual_objective(self, gram: np.ndarray) -> float:
        q = gram * np.outer(self.labels, self.labels)
        a = self.dual_coeffs
        return float(a.sum() - 0.5 * a @ q @ a)


def _check_gram(gram: np.ndarray) -> np.ndarray:
    gram = np.asarray(gram, dtype=np.float64)
    if gram.ndim != 2 or gram.shape[0] != gram.shape[1]:
        raise UsageError(f"gram must be square, got {gram.shape}")
    if np.max(np.abs(gram - gram.T)) > 1e-8:
        raise UsageError("gram must be symmetric")
    return gram


def svm_fit(gram, labels, c_bound: float, tol: float = 1e-6,
            max_iter: Optional[int] = None) -> SvmModel:
    """Solve the soft-margin dual by SMO to the given KKT tolerance.

    maximize sum(alpha) - 1/2 alpha^T (yy^T * K) alpha
    s.t. 0 <= alpha <= C, sum(alpha * y) = 0.

    The bias averages y_i - f_i over on-margin supports
    (0 < alpha < C); without any, it falls back to the midpoint of the
    extreme bias-free decision values of the two classes.
    """
    gram = _check_gram(gram)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    n = len(y)
    if gram.shape[0] != n:
        raise UsageError("labels must match the gram size")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise UsageError("labels must be -1 or +1")
    if not (np.any(y == 1) and np.any(y == -1)):
        raise UsageError("both classes must be present")
    if c_bound <= 0:
        raise UsageError("C must be positive")
    if max_iter is None:
        max_iter = 100_000 * n

    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of 1/2 a^T Q a - e^T a at a = 0
    q_cols = gram * np.outer(y, y)
    yg = None
    gap = np.inf
    for _ in range(max_iter):
        yg = -y * grad
        up = ((y > 0) & (alpha < c_bound)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < c_bound))
        if not up.any() or not low.any():
            break
        i = int(np.flatnonzero(up)[np.argmax(yg[up])])
        j = int(np.flatnonzero(low)[np.argmin(yg[low])])
        gap = yg[i] - yg[j]
        if gap <= tol:
            break
        # step s moves alpha_i by +y_i s and alpha_j by -y_j s
        curvature = gram[i, i] + gram[j, j] - 2 * gram[i, j]
        step = gap / max(curvature, _CURVATURE_FLOOR)
        if y[i] > 0:
            step = min(step, c_bound - alpha[i])
        else:
            step = min(step, alpha[i])
        if y[j] > 0:
            step = min(step, alpha[j])
        else:
            step = min(step, c_bound - alpha[j])
        d_i = y[i] * step
        d_j = -y[j] * step
        alpha[i] = min(max(alpha[i] + d_i, 0.0), c_bound)
        alpha[j] = min(max(alpha[j] + d_j, 0.0), c_bound)
        grad += q_cols[:, i] * d_i + q_cols[:, j] * d_j

    support = np.flatnonzero(alpha > 1e-12)
    f_vals = np.array([float(np.dot(alpha * y, gram[i])) for i in range(n)])
    eps = 1e-8 * max(c_bound, 1.0)
    margin = (alpha > eps) & (alpha < c_bound - eps)
    if margin.any():
        bias = float(np.mean(y[margin] - f_vals[margin]))
    else:
        bias = -(f_vals[y < 0].max() + f_vals[y > 0].min()) / 2.0
    model = SvmModel(alpha, bias, support, y.astype(np.int64), float(c_bound),
                     kkt_gap=float(gap))
    model.train_decisions = np.array([decide(model, gram[i]) for i in range(n)])
    return model


def decide(model: SvmModel, kernel_row) -> float:
    """Decision value sum_i alpha_i y_i k(x_i, x) + b for one kernel row."""
    row = np.asarray(kernel_row, dtype=np.float64).reshape(-1)
    if len(row) != len(model.dual_coeffs):
        raise UsageError(f"kernel row must have {len(model.dual_coeffs)} entries")
    return float(np.dot(model.dual_coeffs * model.labels, row) + model.bias)


def _sign_to_plus(value: float) -> int:
    # exact zeros break toward +1 (documented tie rule)
    return 1 if value >= 0 else -1


def per_time_vote(per_time_models: Sequence[SvmModel], per_time_rows,
                  eta) -> int:
    """Weighted majority vote over per-time SVM predictions.

    sign(sum_l eta_l sign(D_l)); exact-zero decision values and an
    exact-zero vote both resolve to +1.
    """
    eta = np.asarray(eta, dtype=np.float64).reshape(-1)
    if not (len(per_time_models) == len(per_time_rows) == len(eta)):
        raise UsageError("models, rows and weights must align")
    votes = np.array([
        _sign_to_plus(decide(model, row))
        for model, row in zip(per_time_models, per_time_rows)
    ])
    return _sign_to_plus(float(np.dot(eta, votes)))


@dataclass
class MetricsReport:
    f1: float
    balanced_accuracy: float
    roc_auc: float
    alignment_train: Optional[float] = None
    alignment_test: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "f1": self.f1,
            "balanced_accuracy": self.balanced_accuracy,
            "roc_auc": self.roc_auc,
            "alignment_train": self.alignment_train,
            "alignment_test": self.alignment_test,
        }


def roc_auc(y_true, scores) -> float:
    """Concordant-pair AUC with ties counted as one half."""
    y_true = np.asarray(y_true).reshape(-1)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    pos = scores[y_true == 1]
    neg = scores[y_true == -1]
    if len(pos) == 0 or len(neg) == 0:
        raise UsageError("AUC is undefined for a single-class truth vector")
    wins = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return float((wins + 0.5 * ties) / (len(pos) * len(neg)))


def metrics(y_true, y_pred, scores) -> MetricsReport:
    """F1 (positive class +1), balanced accuracy, and pairwise AUC."""
    y_true = np.asarray(y_true).reshape(-1)
    y_pred = np.asarray(y_pred).reshape(-1)
    if len(y_true) != len(y_pred) or len(y_true) != len(np.asarray(scores).reshape(-1)):
        raise UsageError("y_true, y_pred and scores must have equal lengths")
    tp = int(np.sum((y_true == 1) & (y_pred == 1)))
    fp = int(np.sum((y_true == -1) & (y_pred == 1)))
    fn = int(np.sum((y_true == 1) & (y_pred == -1)))
    tn = int(np.sum((y_true == -1) & (y_pred == -1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    tpr = tp / (tp + fn) if tp + fn else 0.0
    tnr = tn / (tn + fp) if tn + fp else 0.0
    return MetricsReport(f1, (tpr + tnr) / 2.0, roc_auc(y_true, scores))


def kernel_alignment(k_mat, labels, labels_cols=None) -> float:
    """1 - mean(|K_ij - y_i y_j|): agreement with the label outer product.

    Normalization is by the number of matrix elements, which covers both
    square and rectangular kernels.
    """
    k_mat = np.asarray(k_mat, dtype=np.float64)
    rows = np.asarray(labels, dtype=np.float64).reshape(-1)
    cols = rows if labels_cols is None else np.asarray(labels_cols,
                                                       dtype=np.float64).reshape(-1)
    if k_mat.shape != (len(rows), len(cols)):
        raise UsageError(f"kernel shape {k_mat.shape} does not match labels "
                         f"({len(rows)}, {len(cols)})")
    truth = np.outer(rows, cols)
    return float(1.0 - np.mean(np.abs(k_mat - truth)))


def tikhonov_regularize(k_mat) -> np.ndarray:
    """Shift the spectrum up by -min eigenvalue when it dips below zero."""
    k_mat = _check_gram(k_mat)
    eps_min = float(np.linalg.eigvalsh(k_mat).min())
    if eps_min < 0:
        return k_mat - eps_min * np.eye(k_mat.shape[0])
    return k_mat
