"""Evaluation metrics: adjusted Rand index, confusion matrices, parameter errors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InvalidArgumentError
from .model import MixtureModel


def compute_ari(labels_a: np.ndarray, labels_b: np.ndarray) -> float:
    """Adjusted Rand index between two labelings of the same points.

    Chance-corrected pair-counting agreement from the contingency table;
    1.0 for identical partitions, ~0 for independent ones. The degenerate
    0/0 case (both partitions trivial in the same way) is defined as 1.0.
    """
    a = np.asarray(labels_a).ravel()
    b = np.asarray(labels_b).ravel()
    if a.shape != b.shape:
        raise InvalidArgumentError("labelings must have equal length")
    n = a.size
    if n < 2:
        raise InvalidArgumentError("need at least two points to compare partitions")
    _, a_idx = np.unique(a, return_inverse=True)
    _, b_idx = np.unique(b, return_inverse=True)
    table = np.zeros((a_idx.max() + 1, b_idx.max() + 1), dtype=np.int64)
    np.add.at(table, (a_idx, b_idx), 1)

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_cells = float(np.sum(comb2(table)))
    sum_rows = float(np.sum(comb2(table.sum(axis=1))))
    sum_cols = float(np.sum(comb2(table.sum(axis=0))))
    total = comb2(n)
    expected = sum_rows * sum_cols / total
    max_index = 0.5 * (sum_rows + sum_cols)
    if max_index == expected:
        return 1.0
    return (sum_cells - expected) / (max_index - expected)


def confusion_joint(
    true_labels: np.ndarray, pred_labels: np.ndarray, m: int
) -> np.ndarray:
    """m x m joint-proportion confusion matrix (rows: true, columns: predicted).

    Entries are counts / N and sum to 1; labels outside range(m) are rejected.
    """
    t = np.asarray(true_labels, dtype=int).ravel()
    p = np.asarray(pred_labels, dtype=int).ravel()
    if t.shape != p.shape:
        raise InvalidArgumentError("labelings must have equal length")
    if np.any((t < 0) | (t >= m)) or np.any((p < 0) | (p >= m)):
        raise InvalidArgumentError(f"labels must lie in 0..{m - 1}")
    table = np.zeros((m, m))
    np.add.at(table, (t, p), 1.0)
    return table / t.size


def match_components(true_means: np.ndarray, est_means: np.ndarray) -> np.ndarray:
    """Permutation aligning estimated components to true ones by mean distance.

    Returns ``perm`` with perm[j] = estimated index matched to true component j.
    Resolves global label switching before errors are computed.
    """
    true_means = np.atleast_2d(true_means)
    est_means = np.atleast_2d(est_means)
    if true_means.shape != est_means.shape:
        raise InvalidArgumentError("component counts/dimensions must match")
    cost = np.linalg.norm(true_means[:, None, :] - est_means[None, :, :], axis=2)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(true_means.shape[0], dtype=int)
    perm[rows] = cols
    return perm


@dataclass
class MetricsReport:
    weight_error: float            # |first-weight error| after matching
    weight_errors: np.ndarray      # (m,) per-component absolute weight errors
    mean_errors: np.ndarray        # (m,) L2 errors
    cov_errors: np.ndarray         # (m,) Frobenius errors
    confusion: Optional[np.ndarray] = None
    ari: Optional[float] = None

    def to_row(self) -> dict:
        row = {
            "weight_error": self.weight_error,
            "mean_error_mean": float(np.mean(self.mean_errors)),
            "cov_error_mean": float(np.mean(self.cov_errors)),
        }
        for j, (we, me, ce) in enumerate(
            zip(self.weight_errors, self.mean_errors, self.cov_errors), start=1
        ):
            row[f"weight_error_{j}"] = float(we)
            row[f"mean_error_{j}"] = float(me)
            row[f"cov_error_{j}"] = float(ce)
        if self.ari is not None:
            row["ari"] = float(self.ari)
        if self.confusion is not None:
            row["confusion_diag"] = float(np.trace(self.confusion))
        return row


def parameter_errors(
    truth: MixtureModel,
    weights: np.ndarray,
    means: np.ndarray,
    covariances: np.ndarray,
) -> tuple[MetricsReport, np.ndarray]:
    """Errors of an estimate against the generating model.

    Components are matched by minimum-cost assignment on mean distances; the
    returned permutation maps true component j to estimate perm[j].
    """
    perm = match_components(truth.means, np.atleast_2d(means))
    w = np.asarray(weights, dtype=float)[perm]
    mu = np.atleast_2d(means)[perm]
    cov = np.asarray(covariances)[perm]
    weight_errors = np.abs(w - truth.weights)
    mean_errors = np.linalg.norm(mu - truth.means, axis=1)
    cov_errors = np.array(
        [np.linalg.norm(cov[j] - truth.covariances[j], "fro") for j in range(truth.n_components)]
    )
    report = MetricsReport(
        weight_error=float(weight_errors[0]),
        weight_errors=weight_errors,
        mean_errors=mean_errors,
        cov_errors=cov_errors,
    )
    return report, perm
