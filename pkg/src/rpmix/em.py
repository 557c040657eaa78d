"""Multivariate EM baseline (plain EM for Gaussian mixtures, ECM for Student-t
with fixed degrees of freedom). Serves as the comparison estimator in the
simulation harness; not a robust method."""

from __future__ import annotations

from typing import Optional

import numpy as np
from scipy.special import logsumexp

from ._kmeans import kmeans
from .errors import EstimationError, InvalidArgumentError
from .model import (
    GAUSSIAN,
    STUDENT_T,
    MixtureModel,
    _component_log_densities,
    _log_weights,
)

MAX_ITER = 300
LOGLIK_TOL = 1e-8
RIDGE_SCALE = 1e-8
# numerical slack for the monotonicity assertion: the per-iteration ridge
# perturbs the surrogate slightly, so exact monotonicity can wiggle at rounding level
_MONOTONE_SLACK = 1e-7


def _loglik(model: MixtureModel, data: np.ndarray) -> float:
    comp = _component_log_densities(model, data)
    return float(np.sum(logsumexp(comp + _log_weights(model.weights)[None, :], axis=1)))


def _mahalanobis(data: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    chol = np.linalg.cholesky(cov)
    diff = data - mean
    sol = np.linalg.solve(chol, diff.T)
    return np.sum(sol * sol, axis=0)


def em_baseline(
    data: np.ndarray,
    m: int,
    family: str = GAUSSIAN,
    nu: Optional[int] = None,
    seed: int = 0,
    max_iter: int = MAX_ITER,
    tol: float = LOGLIK_TOL,
    restarts: int = 5,
) -> MixtureModel:
    """Fit an m-component mixture by EM (k-means init, ridge-regularized M-step).

    Student-t fits run the standard ECM with fixed ``nu``: responsibilities and
    tail weights (nu + d) / (nu + maha) in the E-step, weighted means and
    scatter updates in the M-step. The observed log-likelihood is asserted
    non-decreasing (up to rounding slack) every iteration. Degenerate k-means
    initializations are retried with up to ``restarts`` derived seeds.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    n, d = data.shape
    if n < 10 * m:
        raise InvalidArgumentError(f"need at least {10 * m} observations for m={m}")
    if family == STUDENT_T and (nu is None or int(nu) < 1):
        raise InvalidArgumentError("student_t EM requires integer nu >= 1")

    last_error: Optional[Exception] = None
    for attempt in range(restarts):
        rng = np.random.default_rng(np.random.SeedSequence([seed, attempt]))
        labels, centers = kmeans(data, m, rng)
        counts = np.bincount(labels, minlength=m)
        if np.any(counts < 2):
            last_error = EstimationError(
                f"k-means initialization left a cluster with {counts.min()} point(s)"
            )
            continue
        try:
            return _em_from_init(data, m, family, nu, labels, centers, max_iter, tol)
        except (EstimationError, InvalidArgumentError, np.linalg.LinAlgError) as exc:
            last_error = exc
    raise EstimationError(f"EM failed after {restarts} restarts: {last_error}")


def _em_from_init(data, m, family, nu, labels, centers, max_iter, tol) -> MixtureModel:
    n, d = data.shape
    weights = np.bincount(labels, minlength=m) / n
    means = centers.copy()
    covs = np.empty((m, d, d))
    for j in range(m):
        member = data[labels == j]
        diff = member - means[j]
        covs[j] = diff.T @ diff / member.shape[0]
        covs[j] += np.eye(d) * (RIDGE_SCALE * np.trace(covs[j]) / d + 1e-10)

    model = MixtureModel(family=family, weights=weights, means=means, covariances=covs, nu=nu)
    ll = _loglik(model, data)
    for _ in range(max_iter):
        # E-step
        comp = _component_log_densities(model, data)
        log_resp = comp + _log_weights(model.weights)[None, :]
        log_resp -= logsumexp(log_resp, axis=1, keepdims=True)
        resp = np.exp(log_resp)
        nk = resp.sum(axis=0)
        if np.any(nk < 1e-10):
            raise EstimationError("a component collapsed to zero responsibility")

        if family == STUDENT_T:
            gate = np.empty_like(resp)
            for j in range(m):
                maha = _mahalanobis(data, model.means[j], model.covariances[j])
                gate[:, j] = (nu + d) / (nu + maha)
        else:
            gate = np.ones_like(resp)

        # M-step
        weights = nk / n
        rw = resp * gate
        means = (rw.T @ data) / rw.sum(axis=0)[:, None]
        covs = np.empty((m, d, d))
        for j in range(m):
            diff = data - means[j]
            covs[j] = (rw[:, j] * diff.T) @ diff / nk[j]
            covs[j] += np.eye(d) * (RIDGE_SCALE * np.trace(covs[j]) / d + 1e-12)
        model = MixtureModel(
            family=family, weights=weights, means=means, covariances=covs, nu=nu
        )
        new_ll = _loglik(model, data)
        if new_ll < ll - _MONOTONE_SLACK * (1.0 + abs(ll)):
            raise EstimationError(
                f"log-likelihood decreased ({ll:.10g} -> {new_ll:.10g}); EM update is broken"
            )
        if new_ll - ll < tol:
            ll = new_ll
            break
        ll = new_ll
    return model
