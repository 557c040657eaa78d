"""Reconstruction of multivariate means and covariances from projected fits.

Means solve an ordinary least-squares system over the directions. Covariances
minimize the squared mismatch of quadratic forms over the PSD cone: the
unconstrained least-squares optimum is taken when it is (numerically) inside
the cone, a tiny negative eigenvalue is clipped away, and otherwise a
log-det-barrier Newton path solves the constrained program. Robust variants
replace least squares by an absolute-loss fit (IRLS) or aggregate split-sample
estimates by coordinatewise medians.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .directions import DirectionSet, design_rank, vecsym, vecsym_design, vecsym_inverse
from .errors import EstimationError, InvalidArgumentError

MEAN_CONDITION_LIMIT = 1e12
CLIP_EIG_TOL = 1e-8
# stop the barrier path well inside the documented 1e-9 duality-gap contract
# so inexact centering cannot push the realized gap past it
BARRIER_GAP_TOL = 2.5e-10
IRLS_WEIGHT_FLOOR = 1e-8
IRLS_MAX_ITER = 100


@dataclass(frozen=True)
class ProjectedEstimates:
    """Aligned per-direction location/scale estimates for every component."""

    directions: DirectionSet
    locations: np.ndarray  # (k, m)
    scales2: np.ndarray    # (k, m)
    usable: np.ndarray     # (k,) bool

    def __post_init__(self):
        loc = np.atleast_2d(np.asarray(self.locations, dtype=float))
        sc2 = np.atleast_2d(np.asarray(self.scales2, dtype=float))
        usable = np.asarray(self.usable, dtype=bool)
        k = self.directions.k
        if loc.shape[0] != k or sc2.shape != loc.shape or usable.shape != (k,):
            raise InvalidArgumentError("locations/scales2/usable shapes must agree with k directions")
        if np.any(sc2[usable] <= 0.0):
            raise InvalidArgumentError("scales2 must be positive on usable rows")
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "scales2", sc2)
        object.__setattr__(self, "usable", usable)

    @property
    def n_components(self) -> int:
        return self.locations.shape[1]


@dataclass
class ReconstructionResult:
    means: np.ndarray        # (m, d)
    covariances: np.ndarray  # (m, d, d), symmetric PSD
    mean_residuals: np.ndarray  # (m,) residual norms of the location systems
    cov_residuals: np.ndarray   # (m,) residual norms of the quadratic-form systems
    method: str = "l2"
    diagnostics: dict = field(default_factory=dict)


def _usable_design(est: ProjectedEstimates) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mask = est.usable
    if not np.any(mask):
        raise EstimationError("no usable directions for reconstruction")
    u = est.directions.vectors[mask]
    return u, est.locations[mask], est.scales2[mask]


def reconstruct_means(est: ProjectedEstimates) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares mean vectors; returns (means (m, d), residual norms (m,))."""
    u, loc, _ = _usable_design(est)
    d = u.shape[1]
    if u.shape[0] < d:
        raise EstimationError(f"need at least d={d} usable directions to reconstruct means")
    gram = u.T @ u
    cond = float(np.linalg.cond(gram))
    if not np.isfinite(cond) or cond >= MEAN_CONDITION_LIMIT:
        raise EstimationError(
            f"direction design is rank deficient for mean reconstruction (cond(U^T U) = {cond:.3e})"
        )
    sol, _, _, _ = np.linalg.lstsq(u, loc, rcond=None)
    resid = np.linalg.norm(u @ sol - loc, axis=0)
    return sol.T, resid


# ---------------------------------------------------------------------------
# PSD-constrained covariance solve
# ---------------------------------------------------------------------------


def _symmetrize_clip(sigma: np.ndarray) -> np.ndarray:
    sigma = 0.5 * (sigma + sigma.T)
    evals, evecs = np.linalg.eigh(sigma)
    evals = np.maximum(evals, 0.0)
    return (evecs * evals) @ evecs.T


def _vecsym_basis_hessian(sigma_inv: np.ndarray) -> np.ndarray:
    """Hessian of -log det in vecsym coordinates: H[i, j] = <E_i, S^-1 E_j S^-1>."""
    d = sigma_inv.shape[0]
    n = d * (d + 1) // 2
    h = np.empty((n, n))
    sqrt2 = np.sqrt(2.0)
    cols = []
    for a in range(d):
        e = np.outer(sigma_inv[:, a], sigma_inv[a, :])
        cols.append(vecsym(0.5 * (e + e.T)))
    iu = np.triu_indices(d, k=1)
    for a, b in zip(*iu):
        e = np.outer(sigma_inv[:, a], sigma_inv[b, :])
        e = (e + e.T) / sqrt2
        cols.append(vecsym(0.5 * (e + e.T)))
    for j, c in enumerate(cols):
        h[:, j] = c
    return 0.5 * (h + h.T)


def _barrier_solve(
    design: np.ndarray,
    targets: np.ndarray,
    d: int,
    sigma0: np.ndarray,
    gap_tol: float = BARRIER_GAP_TOL,
) -> tuple[np.ndarray, dict]:
    """Minimize ||A theta - s||^2 over the PSD cone via a log-det barrier.

    Follows the central path of f_t(Sigma) = f(Sigma) - (1/t) log det Sigma,
    doubling t until the duality-gap proxy d/t drops below ``gap_tol``. Newton
    steps run in vecsym coordinates with a PD-preserving backtracking line
    search.
    """
    ata2 = 2.0 * design.T @ design
    ats2 = 2.0 * design.T @ targets
    theta = vecsym(sigma0)
    sigma = sigma0
    chol = np.linalg.cholesky(sigma)
    eye = np.eye(d)
    t = 1.0
    newton_total = 0

    def inv_from_chol(c):
        inv_l = solve_triangular(c, eye, lower=True)
        return inv_l.T @ inv_l

    def grad_ft(theta_v, sigma_inv, t_val):
        return ata2 @ theta_v - ats2 - vecsym(sigma_inv) / t_val

    def ft_value(theta_v, c, t_val):
        r = design @ theta_v - targets
        logdet = 2.0 * float(np.sum(np.log(np.diag(c))))
        return float(r @ r) - logdet / t_val

    gtol = 1e-9 * max(1.0, float(np.linalg.norm(ats2)))
    while True:
        for _ in range(60):
            newton_total += 1
            sigma_inv = inv_from_chol(chol)
            g = grad_ft(theta, sigma_inv, t)
            if float(np.linalg.norm(g)) <= gtol:
                break
            h = ata2 + _vecsym_basis_hessian(sigma_inv) / t
            try:
                step = np.linalg.solve(h, -g)
            except np.linalg.LinAlgError:
                step = -g
            f0 = ft_value(theta, chol, t)
            slope = float(g @ step)
            alpha = 1.0
            accepted = False
            for _ in range(60):
                cand = theta + alpha * step
                sigma_cand = vecsym_inverse(cand, d)
                try:
                    chol_cand = np.linalg.cholesky(sigma_cand)
                except np.linalg.LinAlgError:
                    alpha *= 0.5
                    continue
                # reject candidates too close to singular for stable inversion
                diag_c = np.diag(chol_cand)
                if np.min(diag_c) < 1e-154 or not np.all(np.isfinite(diag_c)):
                    alpha *= 0.5
                    continue
                if ft_value(cand, chol_cand, t) <= f0 + 1e-4 * alpha * slope:
                    theta, sigma, chol = cand, sigma_cand, chol_cand
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                break
        if d / t < gap_tol:
            break
        t *= 2.0

    sigma_inv = inv_from_chol(chol)
    grad_norm = float(np.linalg.norm(grad_ft(theta, sigma_inv, t)))
    diag = {
        "barrier_t": t,
        "barrier_newton_steps": newton_total,
        "barrier_gap_proxy": d / t,
        "barrier_grad_norm": grad_norm,
    }
    return sigma, diag


def _solve_psd_least_squares(
    design: np.ndarray, targets: np.ndarray, d: int
) -> tuple[np.ndarray, str, dict]:
    """Three-tier solver for min ||A vecsym(Sigma) - s||^2 with Sigma PSD."""
    theta, _, _, _ = np.linalg.lstsq(design, targets, rcond=None)
    sigma = vecsym_inverse(theta, d)
    sigma = 0.5 * (sigma + sigma.T)
    evals = np.linalg.eigvalsh(sigma)
    spectral = float(np.max(np.abs(evals))) if evals.size else 0.0
    if evals[0] >= 0.0:
        return sigma, "unconstrained", {}
    if evals[0] >= -CLIP_EIG_TOL * spectral:
        return _symmetrize_clip(sigma), "clipped", {}

    scale = float(np.mean(np.abs(targets))) + 1e-12
    floor = max(1e-3 * scale, 1e-8)
    evals_f, evecs = np.linalg.eigh(sigma)
    sigma0 = (evecs * np.maximum(evals_f, floor)) @ evecs.T
    try:
        sigma_b, diag = _barrier_solve(design, targets, d, sigma0)
    except np.linalg.LinAlgError:
        return _symmetrize_clip(sigma), "clipped-fallback", {}
    # the barrier iterate is strictly PD; clip stray negatives from rounding
    return _symmetrize_clip(sigma_b), "barrier", diag


def psd_quadratic_fit(vectors: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, str, dict]:
    """Fit a PSD matrix to quadratic-form targets: min_Sigma sum_r (u_r^T Sigma u_r - s_r)^2.

    Accepts arbitrary (even infeasible, e.g. negative) targets; returns the
    PSD minimizer, the solver tier used ("unconstrained", "clipped" or
    "barrier") and solver diagnostics. Requires a full-rank design.
    """
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
    targets = np.asarray(targets, dtype=float).ravel()
    if targets.size != vectors.shape[0]:
        raise InvalidArgumentError("one target per direction required")
    d = vectors.shape[1]
    design = vecsym_design(vectors)
    n_free = d * (d + 1) // 2
    if design_rank(design) != n_free:
        raise EstimationError(
            "PSD quadratic fit is not unique: the symmetric-outer-product design "
            f"has rank below d(d+1)/2 = {n_free}"
        )
    return _solve_psd_least_squares(design, targets, d)


def reconstruct_covariances(
    est: ProjectedEstimates,
) -> tuple[np.ndarray, np.ndarray, dict]:
    """PSD covariance matrices; returns (covs (m, d, d), residual norms, diagnostics)."""
    u, _, sc2 = _usable_design(est)
    d = u.shape[1]
    n_free = d * (d + 1) // 2
    if u.shape[0] < n_free:
        raise EstimationError(
            f"need at least d(d+1)/2 = {n_free} usable directions to reconstruct covariances"
        )
    design = vecsym_design(u)
    rank = design_rank(design)
    if rank != n_free:
        raise EstimationError(
            "covariance reconstruction is not unique: the symmetric-outer-product design "
            f"has rank {rank} < d(d+1)/2 = {n_free}, so the quadratic objective is not "
            "strictly convex"
        )
    m = est.n_components
    covs = np.empty((m, d, d))
    resid = np.empty(m)
    tiers = []
    diag: dict = {"design_rank": rank}
    for j in range(m):
        sigma, tier, extra = _solve_psd_least_squares(design, sc2[:, j], d)
        covs[j] = sigma
        resid[j] = float(np.linalg.norm(design @ vecsym(sigma) - sc2[:, j]))
        tiers.append(tier)
        if extra:
            diag[f"component_{j}"] = extra
    diag["cov_solver_tiers"] = tiers
    return covs, resid, diag


def reconstruct(est: ProjectedEstimates) -> ReconstructionResult:
    """Plain least-squares reconstruction of all components."""
    means, mean_res = reconstruct_means(est)
    covs, cov_res, diag = reconstruct_covariances(est)
    return ReconstructionResult(
        means=means,
        covariances=covs,
        mean_residuals=mean_res,
        cov_residuals=cov_res,
        method="l2",
        diagnostics=diag,
    )


# ---------------------------------------------------------------------------
# Robust variants
# ---------------------------------------------------------------------------


def _huber_objective(residuals: np.ndarray, delta: float) -> float:
    a = np.abs(residuals)
    small = a <= delta
    return float(np.sum(np.where(small, residuals**2 / (2.0 * delta), a - delta / 2.0)))


def _irls_l1(
    design: np.ndarray,
    targets: np.ndarray,
    project=None,
    max_iter: int = IRLS_MAX_ITER,
    floor: float = IRLS_WEIGHT_FLOOR,
) -> tuple[np.ndarray, list[float]]:
    """IRLS for min sum |A x - s| with an optional feasibility projection.

    Returns the solution and the trace of the smoothed (Huber, width =
    ``floor``) objective, which is non-increasing when no projection fires.
    """
    x, _, _, _ = np.linalg.lstsq(design, targets, rcond=None)
    if project is not None:
        x = project(x)
    trace = [_huber_objective(design @ x - targets, floor)]
    for _ in range(max_iter):
        r = design @ x - targets
        w = 1.0 / np.maximum(np.abs(r), floor)
        sw = np.sqrt(w)
        x_new, _, _, _ = np.linalg.lstsq(design * sw[:, None], targets * sw, rcond=None)
        if project is not None:
            x_new = project(x_new)
        trace.append(_huber_objective(design @ x_new - targets, floor))
        if np.linalg.norm(x_new - x) <= 1e-12 * (1.0 + np.linalg.norm(x)):
            x = x_new
            break
        x = x_new
    return x, trace


def _project_psd_vecsym(d: int):
    def project(theta: np.ndarray) -> np.ndarray:
        return vecsym(_symmetrize_clip(vecsym_inverse(theta, d)))

    return project


def reconstruct_robust(
    est: ProjectedEstimates,
    method: str = "l1",
    splits: Optional[Sequence[ProjectedEstimates]] = None,
) -> ReconstructionResult:
    """Robust reconstruction.

    ``method="l1"`` minimizes the absolute-loss analogue of the least-squares
    objectives by IRLS (weight floor 1e-8, 100 iterations), projecting each
    covariance iterate onto the PSD cone. ``method="mom"`` takes coordinatewise
    medians of per-split least-squares reconstructions supplied in ``splits``
    (one ProjectedEstimates per disjoint subsample), then PSD-projects the
    median covariance.
    """
    if method == "l1":
        u, loc, sc2 = _usable_design(est)
        d = u.shape[1]
        if u.shape[0] < d:
            raise EstimationError(f"need at least d={d} usable directions")
        m = est.n_components
        design = vecsym_design(u)
        n_free = d * (d + 1) // 2
        if u.shape[0] < n_free or design_rank(design) != n_free:
            raise EstimationError(
                "covariance reconstruction requires a full-rank symmetric-outer-product design"
            )
        means = np.empty((m, d))
        covs = np.empty((m, d, d))
        mean_res = np.empty(m)
        cov_res = np.empty(m)
        traces = []
        for j in range(m):
            mu, mu_trace = _irls_l1(u, loc[:, j])
            means[j] = mu
            mean_res[j] = float(np.sum(np.abs(u @ mu - loc[:, j])))
            theta, cov_trace = _irls_l1(design, sc2[:, j], project=_project_psd_vecsym(d))
            covs[j] = _symmetrize_clip(vecsym_inverse(theta, d))
            cov_res[j] = float(np.sum(np.abs(design @ vecsym(covs[j]) - sc2[:, j])))
            traces.append({"mean": mu_trace, "cov": cov_trace})
        return ReconstructionResult(
            means=means,
            covariances=covs,
            mean_residuals=mean_res,
            cov_residuals=cov_res,
            method="l1",
            diagnostics={"irls_traces": traces},
        )

    if method == "mom":
        if not splits:
            raise InvalidArgumentError("median-of-means requires per-split projected estimates")
        parts = [reconstruct(s) for s in splits]
        m = parts[0].means.shape[0]
        d = parts[0].means.shape[1]
        means = np.median(np.stack([p.means for p in parts]), axis=0)
        covs_raw = np.median(np.stack([p.covariances for p in parts]), axis=0)
        covs = np.stack([_symmetrize_clip(covs_raw[j]) for j in range(m)])
        mean_res = np.median(np.stack([p.mean_residuals for p in parts]), axis=0)
        cov_res = np.median(np.stack([p.cov_residuals for p in parts]), axis=0)
        return ReconstructionResult(
            means=means,
            covariances=covs,
            mean_residuals=mean_res,
            cov_residuals=cov_res,
            method=f"mom:{len(parts)}",
            diagnostics={"splits": len(parts)},
        )

    raise InvalidArgumentError(f"unknown robust method {method!r}")


# ---------------------------------------------------------------------------
# Constrained reconstruction (constant-coordinate means, compound symmetry)
# ---------------------------------------------------------------------------


@dataclass
class ConstrainedResult:
    """Constant-coordinate means m_j 1_d and a shared (1-x) I + x 11^T covariance."""

    mean_scalars: np.ndarray  # (m,)
    x: float
    means: np.ndarray         # (m, d)
    covariance: np.ndarray    # (d, d)
    mean_residuals: np.ndarray
    cov_residual: float


def compound_symmetry(d: int, x: float) -> np.ndarray:
    return (1.0 - x) * np.eye(d) + x * np.ones((d, d))


def reconstruct_constrained(est: ProjectedEstimates) -> ConstrainedResult:
    """Scalar least squares under the constrained parameterization.

    With s_r = <u_r, 1_d>, the projected locations are m_j s_r and the
    projected variances are (1 - x) + x s_r^2, so both reductions are
    one-dimensional least-squares problems. x is clamped to the open
    positive-definiteness interval (-1/(d-1), 1) minus a 1e-6 margin.
    """
    u, loc, sc2 = _usable_design(est)
    d = u.shape[1]
    m = est.n_components
    s = u @ np.ones(d)
    denom = float(np.sum(s * s))
    if denom <= 1e-12:
        raise EstimationError(
            "all usable directions are orthogonal to the ones vector; "
            "constant-coordinate means are not identifiable"
        )
    mean_scalars = (s @ loc) / denom
    mean_res = np.linalg.norm(np.outer(s, mean_scalars) - loc, axis=0)

    a = s * s - 1.0
    denom_x = float(m * np.sum(a * a))
    if denom_x <= 1e-12:
        raise EstimationError(
            "projected directions carry no contrast on the ones direction; "
            "the compound-symmetry parameter is not identifiable"
        )
    b = sc2 - 1.0
    x_hat = float(np.sum(a[:, None] * b) / denom_x)
    lo = -1.0 / (d - 1) + 1e-6
    hi = 1.0 - 1e-6
    x_hat = float(np.clip(x_hat, lo, hi))
    fitted = (1.0 - x_hat) + x_hat * (s * s)
    cov_res = float(np.linalg.norm(fitted[:, None] - sc2))

    return ConstrainedResult(
        mean_scalars=mean_scalars,
        x=x_hat,
        means=np.outer(mean_scalars, np.ones(d)),
        covariance=compound_symmetry(d, x_hat),
        mean_residuals=mean_res,
        cov_residual=cov_res,
    )
