"""End-to-end estimation: directions -> per-direction CF fits -> alignment ->
weight averaging -> pinned-weight refits -> multivariate reconstruction."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .agreement import derive_seed, split_blocks
from .align import AlignmentPlan, align, align_by_membership, average_weights, choose_pivot
from .directions import DirectionSet, required_directions, sample_directions
from .ecf import (
    EcfFitResult,
    EcfGrid,
    cf_weights,
    default_grid,
    fit_from_init,
    fit_step1,
    fit_step2,
    init_step,
)
from .errors import ConfigError, EstimationError, InvalidArgumentError
from .model import GAUSSIAN, STUDENT_T, MixtureModel, UnivariateMixture
from .reconstruct import (
    ConstrainedResult,
    ProjectedEstimates,
    ReconstructionResult,
    reconstruct,
    reconstruct_constrained,
    reconstruct_robust,
)


@dataclass
class EstimateConfig:
    """Options for :func:`run_estimate`."""

    m: int
    family: str = GAUSSIAN
    nu: Optional[int] = None
    k: Optional[int] = None          # None: the m,d separation bound
    seed: int = 0
    tau: Optional[float] = None      # None: scale-adaptive per direction
    grid_points: int = 20
    weight_mode: str = "identity"
    restarts: int = 3
    robust: str = "l2"               # "l2" | "l1" | "mom:<L>"
    known_weights: Optional[np.ndarray] = None
    constrained: bool = False
    alignment: str = "membership"    # "membership" | "triples"
    # one extra refinement round: robust first-pass reconstruction re-seeds the
    # per-direction fits (and, without known weights, the weight average) so
    # weakly separated directions escape single-blob-plus-tail local fits
    refine: bool = True

    def __post_init__(self):
        if self.m < 1:
            raise ConfigError("m must be >= 1")
        if self.family not in (GAUSSIAN, STUDENT_T):
            raise ConfigError(f"unknown family {self.family!r}")
        if self.family == STUDENT_T and (self.nu is None or int(self.nu) < 1):
            raise ConfigError("student_t family requires integer nu >= 1")
        if self.robust not in ("l2", "l1") and not self.robust.startswith("mom:"):
            raise ConfigError(f"unknown robust mode {self.robust!r}")
        if self.robust.startswith("mom:"):
            try:
                splits = int(self.robust.split(":", 1)[1])
            except ValueError:
                raise ConfigError(f"bad median-of-means spec {self.robust!r}") from None
            if splits < 2:
                raise ConfigError("median-of-means needs at least 2 splits")
        if self.constrained and self.robust != "l2":
            raise ConfigError("constrained reconstruction supports only the l2 mode")
        if self.alignment not in ("membership", "triples"):
            raise ConfigError(f"unknown alignment mode {self.alignment!r}")
        if self.known_weights is not None:
            w = np.asarray(self.known_weights, dtype=float)
            if w.size != self.m or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
                raise ConfigError("known weights must be m nonnegative values summing to 1")

    @property
    def mom_splits(self) -> Optional[int]:
        if self.robust.startswith("mom:"):
            return int(self.robust.split(":", 1)[1])
        return None


@dataclass
class EstimateResult:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    directions: DirectionSet
    reconstruction: ReconstructionResult
    plan: Optional[AlignmentPlan]
    n_usable: int
    constrained: Optional[ConstrainedResult] = None
    warnings: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def model(self, family: str = GAUSSIAN, nu: Optional[int] = None) -> MixtureModel:
        """Assemble a strictly-PD MixtureModel (tiny ridge added if needed)."""
        covs = np.array(self.covariances, copy=True)
        for j in range(covs.shape[0]):
            evals = np.linalg.eigvalsh(covs[j])
            top = max(float(evals[-1]), 0.0)
            if evals[0] <= 1e-10 * max(top, 1.0):
                bump = max(1e-8 * (np.trace(covs[j]) / covs.shape[1]), 1e-8 * max(top, 1.0), 1e-12)
                covs[j] += bump * np.eye(covs.shape[1])
        return MixtureModel(
            family=family, weights=self.weights, means=self.means, covariances=covs, nu=nu
        )


def _grid_for(y: np.ndarray, config: EstimateConfig) -> Optional[EcfGrid]:
    if config.tau is not None:
        return EcfGrid(tau=config.tau, n_points=config.grid_points)
    # the sample sd does not concentrate for nu <= 2; use the IQR scale there
    robust = config.family == STUDENT_T and config.nu is not None and config.nu <= 2
    try:
        return default_grid(y, config.grid_points, robust_scale=robust)
    except InvalidArgumentError:
        return None  # constant projection; the fit will screen-fail anyway


def _match_weights_to(lam: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Permutation p with slot j of ``weights`` matched to lam[j] (min squared diff)."""
    cost = (np.asarray(weights)[:, None] - np.asarray(lam)[None, :]) ** 2
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(lam.size, dtype=int)
    perm[cols] = rows
    return perm


def run_estimate(
    data: np.ndarray,
    config: EstimateConfig,
    directions: Optional[DirectionSet] = None,
) -> EstimateResult:
    """Two-step random-projection estimation of a multivariate mixture.

    With ``config.known_weights`` the weight-estimation step is skipped
    entirely: per-direction fits run with the supplied weights pinned and the
    output weights equal the input exactly.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    n, d = data.shape
    m = config.m
    if n < 10 * m:
        raise InvalidArgumentError(f"need at least {10 * m} observations for m={m}")
    if d < 2:
        raise InvalidArgumentError("estimation requires dimension d >= 2")

    warnings: list[str] = []
    k_required = required_directions(m, d)
    k = config.k if config.k is not None else k_required
    if k < k_required:
        warnings.append(
            f"k={k} directions is below the separation bound {k_required} for m={m}, d={d}"
        )
    if directions is None:
        directions = sample_directions(d, k, derive_seed(config.seed, "directions"))
    elif directions.dim != d:
        raise InvalidArgumentError("provided directions do not match the data dimension")
    else:
        k = directions.k

    projected = data @ directions.vectors.T  # (n, k)
    grids = [_grid_for(projected[:, r], config) for r in range(k)]
    mweights = [None if g is None else cf_weights(g, config.weight_mode) for g in grids]

    if config.known_weights is None:
        step1 = _run_step1(projected, grids, mweights, config)
        pivot = choose_pivot(step1)
        aligned1, plan = _align(step1, pivot, projected, config)
        # flipped directions were matched through their mirror line; re-sign
        # the vectors and projections so step 2 and reconstruction agree
        sign = np.where(plan.flips, -1.0, 1.0)
        eff_dirs = DirectionSet(vectors=directions.vectors * sign[:, None])
        projected = projected * sign[None, :]
        lam = average_weights(aligned1)
        step2 = _run_step2_full(projected, grids, mweights, aligned1, lam, config)
    else:
        lam = np.asarray(config.known_weights, dtype=float)
        prefits = _run_known_weight_fits(projected, grids, mweights, lam, config)
        pivot = choose_pivot(prefits)
        step2, plan = _align(prefits, pivot, projected, config)
        sign = np.where(plan.flips, -1.0, 1.0)
        eff_dirs = DirectionSet(vectors=directions.vectors * sign[:, None])
        projected = projected * sign[None, :]
        # map the pivot's location-sorted slots back onto the supplied weight order
        usable = [f for f in step2 if f.usable]
        mean_w = np.mean(np.stack([f.fitted.weights for f in usable]), axis=0)
        back = _match_weights_to(lam, mean_w)
        step2 = [
            replace(f, fitted=f.fitted.reordered(back)) if f.usable else f for f in step2
        ]

    est = _collect_estimates(step2, eff_dirs, m)
    refined = False
    if config.refine:
        try:
            est, lam, step2 = _refine_round(
                projected, grids, mweights, eff_dirs, est, lam, step2, config
            )
            refined = True
        except EstimationError as exc:
            warnings.append(f"refinement skipped: {exc}")
    n_usable = int(np.sum(est.usable))

    constrained_result: Optional[ConstrainedResult] = None
    if config.constrained:
        constrained_result = reconstruct_constrained(est)
        recon = ReconstructionResult(
            means=constrained_result.means,
            covariances=np.tile(constrained_result.covariance, (m, 1, 1)),
            mean_residuals=constrained_result.mean_residuals,
            cov_residuals=np.full(m, constrained_result.cov_residual),
            method="l2-constrained",
            diagnostics={"compound_symmetry_x": constrained_result.x},
        )
    elif config.robust == "l2":
        recon = reconstruct(est)
    elif config.robust == "l1":
        recon = reconstruct_robust(est, method="l1")
    else:
        splits = _mom_splits_estimates(data, eff_dirs, step2, lam, grids, mweights, config)
        recon = reconstruct_robust(est, method="mom", splits=splits)

    return EstimateResult(
        weights=lam,
        means=recon.means,
        covariances=recon.covariances,
        directions=eff_dirs,
        reconstruction=recon,
        plan=plan,
        n_usable=n_usable,
        constrained=constrained_result,
        warnings=warnings,
        diagnostics={
            "n_usable": n_usable,
            "k": k,
            "required_k": k_required,
            "refined": refined,
            "pivot_index": plan.pivot_index if plan is not None else None,
            "low_separation": plan.low_separation if plan is not None else None,
        },
    )


def _align(fits, pivot, projected, config):
    if config.alignment == "membership":
        return align_by_membership(fits, pivot, projected)
    return align(fits, pivot)


def _refine_round(projected, grids, mweights, eff_dirs, est, lam, step2, config):
    """One consistency round: robust reconstruction re-seeds every usable
    direction, the weights are re-averaged from free refits (unless supplied),
    and the pinned fits are re-run from the consistent starting points."""
    m = config.m
    if config.constrained:
        first = reconstruct_constrained(est)
        means = first.means
        covs = np.tile(first.covariance, (m, 1, 1))
    else:
        first = reconstruct_robust(est, "l1")
        means, covs = first.means, first.covariances

    inits: dict[int, UnivariateMixture] = {}
    for r in range(eff_dirs.k):
        if not est.usable[r]:
            continue
        u = eff_dirs.vectors[r]
        y = projected[:, r]
        floor = (0.05 * float(np.std(y))) ** 2
        loc = means @ u
        s2 = np.maximum(np.einsum("jab,a,b->j", covs, u, u), max(floor, 1e-12))
        inits[r] = UnivariateMixture(
            family=config.family, weights=lam, locations=loc, scales2=s2, nu=config.nu
        )
    if not inits:
        raise EstimationError("no usable directions to refine")

    if config.known_weights is None and m >= 2:
        lams = []
        for r, init in inits.items():
            free = fit_from_init(
                projected[:, r],
                init,
                family=config.family,
                grid=grids[r],
                moment_weights=mweights[r],
                nu=config.nu,
                direction_index=r,
            )
            lams.append(free.fitted.weights)
        lam = np.mean(np.stack(lams), axis=0)
        lam = lam / lam.sum()
        lam[np.argmax(lam)] += 1.0 - lam.sum()
        inits = {
            r: UnivariateMixture(
                family=config.family,
                weights=lam,
                locations=i.locations,
                scales2=i.scales2,
                nu=config.nu,
            )
            for r, i in inits.items()
        }

    refit: list[EcfFitResult] = []
    for r in range(eff_dirs.k):
        if r not in inits:
            refit.append(step2[r] if not step2[r].usable else _screen_failed(r))
            continue
        refit.append(
            fit_step2(
                projected[:, r],
                lam,
                inits[r],
                family=config.family,
                grid=grids[r],
                moment_weights=mweights[r],
                nu=config.nu,
                direction_index=r,
            )
        )
    return _collect_estimates(refit, eff_dirs, m), lam, refit


def _run_step1(projected, grids, mweights, config) -> list[EcfFitResult]:
    fits = []
    for r in range(projected.shape[1]):
        y = projected[:, r]
        if grids[r] is None:
            fits.append(_screen_failed(r))
            continue
        fits.append(
            fit_step1(
                y,
                config.m,
                family=config.family,
                grid=grids[r],
                moment_weights=mweights[r],
                nu=config.nu,
                seed=derive_seed(config.seed, "step1", r),
                restarts=config.restarts,
                direction_index=r,
            )
        )
    return fits


def _run_step2_full(projected, grids, mweights, aligned1, lam, config) -> list[EcfFitResult]:
    fits = []
    for r in range(projected.shape[1]):
        prev = aligned1[r]
        if not prev.usable or grids[r] is None:
            fits.append(prev)
            continue
        fits.append(
            fit_step2(
                projected[:, r],
                lam,
                prev.fitted,
                family=config.family,
                grid=grids[r],
                moment_weights=mweights[r],
                nu=config.nu,
                direction_index=r,
            )
        )
    return fits


def _run_known_weight_fits(projected, grids, mweights, lam, config) -> list[EcfFitResult]:
    """Pinned-weight fits straight from k-means inits (weight step skipped)."""
    fits = []
    for r in range(projected.shape[1]):
        y = projected[:, r]
        if grids[r] is None:
            fits.append(_screen_failed(r))
            continue
        ini = init_step(
            y,
            config.m,
            rng=np.random.default_rng(derive_seed(config.seed, "init", r)),
            family=config.family,
            nu=config.nu,
        )
        if not ini.screen_passed or ini.mixture is None:
            fits.append(_screen_failed(r))
            continue
        # hand each cluster the closest supplied weight, then pin
        perm = _match_weights_to(lam, ini.mixture.weights)
        init_mix = ini.mixture.reordered(perm)
        fits.append(
            fit_step2(
                y,
                lam,
                init_mix,
                family=config.family,
                grid=grids[r],
                moment_weights=mweights[r],
                nu=config.nu,
                direction_index=r,
            )
        )
    return fits


def _screen_failed(r: int) -> EcfFitResult:
    return EcfFitResult(
        direction_index=r,
        fitted=None,
        criterion=np.inf,
        converged=False,
        screen_passed=False,
        iterations=0,
        criterion_trace=np.array([]),
    )


def _collect_estimates(step2, directions, m) -> ProjectedEstimates:
    k = directions.k
    locations = np.full((k, m), np.nan)
    scales2 = np.full((k, m), np.nan)
    usable = np.zeros(k, dtype=bool)
    for r, fit in enumerate(step2):
        if fit.usable:
            locations[r] = fit.fitted.locations
            scales2[r] = fit.fitted.scales2
            usable[r] = True
    if not np.any(usable):
        raise EstimationError("every direction failed screening; nothing to reconstruct")
    return ProjectedEstimates(
        directions=directions, locations=locations, scales2=scales2, usable=usable
    )


def _mom_splits_estimates(
    data, directions, step2, lam, grids, mweights, config
) -> list[ProjectedEstimates]:
    """Per-block pinned-weight refits for the median-of-means mode.

    The sample is split into L disjoint blocks; each block re-runs the
    pinned-weight fits (initialized at the full-sample aligned estimates, so
    component identity carries over) and reconstructs independently.
    """
    n = data.shape[0]
    n_splits = config.mom_splits
    if n // n_splits < 10 * config.m:
        raise InvalidArgumentError(
            f"median-of-means with L={n_splits} leaves blocks below the "
            f"{10 * config.m}-observation minimum"
        )
    blocks = split_blocks(n, n_splits)
    out = []
    for block in blocks:
        sub = data[block]
        sub_proj = sub @ directions.vectors.T
        fits = []
        for r in range(directions.k):
            prev = step2[r]
            if not prev.usable:
                fits.append(prev)
                continue
            fits.append(
                fit_step2(
                    sub_proj[:, r],
                    lam,
                    prev.fitted,
                    family=config.family,
                    grid=grids[r],
                    moment_weights=mweights[r],
                    nu=config.nu,
                    direction_index=r,
                )
            )
        out.append(_collect_estimates(fits, directions, config.m))
    return out
