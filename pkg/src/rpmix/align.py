"""Cross-direction label alignment via minimum-cost assignment to a pivot.

Each projected fit orders its components arbitrarily. A pivot direction (the
one whose fitted locations are best separated) is chosen, its components are
sorted by location, and every other direction's (weight, location, scale2)
triples are matched to the pivot triples with the Hungarian algorithm.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from .ecf import EcfFitResult
from .errors import EstimationError, InvalidArgumentError
from .model import UnivariateMixture, univariate_component_log_density

# assignment-cost weights for the (weight, location, scale2) coordinates
COST_WEIGHTS = (1.0, 1.0, 1.0)
_STANDARDIZER_FLOOR = 1e-6
# pivot separations below this (in units of the mean projected scale) are
# flagged as low-separation in the alignment plan
LOW_SEPARATION_THRESHOLD = 1.0


@dataclass
class AlignmentPlan:
    """Per-direction permutations applied to match the pivot order.

    ``permutations[r][b]`` is the original component index of direction r that
    was assigned to pivot slot b. ``flips[r]`` records that direction r was
    re-signed (u -> -u, locations negated) before matching: a direction and
    its negation describe the same projection line, and choosing the sign
    with the cheaper assignment makes locations comparable across directions.
    Unusable directions keep the identity permutation and a NaN cost.
    """

    pivot_index: int
    permutations: np.ndarray
    costs: np.ndarray
    flips: np.ndarray
    low_separation: bool

    def to_dict(self) -> dict:
        return {
            "pivot_index": int(self.pivot_index),
            "permutations": self.permutations.tolist(),
            "costs": [None if np.isnan(c) else float(c) for c in self.costs],
            "flips": self.flips.astype(int).tolist(),
            "low_separation": self.low_separation,
        }


def separation_score(mix: UnivariateMixture) -> float:
    """min_{j != j'} |loc_j - loc_j'| / sqrt(mean scale2); inf for m = 1."""
    if mix.n_components < 2:
        return np.inf
    loc = np.sort(mix.locations)
    gap = float(np.min(np.diff(loc)))
    return gap / float(np.sqrt(np.mean(mix.scales2)))


def choose_pivot(fits: list[EcfFitResult]) -> int:
    """Index of the usable fit with the largest location separation (ties: smallest)."""
    best_idx = -1
    best_score = -np.inf
    for i, fit in enumerate(fits):
        if not fit.usable:
            continue
        score = separation_score(fit.fitted)
        if score > best_score:
            best_score = score
            best_idx = i
    if best_idx < 0:
        raise EstimationError("no usable per-direction fits; cannot choose a pivot")
    return best_idx


def assignment_cost_matrix(mix: UnivariateMixture, pivot: UnivariateMixture) -> np.ndarray:
    """cost[a, b] of matching component a of ``mix`` to pivot slot b.

    Squared differences of the triple coordinates; locations and scales are
    standardized by the pivot's value range so the three coordinates are
    commensurable. The range is floored at the typical projected scale
    (sqrt of / the mean of the pivot scales): when the pivot's components
    barely differ in a coordinate, its raw range is mostly noise and would
    otherwise let that coordinate dominate the assignment.
    """
    typical = float(np.mean(pivot.scales2))
    s_loc = max(float(np.ptp(pivot.locations)), np.sqrt(typical), _STANDARDIZER_FLOOR)
    s_sc = max(float(np.ptp(pivot.scales2)), typical, _STANDARDIZER_FLOOR)
    w_lam, w_loc, w_sc = COST_WEIGHTS
    dw = mix.weights[:, None] - pivot.weights[None, :]
    dl = (mix.locations[:, None] - pivot.locations[None, :]) / s_loc
    ds = (mix.scales2[:, None] - pivot.scales2[None, :]) / s_sc
    return w_lam * dw**2 + w_loc * dl**2 + w_sc * ds**2


def _negate_locations(mix: UnivariateMixture) -> UnivariateMixture:
    return UnivariateMixture(
        family=mix.family,
        weights=mix.weights,
        locations=-mix.locations,
        scales2=mix.scales2,
        nu=mix.nu,
    )


def _best_assignment(mix: UnivariateMixture, pivot: UnivariateMixture, allow_flip: bool):
    cost = assignment_cost_matrix(mix, pivot)
    rows, cols = linear_sum_assignment(cost)
    total = float(cost[rows, cols].sum())
    perm = np.empty(pivot.n_components, dtype=int)
    perm[cols] = rows
    if not allow_flip:
        return perm, total, False
    flipped = _negate_locations(mix)
    cost_f = assignment_cost_matrix(flipped, pivot)
    rows_f, cols_f = linear_sum_assignment(cost_f)
    total_f = float(cost_f[rows_f, cols_f].sum())
    if total_f < total:
        perm_f = np.empty(pivot.n_components, dtype=int)
        perm_f[cols_f] = rows_f
        return perm_f, total_f, True
    return perm, total, False


def align(
    fits: list[EcfFitResult],
    pivot_index: int,
    allow_flip: bool = True,
) -> tuple[list[EcfFitResult], AlignmentPlan]:
    """Reorder every usable fit's components to match the pivot's order.

    The pivot itself is first sorted by increasing location; that sorted order
    defines the global component labels. With ``allow_flip`` each direction is
    also tried with negated locations (its mirror parameterization of the same
    line) and the cheaper matching wins; flipped fits have their locations
    negated in the output, and the caller must negate the corresponding
    direction vectors. Unusable fits pass through unchanged.
    """
    if not fits[pivot_index].usable:
        raise InvalidArgumentError("pivot direction must be a usable fit")
    m = fits[pivot_index].fitted.n_components
    k = len(fits)

    pivot_order = np.argsort(fits[pivot_index].fitted.locations)
    pivot_mix = fits[pivot_index].fitted.reordered(pivot_order)

    permutations = np.tile(np.arange(m), (k, 1))
    costs = np.full(k, np.nan)
    flips = np.zeros(k, dtype=bool)
    aligned: list[EcfFitResult] = []
    for i, fit in enumerate(fits):
        if not fit.usable:
            aligned.append(fit)
            continue
        if fit.fitted.n_components != m:
            raise InvalidArgumentError("all fits must have the same number of components")
        if i == pivot_index:
            perm, flip = pivot_order, False
            costs[i] = 0.0
        else:
            perm, costs[i], flip = _best_assignment(fit.fitted, pivot_mix, allow_flip)
        permutations[i] = perm
        flips[i] = flip
        mix = _negate_locations(fit.fitted) if flip else fit.fitted
        aligned.append(replace(fit, fitted=mix.reordered(perm)))

    plan = AlignmentPlan(
        pivot_index=pivot_index,
        permutations=permutations,
        costs=costs,
        flips=flips,
        low_separation=separation_score(pivot_mix) < LOW_SEPARATION_THRESHOLD,
    )
    return aligned, plan


def _responsibilities(mix: UnivariateMixture, y: np.ndarray) -> np.ndarray:
    log_dens = univariate_component_log_density(mix, y)
    with np.errstate(divide="ignore"):
        scores = log_dens + np.log(mix.weights)[None, :]
    scores -= scores.max(axis=1, keepdims=True)
    resp = np.exp(scores)
    return resp / resp.sum(axis=1, keepdims=True)


def align_by_membership(
    fits: list[EcfFitResult],
    pivot_index: int,
    projected: np.ndarray,
) -> tuple[list[EcfFitResult], AlignmentPlan]:
    """Alignment driven by shared data memberships instead of parameter triples.

    All directions project the same observations, so two components are "the
    same" exactly when they claim the same points. cost[a, b] is the mean
    squared difference between component a's responsibilities (under direction
    r's fit, on its own projection) and pivot component b's. This is invariant
    to the direction's sign and to the incomparability of locations across
    directions; no flips are ever needed.
    """
    if not fits[pivot_index].usable:
        raise InvalidArgumentError("pivot direction must be a usable fit")
    m = fits[pivot_index].fitted.n_components
    k = len(fits)
    pivot_order = np.argsort(fits[pivot_index].fitted.locations)
    pivot_mix = fits[pivot_index].fitted.reordered(pivot_order)
    pivot_resp = _responsibilities(pivot_mix, projected[:, pivot_index])

    permutations = np.tile(np.arange(m), (k, 1))
    costs = np.full(k, np.nan)
    aligned: list[EcfFitResult] = []
    for i, fit in enumerate(fits):
        if not fit.usable:
            aligned.append(fit)
            continue
        if fit.fitted.n_components != m:
            raise InvalidArgumentError("all fits must have the same number of components")
        if i == pivot_index:
            perm = pivot_order
            costs[i] = 0.0
        else:
            resp = _responsibilities(fit.fitted, projected[:, i])
            cost = np.mean(
                (resp[:, :, None] - pivot_resp[:, None, :]) ** 2, axis=0
            )
            rows, cols = linear_sum_assignment(cost)
            perm = np.empty(m, dtype=int)
            perm[cols] = rows
            costs[i] = float(cost[rows, cols].sum())
        permutations[i] = perm
        aligned.append(replace(fit, fitted=fit.fitted.reordered(perm)))

    plan = AlignmentPlan(
        pivot_index=pivot_index,
        permutations=permutations,
        costs=costs,
        flips=np.zeros(k, dtype=bool),
        low_separation=separation_score(pivot_mix) < LOW_SEPARATION_THRESHOLD,
    )
    return aligned, plan


def average_weights(aligned_fits: list[EcfFitResult]) -> np.ndarray:
    """Mean of the aligned weights over usable directions, renormalized."""
    usable = [f.fitted.weights for f in aligned_fits if f.usable]
    if not usable:
        raise EstimationError("no usable fits to average weights over")
    mean = np.mean(np.stack(usable), axis=0)
    total = float(mean.sum())
    if total <= 0.0:
        raise EstimationError("averaged weights degenerate to zero")
    out = mean / total
    # push the rounding residual into the largest entry so the sum is exactly 1
    out[np.argmax(out)] += 1.0 - out.sum()
    return out
