"""Per-direction mixture fitting by empirical-characteristic-function matching.

For projected data y_1..y_N and a grid t_1..t_M, the empirical moment vector
stacks Re and Im of the empirical CF. A univariate mixture is fitted by
minimizing the weighted squared discrepancy between this vector and the model
CF moments ("q criterion"). Step 1 optimizes weights, locations and squared
scales jointly; step 2 re-optimizes locations/scales with the weights pinned.

Weights are handled by softmax reparameterization and squared scales by log
reparameterization, so the inner optimizer is unconstrained and both families
run L-BFGS-B with analytic gradients (the Student-t scale gradient goes
through the Bessel-K derivative of its characteristic function).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize
from scipy.special import gammaln, kv, kvp, softmax

from ._kmeans import kmeans
from .errors import InvalidArgumentError
from .model import (
    GAUSSIAN,
    STUDENT_T,
    UnivariateMixture,
    univariate_component_log_density,
)

DEFAULT_GRID_POINTS = 20
MAX_GRADIENT_STEPS = 200
MAX_CRITERION_EVALS = 500
CONVERGENCE_TOL = 1e-10


# ---------------------------------------------------------------------------
# Grid, moment vectors, weighting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EcfGrid:
    """Equally spaced CF evaluation points t_l = tau * l, l = 1..n_points."""

    tau: float
    n_points: int

    def __post_init__(self):
        if not self.tau > 0.0:
            raise InvalidArgumentError("tau must be positive")
        if self.n_points < 1:
            raise InvalidArgumentError("grid needs at least one point")

    @property
    def points(self) -> np.ndarray:
        return self.tau * np.arange(1, self.n_points + 1, dtype=float)


def default_grid(
    y: np.ndarray, n_points: int = DEFAULT_GRID_POINTS, robust_scale: bool = False
) -> EcfGrid:
    """Scale-adaptive grid: tau * n_points ~= 4 / scale(y).

    The scale is sd(y) by default. With ``robust_scale`` (meant for very
    heavy-tailed families, nu <= 2, where the sample sd does not concentrate)
    the normalized interquartile range is used instead, falling back to sd
    when the IQR degenerates.
    """
    y = np.asarray(y, dtype=float)
    s = float(np.std(y))
    if robust_scale:
        q75, q25 = np.percentile(y, [75, 25])
        s_robust = float(q75 - q25) / 1.349
        if s_robust > 0.0:
            s = s_robust
    if s <= 0.0:
        raise InvalidArgumentError("cannot build a CF grid for constant data")
    return EcfGrid(tau=4.0 / (s * n_points), n_points=n_points)


def cf_weights(grid: EcfGrid, mode: str = "identity") -> np.ndarray:
    """Diagonal of the 2M x 2M moment weighting matrix.

    ``identity`` weighs all moments equally; ``diagonal`` damps high
    frequencies with 1 / (1 + t^2) on both the Re and Im blocks.
    """
    if mode == "identity":
        return np.ones(2 * grid.n_points)
    if mode == "diagonal":
        w = 1.0 / (1.0 + grid.points**2)
        return np.concatenate([w, w])
    raise InvalidArgumentError(f"unknown weight mode {mode!r}")


def empirical_cf(y: np.ndarray, grid: EcfGrid) -> np.ndarray:
    """Empirical CF moment vector: (Re psi_hat(t_1..t_M), Im psi_hat(t_1..t_M))."""
    y = np.asarray(y, dtype=float).ravel()
    if y.size < 1:
        raise InvalidArgumentError("need at least one observation")
    ty = np.outer(grid.points, y)
    return np.concatenate([np.cos(ty).mean(axis=1), np.sin(ty).mean(axis=1)])


def _t_cf_magnitude(t: np.ndarray, scales2: np.ndarray, nu: int) -> np.ndarray:
    """|CF| factor of centered univariate t components -> (M, m).

    For scale sigma and z = sqrt(nu) * sigma * |t| this is
    K_{nu/2}(z) z^{nu/2} / (Gamma(nu/2) 2^{nu/2 - 1}), with value 1 at z = 0.
    """
    z = np.sqrt(nu) * np.sqrt(scales2)[None, :] * np.abs(t)[:, None]
    if nu == 1:
        return np.exp(-z)
    half = nu / 2.0
    with np.errstate(invalid="ignore", over="ignore"):
        mag = kv(half, z) * z**half / np.exp(gammaln(half) + (half - 1.0) * np.log(2.0))
    return np.where(z < 1e-12, 1.0, mag)


def _moment_vector(
    t: np.ndarray,
    family: str,
    nu: Optional[int],
    weights: np.ndarray,
    locations: np.ndarray,
    scales2: np.ndarray,
) -> np.ndarray:
    phase = np.outer(t, locations)
    if family == GAUSSIAN:
        mag = np.exp(-0.5 * np.outer(t**2, scales2))
    else:
        mag = _t_cf_magnitude(t, scales2, int(nu))
    re = (mag * np.cos(phase)) @ weights
    im = (mag * np.sin(phase)) @ weights
    return np.concatenate([re, im])


def model_cf(mix: UnivariateMixture, grid: EcfGrid) -> np.ndarray:
    """Model CF moment vector of a univariate mixture on the grid."""
    if mix.family == STUDENT_T and (mix.nu is None or mix.nu < 1):
        raise InvalidArgumentError("student_t characteristic function requires nu >= 1")
    return _moment_vector(
        grid.points, mix.family, mix.nu, mix.weights, mix.locations, mix.scales2
    )


# ---------------------------------------------------------------------------
# Initialization and screening
# ---------------------------------------------------------------------------


@dataclass
class InitResult:
    mixture: Optional[UnivariateMixture]
    screen_passed: bool


def init_step(
    y: np.ndarray,
    m: int,
    rng: np.random.Generator | int | None = None,
    family: str = GAUSSIAN,
    nu: Optional[int] = None,
) -> InitResult:
    """k-means based starting point for a projected fit, with screening.

    Locations start at within-cluster means, squared scales at within-cluster
    variances floored at (0.05 sd(y))^2, weights at cluster proportions
    refined by a single soft responsibility pass (weights only). The screen
    passes iff every cluster holds at least max(5, 0.02 N) points and the
    smallest centroid gap is at least 0.1 sd(y); constant data always fails.
    """
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    if n < 10 * m:
        raise InvalidArgumentError(f"need at least {10 * m} observations for m={m}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    sd = float(np.std(y))
    if sd <= 0.0:
        return InitResult(mixture=None, screen_passed=False)

    if m == 1:
        labels = np.zeros(n, dtype=int)
        centers = np.array([y.mean()])
    else:
        labels, centers2d = kmeans(y[:, None], m, rng)
        centers = centers2d[:, 0]

    order = np.argsort(centers)
    floor = (0.05 * sd) ** 2
    locations = np.empty(m)
    scales2 = np.empty(m)
    weights = np.empty(m)
    counts = np.empty(m)
    for slot, j in enumerate(order):
        member = y[labels == j]
        counts[slot] = member.size
        locations[slot] = member.mean()
        scales2[slot] = max(float(member.var()), floor)
        weights[slot] = member.size / n

    min_count = max(5.0, 0.02 * n)
    gap_ok = True
    if m > 1:
        gaps = np.diff(np.sort(locations))
        gap_ok = bool(np.min(gaps) >= 0.1 * sd)
    screen = bool(np.all(counts >= min_count)) and gap_ok

    mixture = UnivariateMixture(
        family=family, weights=weights, locations=locations, scales2=scales2, nu=nu
    )
    # one soft responsibility pass, updating the weights only
    log_dens = univariate_component_log_density(mixture, y)
    scores = log_dens + np.log(weights)[None, :]
    scores -= scores.max(axis=1, keepdims=True)
    resp = np.exp(scores)
    resp /= resp.sum(axis=1, keepdims=True)
    new_weights = resp.mean(axis=0)
    new_weights /= new_weights.sum()
    mixture = UnivariateMixture(
        family=family, weights=new_weights, locations=locations, scales2=scales2, nu=nu
    )
    return InitResult(mixture=mixture, screen_passed=screen)


# ---------------------------------------------------------------------------
# Criterion and optimizers
# ---------------------------------------------------------------------------


@dataclass
class EcfFitResult:
    """Outcome of one per-direction fit."""

    direction_index: int
    fitted: Optional[UnivariateMixture]
    criterion: float
    converged: bool
    screen_passed: bool
    iterations: int
    criterion_trace: np.ndarray

    @property
    def usable(self) -> bool:
        return self.screen_passed and self.fitted is not None


def make_gaussian_objective(
    ehat: np.ndarray,
    t: np.ndarray,
    moment_weights: np.ndarray,
    m: int,
    fixed_weights: Optional[np.ndarray] = None,
) -> Callable[[np.ndarray], tuple[float, np.ndarray]]:
    """Criterion and analytic gradient for the Gaussian family.

    The parameter vector is (locations, log scales2[, weight logits]); the
    logits block is present only when ``fixed_weights`` is None and m >= 2.
    """
    t2 = t**2
    M = t.size

    def objective(theta: np.ndarray) -> tuple[float, np.ndarray]:
        loc = theta[:m]
        logs2 = np.clip(theta[m : 2 * m], -40.0, 40.0)
        s2 = np.exp(logs2)
        free_w = fixed_weights is None and m >= 2
        lam = softmax(theta[2 * m :]) if free_w else (
            fixed_weights if fixed_weights is not None else np.ones(1)
        )
        phase = np.outer(t, loc)
        mag = np.exp(-0.5 * np.outer(t2, s2))
        coss, sins = np.cos(phase), np.sin(phase)
        comp = np.concatenate([mag * coss, mag * sins])  # (2M, m)
        z = comp @ lam
        r = z - ehat
        wr = moment_weights * r
        q = float(r @ wr)

        # d z / d upsilon_j and d z / d log s2_j
        dz_loc = lam[None, :] * np.concatenate([-mag * sins * t[:, None], mag * coss * t[:, None]])
        dz_ls2 = lam[None, :] * (-0.5 * s2[None, :]) * np.concatenate(
            [mag * coss * t2[:, None], mag * sins * t2[:, None]]
        )
        g_loc = 2.0 * (wr @ dz_loc)
        g_ls2 = 2.0 * (wr @ dz_ls2)
        if free_w:
            # softmax chain rule: d z / d a_j = lam_j (comp_j - z)
            dz_a = lam[None, :] * (comp - z[:, None])
            g_a = 2.0 * (wr @ dz_a)
            return q, np.concatenate([g_loc, g_ls2, g_a])
        return q, np.concatenate([g_loc, g_ls2])

    return objective


def _t_cf_magnitude_and_dz(t: np.ndarray, scales2: np.ndarray, nu: int):
    """(|CF| factor, its derivative in z, z) for centered t components, all (M, m)."""
    z = np.sqrt(nu) * np.sqrt(scales2)[None, :] * np.abs(t)[:, None]
    if nu == 1:
        mag = np.exp(-z)
        return mag, -mag, z
    half = nu / 2.0
    norm = np.exp(gammaln(half) + (half - 1.0) * np.log(2.0))
    with np.errstate(invalid="ignore", over="ignore"):
        kz = kv(half, z)
        dkz = kvp(half, z)  # = -(K_{h-1} + K_{h+1}) / 2
        zh = z**half
        mag = kz * zh / norm
        dmag = (dkz * zh + half * kz * zh / z) / norm
    mag = np.where(z < 1e-12, 1.0, mag)
    dmag = np.where(z < 1e-12, 0.0, dmag)
    return mag, dmag, z


def make_student_objective(
    ehat: np.ndarray,
    t: np.ndarray,
    moment_weights: np.ndarray,
    m: int,
    nu: int,
    fixed_weights: Optional[np.ndarray] = None,
) -> Callable[[np.ndarray], tuple[float, np.ndarray]]:
    """Criterion and analytic gradient for the Student-t family.

    Same parameterization as the Gaussian objective; the scale derivative runs
    through the Bessel-K derivative of the t characteristic function.
    """

    def objective(theta: np.ndarray) -> tuple[float, np.ndarray]:
        loc = theta[:m]
        logs2 = np.clip(theta[m : 2 * m], -40.0, 40.0)
        s2 = np.exp(logs2)
        free_w = fixed_weights is None and m >= 2
        lam = softmax(theta[2 * m :]) if free_w else (
            fixed_weights if fixed_weights is not None else np.ones(1)
        )
        phase = np.outer(t, loc)
        mag, dmag_dz, z = _t_cf_magnitude_and_dz(t, s2, nu)
        coss, sins = np.cos(phase), np.sin(phase)
        comp = np.concatenate([mag * coss, mag * sins])
        zvec = comp @ lam
        r = zvec - ehat
        wr = moment_weights * r
        q = float(r @ wr)

        dz_loc = lam[None, :] * np.concatenate([-mag * sins * t[:, None], mag * coss * t[:, None]])
        # d mag / d log s2 = dmag/dz * z / 2
        dmag_ls2 = dmag_dz * z * 0.5
        dz_ls2 = lam[None, :] * np.concatenate([dmag_ls2 * coss, dmag_ls2 * sins])
        g_loc = 2.0 * (wr @ dz_loc)
        g_ls2 = 2.0 * (wr @ dz_ls2)
        if free_w:
            dz_a = lam[None, :] * (comp - zvec[:, None])
            g_a = 2.0 * (wr @ dz_a)
            return q, np.concatenate([g_loc, g_ls2, g_a])
        return q, np.concatenate([g_loc, g_ls2])

    return objective


class _BestTracker:
    """Records the running best criterion value (the reported sequence)."""

    def __init__(self):
        self.best = np.inf
        self.trace: list[float] = []

    def observe(self, value: float) -> None:
        if value < self.best:
            self.best = value
        self.trace.append(self.best)


def _pack(mix: UnivariateMixture, include_weights: bool) -> np.ndarray:
    parts = [mix.locations, np.log(mix.scales2)]
    if include_weights:
        parts.append(np.log(np.maximum(mix.weights, 1e-12)))
    return np.concatenate(parts)


def _unpack(
    theta: np.ndarray,
    m: int,
    family: str,
    nu: Optional[int],
    fixed_weights: Optional[np.ndarray],
) -> UnivariateMixture:
    loc = theta[:m]
    s2 = np.exp(np.clip(theta[m : 2 * m], -40.0, 40.0))
    if fixed_weights is not None:
        lam = fixed_weights
    elif m == 1:
        lam = np.ones(1)
    else:
        lam = softmax(theta[2 * m :])
    return UnivariateMixture(family=family, weights=lam, locations=loc, scales2=s2, nu=nu)


def _optimize(
    objective,
    theta0: np.ndarray,
    tracker: _BestTracker,
    max_gradient_steps: int,
):
    def fun(th):
        q, g = objective(th)
        tracker.observe(q)
        return q, g

    # polish to machine precision so a refit from the optimum stays put;
    # the documented 1e-10 criterion-decrease convergence is then implied
    res = minimize(
        fun,
        theta0,
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_gradient_steps, "ftol": 1e-15, "gtol": 1e-12},
    )
    return res.x, float(res.fun), res.status == 0, int(res.nit)


def fit_step1(
    y: np.ndarray,
    m: int,
    family: str = GAUSSIAN,
    grid: Optional[EcfGrid] = None,
    moment_weights: Optional[np.ndarray] = None,
    nu: Optional[int] = None,
    seed: int | np.random.Generator | None = 0,
    restarts: int = 3,
    direction_index: int = -1,
) -> EcfFitResult:
    """Step-1 fit: all of (weights, locations, scales2) from one projection.

    Runs ``restarts`` k-means-seeded starts and keeps the best criterion. A
    screening failure skips optimization and flags the result unusable.
    """
    y = np.asarray(y, dtype=float).ravel()
    if y.size < 10 * m:
        raise InvalidArgumentError(f"need at least {10 * m} observations for m={m}")
    _check_family(family, nu)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    inits = [init_step(y, m, rng, family=family, nu=nu) for _ in range(max(1, restarts))]
    usable_inits = [ini.mixture for ini in inits if ini.screen_passed]
    screen_passed = len(usable_inits) > 0
    if not screen_passed:
        fallback = next((ini.mixture for ini in inits if ini.mixture is not None), None)
        crit = np.inf
        if fallback is not None:
            grid = grid or default_grid(y)
            w = _resolve_weights(moment_weights, grid)
            r = model_cf(fallback, grid) - empirical_cf(y, grid)
            crit = float(r @ (w * r))
        return EcfFitResult(
            direction_index=direction_index,
            fitted=fallback,
            criterion=crit,
            converged=False,
            screen_passed=False,
            iterations=0,
            criterion_trace=np.array([]),
        )

    grid = grid or default_grid(y)
    _check_grid_size(grid, m)
    w = _resolve_weights(moment_weights, grid)
    t = grid.points
    ehat = empirical_cf(y, grid)
    include_weights = m >= 2
    tracker = _BestTracker()

    best = None
    for mix0 in usable_inits:
        theta0 = _pack(mix0, include_weights)
        if family == GAUSSIAN:
            objective = make_gaussian_objective(ehat, t, w, m)
        else:
            objective = make_student_objective(ehat, t, w, m, int(nu))
        theta, q, converged, iters = _optimize(objective, theta0, tracker, MAX_GRADIENT_STEPS)
        if best is None or q < best[1]:
            best = (theta, q, converged, iters)

    theta, q, converged, iters = best
    fitted = _unpack(theta, m, family, nu, None)
    return EcfFitResult(
        direction_index=direction_index,
        fitted=fitted,
        criterion=q,
        converged=converged,
        screen_passed=True,
        iterations=iters,
        criterion_trace=np.asarray(tracker.trace),
    )


def fit_from_init(
    y: np.ndarray,
    init: UnivariateMixture,
    family: str = GAUSSIAN,
    grid: Optional[EcfGrid] = None,
    moment_weights: Optional[np.ndarray] = None,
    nu: Optional[int] = None,
    direction_index: int = -1,
) -> EcfFitResult:
    """Free fit of all parameters from a supplied starting mixture.

    Same objective as :func:`fit_step1` but with a caller-provided
    initialization instead of k-means starts (no screening, no restarts).
    """
    y = np.asarray(y, dtype=float).ravel()
    m = init.n_components
    if y.size < 10 * m:
        raise InvalidArgumentError(f"need at least {10 * m} observations for m={m}")
    _check_family(family, nu)
    grid = grid or default_grid(y)
    _check_grid_size(grid, m)
    w = _resolve_weights(moment_weights, grid)
    ehat = empirical_cf(y, grid)
    include_weights = m >= 2
    tracker = _BestTracker()
    if family == GAUSSIAN:
        objective = make_gaussian_objective(ehat, grid.points, w, m)
    else:
        objective = make_student_objective(ehat, grid.points, w, m, int(nu))
    theta, q, converged, iters = _optimize(
        objective, _pack(init, include_weights), tracker, MAX_GRADIENT_STEPS
    )
    return EcfFitResult(
        direction_index=direction_index,
        fitted=_unpack(theta, m, family, nu, None),
        criterion=q,
        converged=converged,
        screen_passed=True,
        iterations=iters,
        criterion_trace=np.asarray(tracker.trace),
    )


def fit_step2(
    y: np.ndarray,
    weights_fixed: np.ndarray,
    init: UnivariateMixture,
    family: str = GAUSSIAN,
    grid: Optional[EcfGrid] = None,
    moment_weights: Optional[np.ndarray] = None,
    nu: Optional[int] = None,
    direction_index: int = -1,
    screen_passed: bool = True,
) -> EcfFitResult:
    """Step-2 fit: locations and scales2 with the mixture weights pinned.

    Components with weight exactly zero cannot influence the criterion, so
    their parameters are frozen at the initialization values.
    """
    y = np.asarray(y, dtype=float).ravel()
    weights_fixed = np.asarray(weights_fixed, dtype=float)
    m = weights_fixed.size
    if y.size < 10 * m:
        raise InvalidArgumentError(f"need at least {10 * m} observations for m={m}")
    _check_family(family, nu)
    if np.any(weights_fixed < 0.0) or abs(float(weights_fixed.sum()) - 1.0) > 1e-12:
        raise InvalidArgumentError("weights_fixed must lie on the simplex")
    if init.n_components != m:
        raise InvalidArgumentError("init must have one component per fixed weight")

    grid = grid or default_grid(y)
    _check_grid_size(grid, m)
    w = _resolve_weights(moment_weights, grid)
    t = grid.points
    ehat = empirical_cf(y, grid)

    active = weights_fixed > 0.0
    m_act = int(active.sum())
    if m_act == 0:
        raise InvalidArgumentError("at least one weight must be positive")
    lam_act = weights_fixed[active]
    theta0 = np.concatenate([init.locations[active], np.log(init.scales2[active])])

    tracker = _BestTracker()
    if family == GAUSSIAN:
        objective = make_gaussian_objective(ehat, t, w, m_act, fixed_weights=lam_act)
    else:
        objective = make_student_objective(ehat, t, w, m_act, int(nu), fixed_weights=lam_act)
    theta, q, converged, iters = _optimize(objective, theta0, tracker, MAX_GRADIENT_STEPS)

    locations = init.locations.copy()
    scales2 = init.scales2.copy()
    locations[active] = theta[:m_act]
    scales2[active] = np.exp(np.clip(theta[m_act : 2 * m_act], -40.0, 40.0))
    fitted = UnivariateMixture(
        family=family, weights=weights_fixed, locations=locations, scales2=scales2, nu=nu
    )
    return EcfFitResult(
        direction_index=direction_index,
        fitted=fitted,
        criterion=q,
        converged=converged,
        screen_passed=screen_passed,
        iterations=iters,
        criterion_trace=np.asarray(tracker.trace),
    )


def _check_family(family: str, nu: Optional[int]) -> None:
    if family not in (GAUSSIAN, STUDENT_T):
        raise InvalidArgumentError(f"unknown family {family!r}")
    if family == STUDENT_T and (nu is None or int(nu) < 1):
        raise InvalidArgumentError("student_t fits require integer nu >= 1")


def _check_grid_size(grid: EcfGrid, m: int) -> None:
    if grid.n_points < 3 * m:
        raise InvalidArgumentError(
            f"grid has {grid.n_points} points; need at least 3m = {3 * m} for m={m}"
        )


def _resolve_weights(moment_weights: Optional[np.ndarray], grid: EcfGrid) -> np.ndarray:
    if moment_weights is None:
        return np.ones(2 * grid.n_points)
    w = np.asarray(moment_weights, dtype=float)
    if w.shape != (2 * grid.n_points,):
        raise InvalidArgumentError("moment weights must have length 2 * grid points")
    if np.any(w < 0.0):
        raise InvalidArgumentError("moment weights must be nonnegative")
    return w
