"""Mixture parameter types, densities, sampling, projection and MAP allocation.

A :class:`MixtureModel` holds the full multivariate parameter set
(weights, means, covariances) for a Gaussian or Student-t mixture; a
:class:`UnivariateMixture` is its image under projection onto a unit
direction. All types are immutable after construction and safe to share
across threads; sampling is a pure function of the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln, logsumexp

from .errors import InvalidArgumentError, NumericalError

GAUSSIAN = "gaussian"
STUDENT_T = "student_t"
FAMILIES = (GAUSSIAN, STUDENT_T)

# Relative eigenvalue floor below which a covariance is treated as degenerate.
_DEGENERATE_REL_TOL = 1e-12


def _as_readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


def _log_weights(w: np.ndarray) -> np.ndarray:
    # zero weights are legal on the simplex; log(0) = -inf is the right value
    with np.errstate(divide="ignore"):
        return np.log(w)


def check_symmetric_pd(sigma: np.ndarray, name: str = "covariance") -> np.ndarray:
    """Validate a symmetric positive-definite matrix and return a frozen copy.

    Near-symmetric input (relative asymmetry below 1e-9) is symmetrized so the
    stored matrix equals its transpose entrywise; anything worse is rejected.
    Matrices whose smallest eigenvalue is at most 1e-12 times the largest are
    rejected as degenerate.
    """
    s = np.asarray(sigma, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise InvalidArgumentError(f"{name} must be a square matrix, got shape {s.shape}")
    scale = float(np.max(np.abs(s))) or 1.0
    if np.max(np.abs(s - s.T)) > 1e-9 * scale:
        raise InvalidArgumentError(f"{name} is not symmetric")
    s = 0.5 * (s + s.T)
    eigvals = np.linalg.eigvalsh(s)
    if eigvals[-1] <= 0.0 or eigvals[0] <= _DEGENERATE_REL_TOL * eigvals[-1]:
        raise InvalidArgumentError(
            f"{name} is not positive definite (eigenvalue range [{eigvals[0]:.3e}, {eigvals[-1]:.3e}])"
        )
    return _as_readonly(s)


def check_simplex(weights: np.ndarray, name: str = "weights", tol: float = 1e-12) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size < 1:
        raise InvalidArgumentError(f"{name} must be a non-empty vector")
    if np.any(w < 0.0):
        raise InvalidArgumentError(f"{name} must be nonnegative")
    if abs(float(w.sum()) - 1.0) > tol:
        raise InvalidArgumentError(f"{name} must sum to 1 within {tol:g}, got {w.sum()!r}")
    return _as_readonly(w)


@dataclass(frozen=True)
class MixtureModel:
    """Parameters of an m-component mixture on R^d.

    ``family`` is ``"gaussian"`` or ``"student_t"``; for the latter a single
    model-level ``nu`` (integer >= 1 degrees of freedom) applies to every
    component.
    """

    family: str
    weights: np.ndarray
    means: np.ndarray       # (m, d)
    covariances: np.ndarray  # (m, d, d)
    nu: Optional[int] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidArgumentError(f"unknown family {self.family!r}")
        weights = check_simplex(self.weights)
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        m = weights.size
        if means.shape[0] != m:
            raise InvalidArgumentError(f"expected {m} means, got {means.shape[0]}")
        d = means.shape[1]
        covs = np.asarray(self.covariances, dtype=float)
        if covs.shape != (m, d, d):
            raise InvalidArgumentError(f"covariances must have shape {(m, d, d)}, got {covs.shape}")
        covs = np.stack([check_symmetric_pd(covs[j], f"covariance {j}") for j in range(m)])
        if self.family == STUDENT_T:
            if self.nu is None or int(self.nu) < 1:
                raise InvalidArgumentError("student_t family requires integer nu >= 1")
            object.__setattr__(self, "nu", int(self.nu))
        elif self.nu is not None:
            raise InvalidArgumentError("nu is only meaningful for the student_t family")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", _as_readonly(means))
        object.__setattr__(self, "covariances", _as_readonly(covs))

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def to_dict(self) -> dict:
        doc = {
            "family": self.family,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            # row-major flattening, one flat array per component
            "covariances": [c.ravel().tolist() for c in self.covariances],
        }
        if self.nu is not None:
            doc["nu"] = self.nu
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "MixtureModel":
        means = np.asarray(doc["means"], dtype=float)
        if means.ndim == 1:
            means = means[:, None]
        d = means.shape[1]
        covs = []
        for c in doc["covariances"]:
            c = np.asarray(c, dtype=float)
            covs.append(c.reshape(d, d))
        return cls(
            family=doc["family"],
            weights=np.asarray(doc["weights"], dtype=float),
            means=means,
            covariances=np.stack(covs),
            nu=doc.get("nu"),
        )

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load_json(cls, path) -> "MixtureModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class UnivariateMixture:
    """Projected one-dimensional mixture: weights, locations and squared scales."""

    family: str
    weights: np.ndarray
    locations: np.ndarray
    scales2: np.ndarray
    nu: Optional[int] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidArgumentError(f"unknown family {self.family!r}")
        weights = check_simplex(self.weights)
        loc = np.asarray(self.locations, dtype=float).ravel()
        sc2 = np.asarray(self.scales2, dtype=float).ravel()
        if loc.size != weights.size or sc2.size != weights.size:
            raise InvalidArgumentError("weights, locations and scales2 must have equal length")
        if np.any(sc2 <= 0.0):
            raise InvalidArgumentError("scales2 must be strictly positive")
        if self.family == STUDENT_T and (self.nu is None or int(self.nu) < 1):
            raise InvalidArgumentError("student_t family requires integer nu >= 1")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "locations", _as_readonly(loc))
        object.__setattr__(self, "scales2", _as_readonly(sc2))
        if self.nu is not None:
            object.__setattr__(self, "nu", int(self.nu))

    @property
    def n_components(self) -> int:
        return self.weights.size

    def reordered(self, perm: np.ndarray) -> "UnivariateMixture":
        perm = np.asarray(perm, dtype=int)
        return UnivariateMixture(
            family=self.family,
            weights=self.weights[perm],
            locations=self.locations[perm],
            scales2=self.scales2[perm],
            nu=self.nu,
        )


@dataclass(frozen=True)
class LabeledSample:
    """An N x d data matrix with optional component labels (0-based)."""

    data: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        data = np.atleast_2d(np.asarray(self.data, dtype=float))
        if data.shape[0] < 1:
            raise InvalidArgumentError("sample must contain at least one observation")
        object.__setattr__(self, "data", _as_readonly(data))
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=int)
            if labels.shape != (data.shape[0],):
                raise InvalidArgumentError("labels must have one entry per observation")
            if np.any(labels < 0):
                raise InvalidArgumentError("labels must be nonnegative component indices")
            labels = labels.copy()
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


# ---------------------------------------------------------------------------
# Densities
# ---------------------------------------------------------------------------


def _component_log_densities(model: MixtureModel, x: np.ndarray) -> np.ndarray:
    """Log density of every component at every row of ``x`` -> (n, m)."""
    n, d = x.shape
    m = model.n_components
    out = np.empty((n, m))
    for j in range(m):
        try:
            chol = np.linalg.cholesky(model.covariances[j])
        except np.linalg.LinAlgError as exc:  # pragma: no cover - guarded at construction
            raise NumericalError(f"covariance {j} is numerically singular") from exc
        diff = x - model.means[j]
        sol = solve_triangular(chol, diff.T, lower=True)
        maha = np.sum(sol * sol, axis=0)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        if model.family == GAUSSIAN:
            out[:, j] = -0.5 * (d * np.log(2.0 * np.pi) + logdet + maha)
        else:
            nu = float(model.nu)
            logc = (
                gammaln((nu + d) / 2.0)
                - gammaln(nu / 2.0)
                - 0.5 * d * np.log(nu * np.pi)
                - 0.5 * logdet
            )
            out[:, j] = logc - 0.5 * (nu + d) * np.log1p(maha / nu)
    return out


def log_density(model: MixtureModel, x: np.ndarray) -> np.ndarray:
    """Mixture log density; accepts a single point or an (n, d) matrix."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    if pts.shape[1] != model.dim:
        raise InvalidArgumentError(f"point dimension {pts.shape[1]} != model dimension {model.dim}")
    comp = _component_log_densities(model, pts)
    ll = logsumexp(comp + _log_weights(model.weights)[None, :], axis=1)
    return float(ll[0]) if single else ll


def density(model: MixtureModel, x: np.ndarray) -> np.ndarray:
    """Mixture density Σ_j λ_j f_j(x). Computed in the log domain."""
    return np.exp(log_density(model, x))


def map_allocate(model: MixtureModel, data: np.ndarray) -> np.ndarray:
    """MAP component labels: argmax_j λ_j f_j(x), ties to the smallest index."""
    pts = np.atleast_2d(np.asarray(data, dtype=float))
    if pts.shape[1] != model.dim:
        raise InvalidArgumentError(f"data dimension {pts.shape[1]} != model dimension {model.dim}")
    scores = _component_log_densities(model, pts) + _log_weights(model.weights)[None, :]
    return np.argmax(scores, axis=1)


def univariate_component_log_density(mix: UnivariateMixture, y: np.ndarray) -> np.ndarray:
    """Per-component log densities of a one-dimensional mixture -> (n, m)."""
    y = np.asarray(y, dtype=float).ravel()
    z2 = (y[:, None] - mix.locations[None, :]) ** 2 / mix.scales2[None, :]
    if mix.family == GAUSSIAN:
        return -0.5 * (np.log(2.0 * np.pi * mix.scales2)[None, :] + z2)
    nu = float(mix.nu)
    logc = (
        gammaln((nu + 1.0) / 2.0)
        - gammaln(nu / 2.0)
        - 0.5 * np.log(nu * np.pi * mix.scales2)
    )
    return logc[None, :] - 0.5 * (nu + 1.0) * np.log1p(z2 / nu)


def univariate_log_density(mix: UnivariateMixture, y: np.ndarray) -> np.ndarray:
    comp = univariate_component_log_density(mix, y)
    return logsumexp(comp + _log_weights(mix.weights)[None, :], axis=1)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def sample(model: MixtureModel, n: int, seed: int) -> LabeledSample:
    """Draw ``n`` observations with latent component labels recorded.

    Student-t components are drawn as a Gaussian divided by sqrt(chi2_nu / nu).
    Deterministic given ``seed``.
    """
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    rng = np.random.default_rng(seed)
    m, d = model.n_components, model.dim
    labels = rng.choice(m, size=n, p=model.weights)
    normals = rng.standard_normal((n, d))
    data = np.empty((n, d))
    chols = []
    for j in range(m):
        try:
            chols.append(np.linalg.cholesky(model.covariances[j]))
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"Cholesky failed for covariance {j}") from exc
    for j in range(m):
        rows = labels == j
        if not np.any(rows):
            continue
        data[rows] = model.means[j] + normals[rows] @ chols[j].T
    if model.family == STUDENT_T:
        chi2 = rng.chisquare(model.nu, size=n)
        scale = np.sqrt(chi2 / model.nu)
        data = model.means[labels] + (data - model.means[labels]) / scale[:, None]
    return LabeledSample(data=data, labels=labels)


def sample_univariate(mix: UnivariateMixture, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw from a one-dimensional mixture (used for model-vs-model comparison)."""
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    labels = rng.choice(mix.n_components, size=n, p=mix.weights)
    z = rng.standard_normal(n)
    y = mix.locations[labels] + np.sqrt(mix.scales2[labels]) * z
    if mix.family == STUDENT_T:
        chi2 = rng.chisquare(mix.nu, size=n)
        y = mix.locations[labels] + (y - mix.locations[labels]) / np.sqrt(chi2 / mix.nu)
    return y


# ---------------------------------------------------------------------------
# Projection
# ---------------------------------------------------------------------------


def _check_unit(u: np.ndarray, dim: int) -> np.ndarray:
    u = np.asarray(u, dtype=float).ravel()
    if u.size != dim:
        raise InvalidArgumentError(f"direction dimension {u.size} != {dim}")
    if abs(float(np.linalg.norm(u)) - 1.0) > 1e-10:
        raise InvalidArgumentError("direction must have unit norm (within 1e-10)")
    return u


def project_model(model: MixtureModel, u: np.ndarray) -> UnivariateMixture:
    """Image of the mixture under x -> <u, x> for a unit vector u.

    Projection preserves family: a Student-t mixture projects to a univariate
    Student-t mixture with the same nu, locations <u, mu_j> and squared scales
    u^T Sigma_j u.
    """
    u = _check_unit(u, model.dim)
    locations = model.means @ u
    scales2 = np.einsum("jab,a,b->j", model.covariances, u, u)
    return UnivariateMixture(
        family=model.family,
        weights=model.weights,
        locations=locations,
        scales2=scales2,
        nu=model.nu,
    )


def project_sample(data: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Project rows of an (N, d) matrix onto a unit direction, preserving order."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    u = _check_unit(u, data.shape[1])
    return data @ u
