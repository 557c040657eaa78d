"""Random unit directions, direction-count bounds and sm-uniqueness certificates.

A set of unit vectors determines every symmetric matrix through the quadratic
forms u^T A u exactly when the design matrix whose rows are vecsym(u u^T) has
full column rank d(d+1)/2. Randomly drawn directions achieve this with
probability one; the certificate below checks it numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidArgumentError

_SQRT2 = math.sqrt(2.0)


def required_directions(m: int, d: int) -> int:
    """Number of directions sufficient to separate two m-component mixtures in R^d.

    Evaluates ceil((1/2) (2m-1) (d^2 + d - 2)) + 1. Requires d >= 2.
    """
    if m < 1:
        raise InvalidArgumentError("m must be >= 1")
    if d < 2:
        raise InvalidArgumentError("direction-count bound is defined for d >= 2")
    return math.ceil(0.5 * (2 * m - 1) * (d * d + d - 2)) + 1


def single_measure_directions(d: int) -> int:
    """Directions needed to pin down a single elliptical measure: (d^2 + d) / 2."""
    if d < 2:
        raise InvalidArgumentError("direction-count bound is defined for d >= 2")
    return (d * d + d) // 2


def vecsym(mat: np.ndarray) -> np.ndarray:
    """Map a symmetric d x d matrix to R^{d(d+1)/2} isometrically.

    Coordinates are the diagonal entries followed by sqrt(2) * M_ij for i < j,
    so that <vecsym(M), vecsym(M')> equals the Frobenius inner product.
    """
    mat = np.asarray(mat, dtype=float)
    d = mat.shape[0]
    iu = np.triu_indices(d, k=1)
    return np.concatenate([np.diag(mat), _SQRT2 * mat[iu]])


def vecsym_inverse(vec: np.ndarray, d: int) -> np.ndarray:
    """Inverse of :func:`vecsym`."""
    vec = np.asarray(vec, dtype=float)
    if vec.size != d * (d + 1) // 2:
        raise InvalidArgumentError(f"expected length {d * (d + 1) // 2}, got {vec.size}")
    out = np.zeros((d, d))
    np.fill_diagonal(out, vec[:d])
    iu = np.triu_indices(d, k=1)
    out[iu] = vec[d:] / _SQRT2
    out[(iu[1], iu[0])] = out[iu]
    return out


@dataclass(frozen=True)
class Certificate:
    """Numerical sm-uniqueness certificate for a direction set."""

    design_rank: int
    is_sm_unique: bool
    # Monte Carlo strongness check; None when not requested / not applicable.
    strong_subsets_checked: Optional[int] = None
    strong_all_unique: Optional[bool] = None
    strong_exhaustive: Optional[bool] = None

    def to_dict(self) -> dict:
        return {
            "design_rank": self.design_rank,
            "is_sm_unique": self.is_sm_unique,
            "strong_subsets_checked": self.strong_subsets_checked,
            "strong_all_unique": self.strong_all_unique,
            "strong_exhaustive": self.strong_exhaustive,
        }


@dataclass(frozen=True)
class DirectionSet:
    """k unit vectors in R^d (one per row) with an optional certificate."""

    vectors: np.ndarray
    certificate: Optional[Certificate] = None

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vectors, dtype=float))
        if v.shape[0] < 1:
            raise InvalidArgumentError("a direction set needs at least one vector")
        norms = np.linalg.norm(v, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-10):
            raise InvalidArgumentError("all direction vectors must have unit norm (within 1e-10)")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    @property
    def k(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def with_certificate(self, cert: Certificate) -> "DirectionSet":
        return DirectionSet(vectors=self.vectors, certificate=cert)

    def save_csv(self, path) -> None:
        np.savetxt(path, self.vectors, delimiter=",", fmt="%.17g")

    @classmethod
    def load_csv(cls, path) -> "DirectionSet":
        v = np.loadtxt(path, delimiter=",", ndmin=2)
        # renormalize: text round-trips can perturb norms past the tolerance
        v = v / np.linalg.norm(v, axis=1, keepdims=True)
        return cls(vectors=v)


def sample_directions(d: int, k: int, seed: int) -> DirectionSet:
    """Draw k iid directions uniformly on the unit sphere (deterministic per seed)."""
    if k < 1:
        raise InvalidArgumentError("k must be >= 1")
    if d < 1:
        raise InvalidArgumentError("d must be >= 1")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((k, d))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    # a zero draw has probability zero; redraw defensively all the same
    while np.any(norms == 0.0):  # pragma: no cover
        bad = norms[:, 0] == 0.0
        v[bad] = rng.standard_normal((int(bad.sum()), d))
        norms = np.linalg.norm(v, axis=1, keepdims=True)
    return DirectionSet(vectors=v / norms)


def vecsym_design(vectors: np.ndarray) -> np.ndarray:
    """Design matrix with r-th row vecsym(u_r u_r^T); shape (k, d(d+1)/2)."""
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
    return np.stack([vecsym(np.outer(u, u)) for u in vectors])


def design_rank(design: np.ndarray) -> int:
    """Rank by singular values with threshold max(rows, cols) * s_max * 1e-12."""
    s = np.linalg.svd(design, compute_uv=False)
    if s.size == 0:
        return 0
    thresh = max(design.shape) * s[0] * 1e-12
    return int(np.sum(s > thresh))


def certify_sm_uniqueness(
    dirs: DirectionSet,
    strong: bool = False,
    max_subsets: int = 200,
    seed: int = 0,
) -> Certificate:
    """Certify that the directions determine symmetric matrices uniquely.

    The full set is sm-unique iff the vecsym design has rank d(d+1)/2. With
    ``strong=True`` and k >= d(d+1)/2, up to ``max_subsets`` subsets of size
    d(d+1)/2 are additionally rank-checked (exhaustively when there are at
    most ``max_subsets`` subsets), giving a Monte Carlo strongness certificate
    rather than a proof. With k < d(d+1)/2 strongness is reported as not
    applicable (None fields).
    """
    d = dirs.dim
    n_cols = d * (d + 1) // 2
    design = vecsym_design(dirs.vectors)
    rank = design_rank(design)
    unique = rank == n_cols

    checked: Optional[int] = None
    all_unique: Optional[bool] = None
    exhaustive: Optional[bool] = None
    if strong and dirs.k >= n_cols:
        total = math.comb(dirs.k, n_cols)
        all_unique = True
        if total <= max_subsets:
            exhaustive = True
            from itertools import combinations

            subsets = combinations(range(dirs.k), n_cols)
            checked = 0
            for idx in subsets:
                checked += 1
                if design_rank(design[list(idx)]) != n_cols:
                    all_unique = False
        else:
            exhaustive = False
            rng = np.random.default_rng(seed)
            checked = max_subsets
            for _ in range(max_subsets):
                idx = rng.choice(dirs.k, size=n_cols, replace=False)
                if design_rank(design[idx]) != n_cols:
                    all_unique = False
    return Certificate(
        design_rank=rank,
        is_sm_unique=unique,
        strong_subsets_checked=checked,
        strong_all_unique=all_unique,
        strong_exhaustive=exhaustive,
    )
