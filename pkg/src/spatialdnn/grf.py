"""Stationary covariance models and Cholesky sampling of Gaussian random fields.

Only isotropic models are provided: the exponential model and the Matérn
family at half-integer smoothness, where the Bessel function reduces to a
polynomial times an exponential. Distances are Euclidean in one or two
dimensions.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from spatialdnn.errors import InvalidInputError, NotPositiveDefiniteError

__all__ = [
    "CovarianceModel",
    "LocationSet",
    "CovMatrix",
    "CholeskyFactor",
    "GrfSample",
    "JITTER_LADDER",
    "cov_eval",
    "cov_from_distance",
    "build_cov",
    "cross_cov",
    "chol",
    "sample_field",
    "traces",
    "equispaced_grid",
    "write_matrix_csv",
    "write_sample_csv",
]

JITTER_LADDER = (0.0, 1e-10, 1e-8, 1e-6)
_MATERN_NU = (0.5, 1.5, 2.5)


@dataclass(frozen=True)
class CovarianceModel:
    """Isotropic stationary covariance.

    Parameters
    ----------
    kind : {"exponential", "matern"}
    range : float
        Range parameter rho, in distance units.
    smoothness : float
        Matérn smoothness nu; one of 0.5, 1.5, 2.5. Ignored for the
        exponential model.
    variance : float
        Marginal variance of the field.
    """

    kind: str = "exponential"
    range: float = 0.5
    smoothness: float = 0.5
    variance: float = 1.0

    def __post_init__(self):
        if self.kind not in ("exponential", "matern"):
            raise InvalidInputError(f"unknown covariance kind {self.kind!r}")
        if not (np.isfinite(self.range) and self.range > 0):
            raise InvalidInputError("range must be positive")
        if not (np.isfinite(self.variance) and self.variance > 0):
            raise InvalidInputError("variance must be positive")
        if self.kind == "matern" and float(self.smoothness) not in _MATERN_NU:
            raise InvalidInputError(
                f"matern smoothness must be one of {_MATERN_NU}, got {self.smoothness}"
            )


@dataclass(frozen=True)
class LocationSet:
    """Ordered, duplicate-free points inside ``[0, D]^dim``."""

    coords: np.ndarray
    domain_size: float = 1.0

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.float64)
        if c.ndim == 1:
            c = c[:, None]
        if c.ndim != 2 or c.shape[0] == 0:
            raise InvalidInputError("location set must be a nonempty list of points")
        if c.shape[1] not in (1, 2):
            raise InvalidInputError("locations must be one- or two-dimensional")
        if not np.all(np.isfinite(c)):
            raise InvalidInputError("non-finite location coordinate")
        if self.domain_size <= 0:
            raise InvalidInputError("domain size must be positive")
        if c.min() < 0 or c.max() > self.domain_size:
            raise InvalidInputError("location outside [0, D]")
        if np.unique(c, axis=0).shape[0] != c.shape[0]:
            raise InvalidInputError("duplicate locations")
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def dimension(self) -> int:
        return self.coords.shape[1]

    def __len__(self):
        return self.n


@dataclass(frozen=True)
class CovMatrix:
    entries: np.ndarray
    jitter_applied: float = 0.0


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower factor with ``lower @ lower.T == entries + jitter * I``."""

    lower: np.ndarray
    jitter: float = 0.0


@dataclass(frozen=True)
class GrfSample:
    values: np.ndarray
    seed: int | None = None

    def __len__(self):
        return self.values.shape[0]


def cov_from_distance(model: CovarianceModel, r):
    """Evaluate the covariance at (arrays of) nonnegative distances."""
    r = np.asarray(r, dtype=np.float64)
    s2 = model.variance
    if model.kind == "exponential":
        return s2 * np.exp(-r / model.range)
    nu = float(model.smoothness)
    x = math.sqrt(2.0 * nu) * r / model.range
    if nu == 0.5:
        return s2 * np.exp(-x)
    if nu == 1.5:
        return s2 * (1.0 + x) * np.exp(-x)
    return s2 * (1.0 + x + x * x / 3.0) * np.exp(-x)


def cov_eval(model: CovarianceModel, s, t) -> float:
    """Covariance between two points."""
    s = np.atleast_1d(np.asarray(s, dtype=np.float64))
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if s.shape != t.shape:
        raise InvalidInputError("points have mismatched dimension")
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(t))):
        raise InvalidInputError("non-finite coordinate")
    r = math.sqrt(float(np.sum((s - t) ** 2)))
    return float(cov_from_distance(model, r))


def _as_coords(locs):
    if isinstance(locs, LocationSet):
        return locs.coords
    c = np.asarray(locs, dtype=np.float64)
    return c[:, None] if c.ndim == 1 else c


def _pairwise_distance(a, b):
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def cross_cov(model: CovarianceModel, a, b) -> np.ndarray:
    """Covariance matrix between two point sets."""
    a, b = _as_coords(a), _as_coords(b)
    if a.shape[1] != b.shape[1]:
        raise InvalidInputError("point sets have mismatched dimension")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InvalidInputError("non-finite coordinate")
    return cov_from_distance(model, _pairwise_distance(a, b))


def build_cov(model: CovarianceModel, locs) -> CovMatrix:
    """Covariance matrix of the field at ``locs``."""
    c = _as_coords(locs)
    if c.shape[0] == 0:
        raise InvalidInputError("empty location set")
    k = cross_cov(model, c, c)
    # exact symmetry regardless of evaluation order
    k = np.triu(k) + np.triu(k, 1).T
    return CovMatrix(entries=k, jitter_applied=0.0)


def chol(cov, ladder=JITTER_LADDER) -> CholeskyFactor:
    """Cholesky factor, adding diagonal jitter from ``ladder`` until it succeeds.

    Raises
    ------
    NotPositiveDefiniteError
        If the factorization fails at the largest jitter.
    """
    a = cov.entries if isinstance(cov, CovMatrix) else np.asarray(cov, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInputError("covariance must be a square matrix")
    eye = np.eye(a.shape[0])
    for jitter in ladder:
        try:
            lower = np.linalg.cholesky(a + jitter * eye if jitter else a)
        except np.linalg.LinAlgError:
            continue
        return CholeskyFactor(lower=lower, jitter=float(jitter))
    raise NotPositiveDefiniteError(
        f"Cholesky failed with jitter up to {ladder[-1]:g}"
    )


def sample_field(factor, rng_seed=None, size=None) -> GrfSample:
    """Draw ``L @ z`` with standard normal ``z`` from a seeded generator.

    ``rng_seed`` may also be a ``numpy.random.Generator``. With ``size`` the
    values have shape ``(size, n)``.
    """
    lower = factor.lower if isinstance(factor, CholeskyFactor) else np.asarray(factor)
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    n = lower.shape[0]
    if size is None:
        z = rng.standard_normal(n)
        values = lower @ z
    else:
        z = rng.standard_normal((size, n))
        values = z @ lower.T
    seed = None if isinstance(rng_seed, np.random.Generator) else rng_seed
    return GrfSample(values=values, seed=seed)


def traces(cov) -> tuple[float, float]:
    """Return ``(tr(G), tr(G @ G))`` for a symmetric matrix ``G``."""
    a = cov.entries if isinstance(cov, CovMatrix) else np.asarray(cov, dtype=np.float64)
    # tr(G^2) = sum of squared entries when G is symmetric
    return float(np.trace(a)), float(np.sum(a * a))


def equispaced_grid(n: int, domain_size: float = 1.0, dimension: int = 1) -> LocationSet:
    """Equally spaced points including both endpoints.

    In two dimensions ``n`` must be a perfect square; the grid is
    ``sqrt(n) x sqrt(n)`` in row-major order.
    """
    if dimension == 1:
        if n == 1:
            return LocationSet(np.zeros((1, 1)), domain_size)
        return LocationSet(np.linspace(0.0, domain_size, n)[:, None], domain_size)
    k = math.isqrt(n)
    if k * k != n:
        raise InvalidInputError(f"n={n} is not a perfect square")
    axis = np.linspace(0.0, domain_size, k) if k > 1 else np.zeros(1)
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    return LocationSet(np.column_stack([gx.ravel(), gy.ravel()]), domain_size)


def _atomic_write_rows(path, header, rows):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    tmp.replace(path)


def write_matrix_csv(cov, path):
    """Write a matrix as ``i,j,value`` rows in row-major order."""
    a = cov.entries if isinstance(cov, CovMatrix) else np.asarray(cov)
    rows = ((i, j, repr(float(a[i, j]))) for i in range(a.shape[0]) for j in range(a.shape[1]))
    _atomic_write_rows(path, ("i", "j", "value"), rows)


def write_sample_csv(sample, path):
    v = sample.values if isinstance(sample, GrfSample) else np.asarray(sample)
    _atomic_write_rows(path, ("i", "value"), ((i, repr(float(x))) for i, x in enumerate(v)))
