"""Comparison estimators: Nadaraya-Watson kernel regression and an additive model.

Neither estimator models spatial dependence; both treat the observations as
independent pairs ``(x_i, y_i)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline
from scipy.linalg import cho_factor, cho_solve

from spatialdnn.errors import InvalidInputError

__all__ = [
    "KernelSpec",
    "NwModel",
    "nw_fit",
    "nw_predict",
    "nw_density",
    "bandwidth_select",
    "kfold_indices",
    "GamConfig",
    "SplineComponent",
    "GamModel",
    "gam_fit",
    "gam_predict",
    "gam_select_penalty",
    "DEFAULT_GAM_PENALTIES",
]

DEFAULT_GAM_PENALTIES = (1e-4, 1e-3, 1e-2, 1e-1, 1e0, 1e1)


def kfold_indices(n: int, k: int, seed=None):
    """Seeded shuffled k-fold split; returns a list of ``(train, test)`` index arrays."""
    if not 2 <= k <= n:
        raise InvalidInputError(f"need 2 <= k <= n, got k={k}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(perm, k)
    out = []
    for i in range(k):
        test = np.sort(folds[i])
        train = np.sort(np.concatenate([folds[j] for j in range(k) if j != i]))
        out.append((train, test))
    return out


# --------------------------------------------------------------------------
# Nadaraya-Watson
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "gaussian"
    bandwidth: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "epanechnikov"):
            raise InvalidInputError(f"unknown kernel {self.kind!r}")
        if not (math.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise InvalidInputError("bandwidth must be positive")


@dataclass(frozen=True)
class NwModel:
    X: np.ndarray
    y: np.ndarray
    kernel: KernelSpec

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        y = np.array(self.y, dtype=np.float64).reshape(-1)
        if X.shape[0] == 0 or X.shape[0] != y.shape[0]:
            raise InvalidInputError("need a nonempty training set with one response per row")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)


def nw_fit(X, y, kernel: KernelSpec | None = None, rule="cv", seed=None) -> NwModel:
    """Store the training data and pick a bandwidth if none is given."""
    if kernel is None:
        h = bandwidth_select(X, y, rule=rule, seed=seed)
        kernel = KernelSpec("gaussian", h)
    return NwModel(X, y, kernel)


def _sq_dist(Q, X):
    d = Q[:, None, :] - X[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def _kernel_weights(model: NwModel, Q):
    """Unnormalized product-kernel values ``K((q - x_i) / h)``, shape (m, n)."""
    h = model.kernel.bandwidth
    d = Q.shape[1]
    if model.kernel.kind == "gaussian":
        return np.exp(-0.5 * _sq_dist(Q, model.X) / h**2) / (2 * math.pi) ** (d / 2)
    u = (Q[:, None, :] - model.X[None, :, :]) / h
    k = np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)
    return np.prod(k, axis=2)


def _as_queries(model, x):
    Q = np.asarray(x, dtype=np.float64)
    if Q.ndim == 1:
        Q = Q[None, :] if model.X.shape[1] > 1 or Q.size == 1 else Q[:, None]
    if Q.shape[1] != model.X.shape[1]:
        raise InvalidInputError("query dimension does not match the training covariates")
    return Q


def nw_density(model: NwModel, x) -> np.ndarray:
    """Kernel density estimate ``(n h^d)^-1 sum_i K_i(x)`` at each query row."""
    Q = _as_queries(model, x)
    n, d = model.X.shape
    return _kernel_weights(model, Q).sum(axis=1) / (n * model.kernel.bandwidth**d)


def nw_predict(model: NwModel, x) -> np.ndarray:
    """Nadaraya-Watson estimate at each query row.

    The Gaussian case is evaluated with the largest log-weight subtracted,
    which leaves the ratio unchanged and avoids underflow far from the data.
    Where the density is exactly zero (compact kernel) the response of the
    nearest training point is returned.
    """
    Q = _as_queries(model, x)
    if model.kernel.kind == "gaussian":
        logw = -0.5 * _sq_dist(Q, model.X) / model.kernel.bandwidth**2
        w = np.exp(logw - logw.max(axis=1, keepdims=True))
        return (w @ model.y) / w.sum(axis=1)
    w = _kernel_weights(model, Q)
    den = w.sum(axis=1)
    out = np.empty(Q.shape[0])
    ok = den > 0
    out[ok] = (w[ok] @ model.y) / den[ok]
    if not np.all(ok):
        nearest = np.argmin(_sq_dist(Q[~ok], model.X), axis=1)
        out[~ok] = model.y[nearest]
    return out


def _rule_of_thumb(X):
    n, d = X.shape
    sd = X.std(axis=0, ddof=1) if n > 1 else np.zeros(d)
    if not np.any(sd > 0):
        raise InvalidInputError("covariates have zero spread in every coordinate")
    return n ** (-1.0 / (4 + d)) * float(sd.mean())


def bandwidth_grid(X, points: int = 10):
    """Logarithmic grid spanning a factor of 10 either side of the rule of thumb."""
    h0 = _rule_of_thumb(np.atleast_2d(np.asarray(X, dtype=np.float64)))
    return h0 * np.logspace(-1.0, 1.0, points)


def bandwidth_select(X, y=None, rule: str = "rule_of_thumb", kind: str = "gaussian",
                     folds: int = 5, seed=None, return_scores: bool = False):
    """Choose the bandwidth by the rule of thumb or by 5-fold cross-validation.

    The rule of thumb is ``n^(-1/(4+d))`` times the mean per-coordinate
    standard deviation. Cross-validation scores a 10-point log grid centred
    on that value by out-of-fold squared error.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if rule == "rule_of_thumb":
        return _rule_of_thumb(X)
    if rule != "cv":
        raise InvalidInputError(f"unknown bandwidth rule {rule!r}")
    if y is None:
        raise InvalidInputError("cross-validation needs responses")
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n = X.shape[0]
    if n < 10:
        raise InvalidInputError("cross-validated bandwidth needs n >= 10")
    grid = bandwidth_grid(X)
    splits = kfold_indices(n, folds, seed)
    scores = np.zeros(grid.size)
    for train, test in splits:
        for g, h in enumerate(grid):
            m = NwModel(X[train], y[train], KernelSpec(kind, h))
            r = nw_predict(m, X[test]) - y[test]
            scores[g] += float(r @ r)
    scores /= n
    best = float(grid[int(np.argmin(scores))])
    if return_scores:
        return best, grid, scores
    return best


# --------------------------------------------------------------------------
# Additive model by backfitting penalized B-splines
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GamConfig:
    """``knots=None`` means ``min(20, n // 4)`` interior knots; ``penalty=None``
    means the penalty is chosen by 5-fold CV over :data:`DEFAULT_GAM_PENALTIES`."""

    knots: int | None = None
    penalty: float | None = None
    max_sweeps: int = 200
    tol: float = 1e-8
    seed: int = 0


@dataclass(frozen=True)
class SplineComponent:
    """One centred cubic B-spline smooth ``g_j``.

    Outside ``[lo, hi]`` the curve continues linearly from the boundary.
    """

    knots: np.ndarray
    coef: np.ndarray
    offset: float
    lo: float
    hi: float

    def _spline(self):
        return BSpline(self.knots, self.coef, 3, extrapolate=False)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.hi <= self.lo:
            return np.zeros_like(x)
        spl = self._spline()
        inside = np.clip(x, self.lo, self.hi)
        out = spl(inside)
        below, above = x < self.lo, x > self.hi
        if np.any(below) or np.any(above):
            der = spl.derivative()
            out = out + np.where(below, (x - self.lo) * der(self.lo), 0.0)
            out = out + np.where(above, (x - self.hi) * der(self.hi), 0.0)
        return out - self.offset


@dataclass(frozen=True)
class GamModel:
    intercept: float
    components: tuple
    penalty: float
    converged: bool
    sweeps: int
    rss_trace: tuple = field(default=(), repr=False)
    objective_trace: tuple = field(default=(), repr=False)
    link: str = "identity"


def _knot_vector(x, n_interior):
    lo, hi = float(x.min()), float(x.max())
    if n_interior > 0:
        inner = np.quantile(x, np.linspace(0, 1, n_interior + 2)[1:-1])
        inner = np.unique(inner[(inner > lo) & (inner < hi)])
    else:
        inner = np.empty(0)
    return np.concatenate([[lo] * 4, inner, [hi] * 4])


def _basis(knots, x):
    return BSpline.design_matrix(x, knots, 3).toarray()


def _curvature_penalty(knots):
    """Gram matrix of second derivatives, ``int B_j'' B_k''`` over the knot range.

    Second derivatives of cubic B-splines are linear on each span, so two
    Gauss-Legendre nodes per span integrate the products exactly. Linear
    functions lie in the null space whatever the knot placement.
    """
    k = knots.size - 4
    d2 = BSpline(knots, np.eye(k), 3).derivative(2)
    nodes, weights = np.polynomial.legendre.leggauss(2)
    spans = np.unique(knots)
    lo, hi = spans[:-1], spans[1:]
    half = (hi - lo)[:, None] / 2
    x = ((lo + hi)[:, None] / 2 + half * nodes).ravel()
    w = (half * weights).ravel()
    V = d2(x)
    return V.T @ (w[:, None] * V)


class _Smoother:
    """Penalized least-squares projection for one covariate."""

    def __init__(self, x, n_interior, penalty):
        self.lo, self.hi = float(x.min()), float(x.max())
        self.constant = self.hi <= self.lo
        if self.constant:
            return
        self.knots = _knot_vector(x, n_interior)
        self.B = _basis(self.knots, x)
        k = self.B.shape[1]
        BtB = self.B.T @ self.B
        # tiny ridge keeps A definite when a knot span holds no data
        ridge = 1e-10 * max(1.0, float(np.trace(BtB)) / k)
        P = penalty * _curvature_penalty(self.knots)
        P[np.diag_indices(k)] += ridge
        self.P = P
        self.factor = cho_factor(BtB + P)

    def smooth(self, r):
        if self.constant:
            return None, np.zeros_like(r)
        coef = cho_solve(self.factor, self.B.T @ r)
        return coef, self.B @ coef

    def roughness(self, coef):
        if self.constant:
            return 0.0
        return float(coef @ self.P @ coef)


def gam_fit(X, y, config: GamConfig = GamConfig()) -> GamModel:
    """Fit ``y ~ intercept + sum_j g_j(x_j)`` by cyclic backfitting.

    Each ``g_j`` is a cubic B-spline with a curvature penalty fitted
    to the partial residuals and centred to mean zero over the training
    data. Iteration stops when the largest change in fitted values drops
    below ``config.tol`` or after ``config.max_sweeps``; in the latter case
    ``converged`` is False.

    Each sweep is a block coordinate descent step on the penalized criterion
    recorded in ``objective_trace``, which therefore never increases. The
    plain residual sum of squares in ``rss_trace`` can rise slightly when the
    penalty trades fit for smoothness.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n, d = X.shape
    if n != y.shape[0]:
        raise InvalidInputError("covariate and response counts differ")
    knots = min(20, n // 4) if config.knots is None else int(config.knots)
    if n <= knots + 2:
        raise InvalidInputError(f"need n > knots + 2, got n={n}, knots={knots}")
    if config.penalty is None:
        lam = gam_select_penalty(X, y, config)
        config = GamConfig(knots, lam, config.max_sweeps, config.tol, config.seed)
    lam = float(config.penalty)
    if lam < 0:
        raise InvalidInputError("penalty must be nonnegative")

    intercept = float(y.mean())
    smoothers = [_Smoother(X[:, j], knots, lam) for j in range(d)]
    fitted = np.zeros((d, n))
    coefs = [None] * d
    offsets = [0.0] * d
    resid = y - intercept
    rss_trace = [float(resid @ resid)]
    objective_trace = [rss_trace[0]]
    converged = False
    sweeps = 0
    scale = max(1.0, float(np.max(np.abs(y - intercept))))
    for sweeps in range(1, config.max_sweeps + 1):
        change = 0.0
        for j, sm in enumerate(smoothers):
            partial = resid + fitted[j]
            coef, g = sm.smooth(partial)
            off = float(g.mean())
            g = g - off
            change = max(change, float(np.max(np.abs(g - fitted[j]))))
            resid = partial - g
            fitted[j] = g
            coefs[j], offsets[j] = coef, off
        rss_trace.append(float(resid @ resid))
        objective_trace.append(rss_trace[-1] + sum(
            sm.roughness(c) for sm, c in zip(smoothers, coefs) if c is not None))
        if change < config.tol * scale:
            converged = True
            break

    components = []
    for j, sm in enumerate(smoothers):
        if sm.constant:
            components.append(SplineComponent(np.zeros(8), np.zeros(4), 0.0, sm.lo, sm.hi))
        else:
            components.append(SplineComponent(sm.knots, coefs[j], offsets[j], sm.lo, sm.hi))
    return GamModel(intercept, tuple(components), lam, converged, sweeps,
                    tuple(rss_trace), tuple(objective_trace))


def gam_predict(model: GamModel, x) -> np.ndarray:
    """``intercept + sum_j g_j(x_j)`` for each row of ``x``."""
    Q = np.asarray(x, dtype=np.float64)
    if Q.ndim == 1:
        Q = Q[None, :]
    if Q.shape[1] != len(model.components):
        raise InvalidInputError("query dimension does not match the model")
    out = np.full(Q.shape[0], model.intercept)
    for j, g in enumerate(model.components):
        out += g(Q[:, j])
    return out


def gam_select_penalty(X, y, config: GamConfig = GamConfig(), grid=DEFAULT_GAM_PENALTIES,
                       folds: int = 5) -> float:
    """Penalty minimizing 5-fold out-of-fold squared error over ``grid``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n = X.shape[0]
    splits = kfold_indices(n, folds, config.seed)
    scores = []
    for lam in grid:
        sse = 0.0
        for train, test in splits:
            knots = min(20, train.size // 4) if config.knots is None else config.knots
            sub = GamConfig(knots, lam, config.max_sweeps, config.tol, config.seed)
            m = gam_fit(X[train], y[train], sub)
            r = gam_predict(m, X[test]) - y[test]
            sse += float(r @ r)
        scores.append(sse / n)
    return float(grid[int(np.argmin(scores))])
