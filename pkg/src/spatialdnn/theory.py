"""Closed-form calculators for the smoothness bookkeeping and risk bounds.

Every bound here is an order-of-magnitude statement with its universal
constant set to 1: the numbers are a scale, not a value. Large quantities
are assembled in log space.

An infinitely smooth layer is marked with :data:`INFINITE` (``math.inf``);
it acts as 1 inside ``min(beta, 1)`` products and as +inf in ratios.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from spatialdnn.errors import DomainError, InvalidInputError, PreconditionError

__all__ = [
    "INFINITE",
    "CsSpec",
    "IntrinsicSummary",
    "BoundInputs",
    "ApproxSizing",
    "ApproxBound",
    "intrinsic",
    "eval_cs",
    "covering_bound",
    "zeta_bound",
    "varsigma_terms",
    "varsigma_rate",
    "approx_bound",
    "c_tilde",
    "example1_spec",
    "rate_schedule",
    "rate_sweep",
]

INFINITE = math.inf
DOMAIN_TOL = 1e-9


def _beta(x):
    if isinstance(x, str) and x.lower() in ("inf", "infinite", "infinity"):
        return INFINITE
    return float(x)


def _min1(b):
    return 1.0 if b >= 1.0 else b


@dataclass(frozen=True)
class CsSpec:
    """Parameters of a composition ``g_{L*} o ... o g_0`` of Hölder functions.

    ``r`` has length ``depth + 2`` (ending in 1), ``r_tilde``, ``beta`` and
    ``C`` have length ``depth + 1`` and the domain bounds ``a``, ``b`` have
    length ``depth + 2``. Unspecified domains default to ``[0, 1]`` and
    unspecified constants to 2. ``layers`` optionally holds callables
    ``g_i`` mapping a length-``r_i`` array to a length-``r_{i+1}`` array.
    """

    depth: int
    r: tuple
    r_tilde: tuple
    beta: tuple
    a: tuple | None = None
    b: tuple | None = None
    C: tuple | None = None
    layers: tuple | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        L = int(self.depth)
        if L < 0:
            raise InvalidInputError("depth must be nonnegative")
        r = tuple(int(x) for x in self.r)
        rt = tuple(int(x) for x in self.r_tilde)
        beta = tuple(_beta(x) for x in self.beta)
        a = tuple(float(x) for x in (self.a if self.a is not None else [0.0] * (L + 2)))
        b = tuple(float(x) for x in (self.b if self.b is not None else [1.0] * (L + 2)))
        C = tuple(float(x) for x in (self.C if self.C is not None else [2.0] * (L + 1)))
        if len(r) != L + 2 or r[-1] != 1:
            raise InvalidInputError("r must have depth + 2 entries ending in 1")
        if len(rt) != L + 1 or len(beta) != L + 1 or len(C) != L + 1:
            raise InvalidInputError("r_tilde, beta and C need depth + 1 entries")
        if len(a) != L + 2 or len(b) != L + 2:
            raise InvalidInputError("a and b need depth + 2 entries")
        if any(x <= 0 for x in r) or any(x <= 0 for x in rt):
            raise InvalidInputError("r and r_tilde must be positive")
        if any(t > s for t, s in zip(rt, r)):
            raise InvalidInputError("r_tilde_i must not exceed r_i")
        if any(not bb > 0 for bb in beta):
            raise InvalidInputError("beta must be positive")
        if any(not c > 1 for c in C):
            raise InvalidInputError("C_i must exceed 1")
        if any(not lo < hi for lo, hi in zip(a, b)):
            raise InvalidInputError("need a_i < b_i")
        if any(abs(a[i]) > C[i] or abs(b[i]) > C[i] for i in range(L + 1)):
            raise InvalidInputError("need |a_i|, |b_i| <= C_i")
        if self.layers is not None and len(self.layers) != L + 1:
            raise InvalidInputError("need one layer function per layer")
        for name, val in (("r", r), ("r_tilde", rt), ("beta", beta), ("a", a), ("b", b), ("C", C)):
            object.__setattr__(self, name, val)


@dataclass(frozen=True)
class IntrinsicSummary:
    beta_star_per_layer: tuple
    argmin: int
    beta_star: float
    r_star: int
    degenerate: bool = False
    # prod_{l >= 1} min(beta_l, 1), the exponent factor of the depth term
    smoothness_product: float = 1.0


@dataclass(frozen=True)
class BoundInputs:
    """Inputs shared by the bound calculators. ``tr_gamma``/``tr_gamma_sq``
    are ``tr(G)`` and ``tr(G^2)`` of the field covariance matrix."""

    n: int
    tau: float = 1.0
    L: int = 1
    N: float = 1.0
    m: int = 1
    d: int = 1
    delta: float = 1.0
    eps: float = 1.0
    sigma: float = 1.0
    tr_gamma: float | None = None
    tr_gamma_sq: float | None = None

    def __post_init__(self):
        if not (0 < self.delta <= 1 and 0 < self.eps <= 1):
            raise InvalidInputError("delta and eps must lie in (0, 1]")
        if min(self.n, self.tau, self.L, self.N, self.m, self.d) <= 0:
            raise InvalidInputError("counts must be positive")
        if self.sigma < 0:
            raise InvalidInputError("sigma must be nonnegative")
        if self.tr_gamma is None:
            object.__setattr__(self, "tr_gamma", float(self.n))
        if self.tr_gamma_sq is None:
            object.__setattr__(self, "tr_gamma_sq", float(self.n))


def intrinsic(spec: CsSpec) -> IntrinsicSummary:
    """Intrinsic smoothness and dimension.

    ``beta*_i = beta_i * prod_{s > i} min(beta_s, 1)`` and the minimizing layer
    of ``beta*_i / r_tilde_i`` (earliest on ties) determines ``beta*`` and
    ``r*``. If every layer is infinitely smooth the summary is flagged
    degenerate with ``argmin = 0``.
    """
    L = spec.depth
    stars = []
    for i in range(L + 1):
        tail = 1.0
        for s in range(i + 1, L + 1):
            tail *= _min1(spec.beta[s])
        stars.append(spec.beta[i] * tail)
    ratios = [b / r for b, r in zip(stars, spec.r_tilde)]
    prod = 1.0
    for s in range(1, L + 1):
        prod *= _min1(spec.beta[s])
    if all(math.isinf(x) for x in ratios):
        return IntrinsicSummary(tuple(stars), 0, INFINITE, spec.r_tilde[0], True, prod)
    best = min(range(L + 1), key=lambda i: (ratios[i], i))
    return IntrinsicSummary(tuple(stars), best, stars[best], spec.r_tilde[best], False, prod)


def eval_cs(spec: CsSpec, z) -> np.ndarray | float:
    """Evaluate the composition layer by layer, checking declared domains.

    Raises
    ------
    DomainError
        When the output of layer ``i`` leaves ``[a_{i+1}, b_{i+1}]``.
    """
    if spec.layers is None:
        raise InvalidInputError("spec has no layer functions")
    h = np.atleast_1d(np.asarray(z, dtype=np.float64))
    if h.shape != (spec.r[0],):
        raise InvalidInputError(f"input must have {spec.r[0]} entries")
    if np.any(h < spec.a[0] - DOMAIN_TOL) or np.any(h > spec.b[0] + DOMAIN_TOL):
        raise InvalidInputError("input outside [a_0, b_0]")
    for i, g in enumerate(spec.layers):
        h = np.atleast_1d(np.asarray(g(h), dtype=np.float64))
        if h.shape != (spec.r[i + 1],):
            raise InvalidInputError(f"layer {i} returned {h.shape}, expected ({spec.r[i + 1]},)")
        lo, hi = spec.a[i + 1], spec.b[i + 1]
        if np.any(h < lo - DOMAIN_TOL) or np.any(h > hi + DOMAIN_TOL) or not np.all(np.isfinite(h)):
            raise DomainError(i, f"layer {i} output leaves [{lo:g}, {hi:g}]")
    return float(h[0]) if h.size == 1 else h


def example1_spec(d: int, beta_h: float, beta_phi: float, C=None, a=None, b=None, layers=None) -> CsSpec:
    """Additive-model composition ``phi(sum_i h_i(z_i))`` as a three-layer spec."""
    return CsSpec(2, (d, d, 1, 1), (d, d, 1), (beta_h, INFINITE, beta_phi),
                  a=a, b=b, C=C, layers=layers)


def covering_bound(L: int, tau: float, d: int, delta: float) -> float:
    """Upper bound on the log sup-norm covering number of the sparse network class.

    ``(1 + tau) * log(2^(5 + 2L) * (L + 1) * tau^(2L) * d^2 / delta)``.
    """
    if tau < 1 or not 0 < delta <= 1 or L < 0 or d < 1:
        raise InvalidInputError("need tau >= 1, 0 < delta <= 1, L >= 0, d >= 1")
    log_inner = ((5 + 2 * L) * math.log(2.0) - math.log(delta) + math.log(L + 1)
                 + 2 * L * math.log(tau) + 2 * math.log(d))
    return (1.0 + tau) * log_inner


def zeta_bound(inputs: BoundInputs) -> float:
    """Stochastic-error term of the oracle inequality (scale, not value)."""
    n = inputs.n
    t1 = n ** -1 * inputs.tr_gamma
    t2 = n ** -1 * inputs.tr_gamma_sq
    first = inputs.delta * (t1 + 2.0 * math.sqrt(t2) + 3.0 * inputs.sigma)
    second = (inputs.tau / n) * (math.log(inputs.L / inputs.delta) + inputs.L * math.log(inputs.tau)) \
        * (t2 + inputs.sigma ** 2 + 1.0)
    return (first + second) / inputs.eps


def varsigma_terms(n, L, N, tr_gamma_sq, beta_star, r_star, smoothness_product=1.0,
                   delta_proxy=0.0):
    """The four summands of the convergence rate.

    Returns ``(depth_term, smoothness_term, stochastic_term, delta_proxy)``.
    """
    if min(n, L, N) <= 0:
        raise InvalidInputError("n, L and N must be positive")
    log_depth = 2.0 * smoothness_product * (math.log(N) - L * math.log(2.0))
    t1 = math.exp(log_depth)
    t2 = 0.0 if math.isinf(beta_star) else N ** (-2.0 * beta_star / r_star)
    t3 = (tr_gamma_sq + n) * (L * N * math.log(L * n * n) + L * L * N * math.log(L * N)) / (n * n)
    return t1, t2, t3, float(delta_proxy)


def varsigma_rate(inputs: BoundInputs, summary: IntrinsicSummary, delta_proxy: float = 0.0) -> float:
    """Convergence-rate scale with the optimization gap replaced by ``delta_proxy``."""
    return sum(varsigma_terms(inputs.n, inputs.L, inputs.N, inputs.tr_gamma_sq,
                              summary.beta_star, summary.r_star,
                              summary.smoothness_product, delta_proxy))


def rate_schedule(n: int, beta_star: float, r_star: int):
    """``L = ceil(log n)`` and ``N = ceil(n^(r*/(2 beta* + r*)))``."""
    L = max(1, math.ceil(math.log(n)))
    N = max(1, math.ceil(n ** (r_star / (2.0 * beta_star + r_star))))
    return L, N


def rate_sweep(ns, summary: IntrinsicSummary, tr_gamma_sq=None, delta_proxy: float = 0.0):
    """Rows ``(n, L, N, term1, term2, term3, total)`` along :func:`rate_schedule`.

    ``tr_gamma_sq`` maps n to ``tr(G^2)``; the default ``n`` corresponds to
    independent errors.
    """
    rows = []
    for n in ns:
        n = int(n)
        L, N = rate_schedule(n, summary.beta_star, summary.r_star)
        tg = float(n) if tr_gamma_sq is None else float(tr_gamma_sq(n))
        t1, t2, t3, t4 = varsigma_terms(n, L, N, tg, summary.beta_star, summary.r_star,
                                        summary.smoothness_product, delta_proxy)
        rows.append((n, L, N, t1, t2, t3, t1 + t2 + t3 + t4))
    return rows


@dataclass(frozen=True)
class ApproxSizing:
    L: int
    width: float
    tau_cap: float
    eta: int
    C_tilde: tuple
    layer_depths: tuple
    layer_tau: tuple


@dataclass(frozen=True)
class ApproxBound:
    bound: float
    log_bound: float
    limit_bound: float
    sizing: ApproxSizing


def c_tilde(spec: CsSpec) -> tuple:
    """Hölder constants of the layers after rescaling every domain to [0, 1]."""
    L = spec.depth
    ratio = [spec.C[k] * (spec.b[k] - spec.a[k]) / (spec.b[k + 1] - spec.a[k + 1])
             for k in range(L + 1)]
    out = [sum(ratio[:i + 1]) for i in range(L)]
    out.append(sum(ratio) + spec.b[L] - spec.a[L])
    return tuple(out)


def _logaddexp_all(xs):
    m = max(xs)
    if math.isinf(m):
        return m
    return m + math.log(sum(math.exp(x - m) for x in xs))


def approx_bound(spec: CsSpec, N: float, m: int) -> ApproxBound:
    """Sup-norm approximation bound by a sparse ReLU network and its size.

    Raises
    ------
    PreconditionError
        If ``N`` is below ``max_i (beta_i + 1)^{r~_i} v (C~_i + 1) e^{r~_i}`` or a
        layer is infinitely smooth.
    """
    L = spec.depth
    if any(math.isinf(b) for b in spec.beta):
        raise PreconditionError("approximation bound needs finite smoothness in every layer")
    if m < 1:
        raise InvalidInputError("m must be a positive integer")
    ct = c_tilde(spec)
    rt, beta, r, C = spec.r_tilde, spec.beta, spec.r, spec.C
    need = [max((beta[i] + 1) ** rt[i], (ct[i] + 1) * math.exp(rt[i])) for i in range(L + 1)]
    failing = [i for i in range(L + 1) if N < need[i]]
    if failing:
        detail = ", ".join(f"layer {i} needs N >= {need[i]:.6g}" for i in failing)
        raise PreconditionError(f"N={N:g} too small: {detail}")

    eta = max(r[i + 1] * (rt[i] + math.ceil(beta[i])) for i in range(L + 1))
    depths = tuple(8 + (m + 5) * (1 + math.ceil(math.log2(max(rt[i], beta[i])))) for i in range(L + 1))
    taus = tuple(141.0 * (rt[i] + beta[i] + 1) ** (3 + rt[i]) * N * (m + 6) for i in range(L + 1))
    sizing = ApproxSizing(
        L=3 * L + sum(depths),
        width=6.0 * eta * N,
        tau_cap=sum(r[i + 1] * (taus[i] + 4) for i in range(L + 1)),
        eta=eta,
        C_tilde=ct,
        layer_depths=depths,
        layer_tau=taus,
    )

    log_pre = math.log(C[L]) + sum(beta[l + 1] * math.log(2 * C[l]) for l in range(L))
    logN = math.log(N)
    full, limit = [], []
    for i in range(L + 1):
        expo = 1.0
        for l in range(i + 1, L + 1):
            expo *= _min1(beta[l])
        log_a = (math.log(2 * ct[i] + 1) + math.log(1 + rt[i] ** 2 + beta[i] ** 2)
                 + rt[i] * math.log(6.0) + logN - m * math.log(2.0))
        log_b = math.log(ct[i]) + beta[i] * math.log(3.0) - (beta[i] / rt[i]) * logN
        full.append(expo * _logaddexp_all([log_a, log_b]))
        limit.append(expo * log_b)
    log_bound = log_pre + _logaddexp_all(full)
    log_limit = log_pre + _logaddexp_all(limit)
    return ApproxBound(_safe_exp(log_bound), log_bound, _safe_exp(log_limit), sizing)


def _safe_exp(x):
    return math.exp(x) if x < 709.0 else math.inf


def min_width_for_rate(spec: CsSpec) -> float:
    """Smallest hidden width allowed by the architecture condition of the rate result."""
    ct = c_tilde(spec)
    finite = [i for i in range(spec.depth + 1) if not math.isinf(spec.beta[i])]
    eta = max(spec.r[i + 1] * (spec.r_tilde[i] + math.ceil(spec.beta[i])) for i in finite)
    need = max(max((spec.beta[i] + 1) ** spec.r_tilde[i], (ct[i] + 1) * math.exp(spec.r_tilde[i]))
               for i in finite)
    return 6.0 * eta * need
