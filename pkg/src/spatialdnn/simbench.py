"""Simulation designs, error metrics, pointwise bands and the replication harness.

Design 1 lives on the line segment [0, D] with five deterministic covariates
of location and an additive mean. Design 2 lives on the square [0, D]^2 with
correlated Gaussian covariates and a nonlinear mean with interactions. In
both, the response is mean + exponential-covariance Gaussian field + white
noise, and a held-out set of ``n // 10`` uniformly random new locations is
generated jointly with the training field.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from spatialdnn import grf
from spatialdnn.errors import InvalidInputError, UnsupportedReplicateCountError
from spatialdnn.methods import METHODS, DnnOptions, MinMaxScaler, fit_method

log = logging.getLogger(__name__)

__all__ = [
    "DesignSpec",
    "SpatialDataset",
    "SummaryTable",
    "IntervalBand",
    "design1_covariates",
    "design1_mean",
    "design2_mean",
    "gen_design1",
    "gen_design2",
    "generate",
    "msee",
    "mspe",
    "sim_interval",
    "replicate_seed",
    "run_benchmark",
    "reference_designs",
]

DESIGN2_CORR = 0.5
DESIGN2_GUARD = 0.1


@dataclass(frozen=True)
class DesignSpec:
    """One simulation configuration.

    ``field_variance=0`` or ``noise_sd=0`` switch the corresponding error
    process off. ``beta_mode`` controls whether Design 2 coefficients are
    redrawn per replicate (``"per_replicate"``) or drawn once from
    ``beta_seed`` (``"fixed"``).
    """

    design: int = 1
    domain_mode: str = "fixed"
    n: int = 100
    D: float = 1.0
    rho: float = 0.5
    seed: int = 0
    noise_sd: float = 1.0
    field_variance: float = 1.0
    beta_mode: str = "per_replicate"
    beta_seed: int = 0

    def __post_init__(self):
        if self.design not in (1, 2):
            raise InvalidInputError("design must be 1 or 2")
        if self.domain_mode not in ("fixed", "expanding"):
            raise InvalidInputError("domain_mode must be 'fixed' or 'expanding'")
        if self.domain_mode == "fixed" and self.D != 1.0:
            raise InvalidInputError("fixed domain requires D = 1")
        if not self.D > 0 or not self.rho > 0:
            raise InvalidInputError("D and rho must be positive")
        if self.noise_sd < 0 or self.field_variance < 0:
            raise InvalidInputError("noise_sd and field_variance must be nonnegative")
        if self.beta_mode not in ("per_replicate", "fixed"):
            raise InvalidInputError("beta_mode must be 'per_replicate' or 'fixed'")

    @property
    def label(self) -> str:
        return f"design{self.design}-{self.domain_mode}-n{self.n}-D{self.D:g}-rho{self.rho:g}"


@dataclass(frozen=True)
class SpatialDataset:
    locations: grf.LocationSet
    X: np.ndarray
    y: np.ndarray
    f0: np.ndarray | None = None
    test: "SpatialDataset | None" = None
    beta: np.ndarray | None = None
    regenerations: int = 0

    def __post_init__(self):
        n = self.locations.n
        if self.X.shape[0] != n or self.y.shape[0] != n:
            raise InvalidInputError("covariates, responses and locations differ in length")
        if self.f0 is not None and self.f0.shape[0] != n:
            raise InvalidInputError("truth vector has the wrong length")

    @property
    def n(self) -> int:
        return self.locations.n


@dataclass(frozen=True)
class IntervalBand:
    lower: np.ndarray
    upper: np.ndarray


@dataclass
class SummaryTable:
    """Per (design, method) mean and sd of MSEE and MSPE across replicates."""

    rows: list = field(default_factory=list)
    replicates: list = field(default_factory=list)
    bands: list = field(default_factory=list)

    COLUMNS = ("design", "domain", "n", "D", "rho", "method", "replicates", "failed",
               "msee_mean", "msee_sd", "mspe_mean", "mspe_sd")

    def row(self, method, design=None):
        for r in self.rows:
            if r["method"] == method and (design is None or r["design_label"] == design):
                return r
        raise KeyError((method, design))


# --------------------------------------------------------------------------
# generators
# --------------------------------------------------------------------------


def design1_covariates(s, D: float = 1.0) -> np.ndarray:
    u = np.asarray(s, dtype=np.float64).reshape(-1) / D
    return np.column_stack([u, np.sin(10 * u), u**2, np.exp(3 * u), 1.0 / (u + 1.0)])


def design1_mean(X) -> np.ndarray:
    return np.asarray(X).sum(axis=1)


def design2_mean(X, beta) -> np.ndarray:
    """Nonlinear Design-2 mean with ``sign(0) = 1`` in the reciprocal term."""
    X = np.asarray(X, dtype=np.float64)
    b = np.asarray(beta, dtype=np.float64)
    x1, x2, x3, x4, x5 = X.T
    sgn = np.where(x4 >= 0, 1.0, -1.0)
    return (b[0] * x1 * x2 + b[1] * x2**2 * np.sin(x3) + b[2] * np.exp(x4) * np.maximum(x5, 0.0)
            + b[3] / (sgn * (10.0 + x5)) + b[4] * np.tanh(x1))


def _streams(seed, k):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(k)]


def _errors(spec, all_locs, rng_field, rng_noise):
    total = all_locs.shape[0]
    e = np.zeros(total)
    if spec.field_variance > 0:
        model = grf.CovarianceModel("exponential", spec.rho, variance=spec.field_variance)
        factor = grf.chol(grf.build_cov(model, all_locs))
        e += grf.sample_field(factor, rng_field).values
    if spec.noise_sd > 0:
        e += spec.noise_sd * rng_noise.standard_normal(total)
    return e


def _test_size(n):
    m = n // 10
    if m < 1:
        raise InvalidInputError("n must be at least 10 so that the test set is nonempty")
    return m


def gen_design1(spec: DesignSpec) -> SpatialDataset:
    if spec.design != 1:
        raise InvalidInputError("gen_design1 needs design = 1")
    n, D = spec.n, spec.D
    m = _test_size(n)
    rng_test, rng_field, rng_noise = _streams(spec.seed, 3)
    s_train = np.linspace(0.0, D, n)
    s_test = rng_test.uniform(0.0, D, m)
    s_all = np.concatenate([s_train, s_test])[:, None]
    X_all = design1_covariates(s_all, D)
    f_all = design1_mean(X_all)
    y_all = f_all + _errors(spec, s_all, rng_field, rng_noise)
    test = SpatialDataset(grf.LocationSet(s_all[n:], D), X_all[n:], y_all[n:], f_all[n:])
    return SpatialDataset(grf.LocationSet(s_all[:n], D), X_all[:n], y_all[:n], f_all[:n], test)


def _draw_design2_covariates(rng, count):
    cov = np.full((5, 5), DESIGN2_CORR) + (1 - DESIGN2_CORR) * np.eye(5)
    return rng.multivariate_normal(np.zeros(5), cov, size=count, method="cholesky")


def gen_design2(spec: DesignSpec) -> SpatialDataset:
    if spec.design != 2:
        raise InvalidInputError("gen_design2 needs design = 2")
    n, D = spec.n, spec.D
    m = _test_size(n)
    rng_test, rng_field, rng_noise, rng_cov, rng_beta = _streams(spec.seed, 5)
    grid = grf.equispaced_grid(n, D, dimension=2)
    s_test = rng_test.uniform(0.0, D, (m, 2))
    if spec.beta_mode == "fixed":
        rng_beta = np.random.default_rng(spec.beta_seed)
    beta = rng_beta.uniform(1.0, 2.0, 5)

    raw = _draw_design2_covariates(rng_cov, n)
    regen = 0
    while True:
        mean, sd = raw.mean(axis=0), raw.std(axis=0)
        X = (raw - mean) / sd
        bad = np.abs(10.0 + X[:, 4]) < DESIGN2_GUARD
        if not np.any(bad):
            break
        regen += int(bad.sum())
        raw[bad] = _draw_design2_covariates(rng_cov, int(bad.sum()))
    raw_test = _draw_design2_covariates(rng_cov, m)
    while True:
        X_test = (raw_test - mean) / sd
        bad = np.abs(10.0 + X_test[:, 4]) < DESIGN2_GUARD
        if not np.any(bad):
            break
        regen += int(bad.sum())
        raw_test[bad] = _draw_design2_covariates(rng_cov, int(bad.sum()))

    s_all = np.vstack([grid.coords, s_test])
    f_all = design2_mean(np.vstack([X, X_test]), beta)
    y_all = f_all + _errors(spec, s_all, rng_field, rng_noise)
    test = SpatialDataset(grf.LocationSet(s_test, D), X_test, y_all[n:], f_all[n:])
    return SpatialDataset(grid, X, y_all[:n], f_all[:n], test, beta, regen)


def generate(spec: DesignSpec) -> SpatialDataset:
    return gen_design1(spec) if spec.design == 1 else gen_design2(spec)


# --------------------------------------------------------------------------
# metrics and bands
# --------------------------------------------------------------------------


def _paired(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise InvalidInputError(f"length mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        raise InvalidInputError("empty input")
    return a, b


def msee(pred, truth) -> float:
    """Mean squared estimation error against the true mean."""
    p, t = _paired(pred, truth)
    return float(np.mean((p - t) ** 2))


def mspe(pred, observed) -> float:
    """Mean squared prediction error against observed responses."""
    p, o = _paired(pred, observed)
    return float(np.mean((p - o) ** 2))


def sim_interval(replicate_preds) -> IntervalBand:
    """95% pointwise band from exactly 100 replicate estimates per point.

    Lower end is the midpoint of the 2nd and 3rd smallest values, upper end
    the midpoint of the 97th and 98th.
    """
    P = np.asarray(replicate_preds, dtype=np.float64)
    if P.ndim == 1:
        P = P[:, None]
    if P.shape[0] != 100:
        raise UnsupportedReplicateCountError(
            f"the pointwise band is defined for 100 replicates, got {P.shape[0]}"
        )
    S = np.sort(P, axis=0)
    return IntervalBand(0.5 * (S[1] + S[2]), 0.5 * (S[96] + S[97]))


# --------------------------------------------------------------------------
# harness
# --------------------------------------------------------------------------


def reference_designs(design: int, domain_mode: str, rho: float = 0.5):
    """The (n, D) pairs of the published tables for one design and domain."""
    ns = (100, 200, 300) if design == 1 else (100, 400, 900)
    Ds = (1.0, 1.0, 1.0) if domain_mode == "fixed" else (10.0, 20.0, 30.0)
    return [DesignSpec(design, domain_mode, n, D, rho) for n, D in zip(ns, Ds)]


def replicate_seed(seed: int, spec: DesignSpec, replicate: int) -> int:
    """Deterministic per-replicate seed from the run seed, design and replicate index."""
    key = [int(seed), spec.design, 0 if spec.domain_mode == "fixed" else 1, spec.n,
           int(round(spec.D * 1000)), int(round(spec.rho * 1e6)), int(replicate)]
    return int(np.random.SeedSequence(key).generate_state(1, dtype=np.uint64)[0] >> 1)


def _run_replicate(task):
    spec, methods, replicate, rseed, dnn_options, band_points = task
    data = generate(replace(spec, seed=rseed))
    scaler = MinMaxScaler().fit(data.X)
    Xtr, Xte = scaler.transform(data.X), scaler.transform(data.test.X)
    out = []
    method_seeds = np.random.SeedSequence([rseed, 7]).generate_state(len(METHODS))
    for method in methods:
        mseed = int(method_seeds[METHODS.index(method)])
        try:
            predict = fit_method(method, Xtr, data.y, seed=mseed, dnn_options=dnn_options)
            pred = predict(Xte)
            if not np.all(np.isfinite(pred)):
                raise ArithmeticError("non-finite predictions")
            band = predict(Xtr) if band_points else None
            out.append(dict(method=method, replicate=replicate,
                            msee=msee(pred, data.test.f0), mspe=mspe(pred, data.test.y),
                            status="ok", band=band, truth=data.f0,
                            s=data.locations.coords[:, 0]))
        except Exception as exc:  # recorded as a failed replicate
            log.warning("%s replicate %d %s failed: %s", spec.label, replicate, method, exc)
            out.append(dict(method=method, replicate=replicate, msee=float("nan"),
                            mspe=float("nan"), status=f"failed: {type(exc).__name__}: {exc}",
                            band=None, truth=None, s=None))
    return spec, out


def _fmt(x):
    return repr(float(x))


def _atomic_csv(path, header, rows):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    tmp.replace(path)


def run_benchmark(designs, methods=METHODS, replicates: int = 20, seed: int = 0,
                  out_dir=None, threads: int = 1, dnn_options: DnnOptions = DnnOptions(),
                  same_seed: bool = False) -> SummaryTable:
    """Replicate every design for every method and summarize MSEE/MSPE.

    Within a replicate all methods see the same data. With ``same_seed``
    every replicate reuses replicate 0's seed (a degenerate check).
    Per-replicate results, the summary and, for 100 replicates of Design 1,
    pointwise bands at the training locations are written to ``out_dir``.
    """
    if replicates < 2:
        raise InvalidInputError("need at least 2 replicates")
    methods = tuple(methods)
    for m in methods:
        if m not in METHODS:
            raise InvalidInputError(f"unknown method {m!r}")
    designs = list(designs)
    tasks = []
    for spec in designs:
        band_points = replicates == 100 and spec.design == 1
        for r in range(replicates):
            rseed = replicate_seed(seed, spec, 0 if same_seed else r)
            tasks.append((spec, methods, r, rseed, dnn_options, band_points))
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_replicate, tasks))
    else:
        results = [_run_replicate(t) for t in tasks]

    table = SummaryTable()
    by_key = {}
    for spec, outs in results:
        for o in outs:
            by_key.setdefault((spec, o["method"]), []).append(o)
            table.replicates.append(dict(
                design=spec.design, domain=spec.domain_mode, n=spec.n, D=spec.D,
                rho=spec.rho, replicate=o["replicate"], method=o["method"],
                msee=o["msee"], mspe=o["mspe"], status=o["status"]))
    for spec in designs:
        for method in methods:
            outs = by_key[(spec, method)]
            ok = [o for o in outs if o["status"] == "ok"]
            me = np.array([o["msee"] for o in ok])
            mp = np.array([o["mspe"] for o in ok])
            sd = (lambda a: float(a.std(ddof=1)) if a.size > 1 else float("nan"))
            table.rows.append(dict(
                design=spec.design, domain=spec.domain_mode, n=spec.n, D=spec.D, rho=spec.rho,
                method=method, replicates=len(ok), failed=len(outs) - len(ok),
                msee_mean=float(me.mean()) if me.size else float("nan"), msee_sd=sd(me),
                mspe_mean=float(mp.mean()) if mp.size else float("nan"), mspe_sd=sd(mp),
                design_label=spec.label))
            if replicates == 100 and spec.design == 1 and len(ok) == 100:
                values = np.vstack([o["band"] for o in ok])
                table.bands.append(dict(spec=spec, method=method, s=ok[0]["s"],
                                        truth=ok[0]["truth"], band=sim_interval(values),
                                        values=values))

    if out_dir is not None:
        write_outputs(table, out_dir)
    return table


def write_outputs(table: SummaryTable, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _atomic_csv(out / "replicates.csv",
                ("design", "domain", "n", "D", "rho", "replicate", "method", "msee", "mspe", "status"),
                ([r["design"], r["domain"], r["n"], _fmt(r["D"]), _fmt(r["rho"]), r["replicate"],
                  r["method"], _fmt(r["msee"]), _fmt(r["mspe"]), r["status"]]
                 for r in table.replicates))
    _atomic_csv(out / "summary.csv", SummaryTable.COLUMNS,
                ([r["design"], r["domain"], r["n"], _fmt(r["D"]), _fmt(r["rho"]), r["method"],
                  r["replicates"], r["failed"], _fmt(r["msee_mean"]), _fmt(r["msee_sd"]),
                  _fmt(r["mspe_mean"]), _fmt(r["mspe_sd"])] for r in table.rows))
    if table.bands:
        rows = []
        for b in table.bands:
            spec = b["spec"]
            for i in range(b["s"].size):
                rows.append([spec.design, spec.domain_mode, spec.n, _fmt(spec.D), _fmt(spec.rho),
                             b["method"], i, _fmt(b["s"][i]), _fmt(b["truth"][i]),
                             _fmt(b["band"].lower[i]), _fmt(b["band"].upper[i])])
        _atomic_csv(out / "bands.csv",
                    ("design", "domain", "n", "D", "rho", "method", "i", "s", "truth",
                     "lower", "upper"), rows)


def default_threads() -> int:
    env = os.environ.get("SPATIALDNN_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1
