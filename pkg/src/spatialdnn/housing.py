"""California housing pipeline: ingestion, transforms and k-fold comparison.

The six model covariates are median age, total rooms, total bedrooms,
population, households and median income. All but median age are log
transformed, then every covariate is min-max scaled on the training data.
Longitude and latitude are carried along for output only.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from spatialdnn.baselines import kfold_indices
from spatialdnn.errors import DegenerateCovariateError, InvalidInputError, SchemaError
from spatialdnn.methods import METHODS, DnnOptions, fit_method

log = logging.getLogger(__name__)

__all__ = [
    "FIELDS",
    "COVARIATES",
    "HousingRecord",
    "LoadResult",
    "Transform",
    "ProcessedDataset",
    "CvReport",
    "load_csv",
    "fit_transform",
    "apply_transform",
    "preprocess",
    "kfold_mspe",
    "write_outputs",
]

COVARIATES = ("median_age", "total_rooms", "total_bedrooms", "population", "households",
              "median_income")
LOGGED = (False, True, True, True, True, True)
FIELDS = ("longitude", "latitude") + COVARIATES + ("median_house_value",)
# header spellings used by the common public copy of the data
ALIASES = {"housing_median_age": "median_age"}


@dataclass(frozen=True)
class HousingRecord:
    longitude: float
    latitude: float
    median_age: float
    total_rooms: float
    total_bedrooms: float
    population: float
    households: float
    median_income: float
    median_house_value: float

    @property
    def covariates(self) -> tuple:
        return tuple(getattr(self, c) for c in COVARIATES)


@dataclass(frozen=True)
class LoadResult:
    records: list
    dropped: int


def load_csv(path) -> LoadResult:
    """Read the nine fields by header name; drop rows with a missing or bad value.

    Extra columns are ignored. ``housing_median_age`` is accepted for
    ``median_age``.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise InvalidInputError(f"{path} is empty")
        names = [ALIASES.get(h.strip(), h.strip()) for h in header]
        index = {}
        for f in FIELDS:
            if f not in names:
                raise SchemaError(f"missing column {f!r} in {path}")
            index[f] = names.index(f)
        records, dropped = [], 0
        for row in reader:
            if not row:
                continue
            try:
                vals = [float(row[index[f]]) for f in FIELDS]
            except (ValueError, IndexError):
                dropped += 1
                continue
            if not all(math.isfinite(v) for v in vals):
                dropped += 1
                continue
            records.append(HousingRecord(*vals))
    if dropped:
        log.info("dropped %d incomplete rows from %s", dropped, path)
    return LoadResult(records, dropped)


def _arrays(records):
    if len(records) == 0:
        raise InvalidInputError("no records")
    coords = np.array([(r.longitude, r.latitude) for r in records], dtype=np.float64)
    raw = np.array([r.covariates for r in records], dtype=np.float64)
    y = np.array([r.median_house_value for r in records], dtype=np.float64)
    return coords, raw, y


def _log_guarded(x):
    """Natural log, with ``log(1 + x)`` standing in at zero counts."""
    if np.any(x < 0):
        raise InvalidInputError("negative count cannot be log transformed")
    with np.errstate(divide="ignore"):
        return np.where(x > 0, np.log(np.where(x > 0, x, 1.0)), np.log1p(x))


@dataclass(frozen=True)
class Transform:
    """Per-covariate log flags and the min/max of the logged training values."""

    logged: tuple
    lo: np.ndarray
    hi: np.ndarray


def _logged(raw, flags):
    out = np.array(raw, dtype=np.float64, copy=True)
    for j, f in enumerate(flags):
        if f:
            out[:, j] = _log_guarded(out[:, j])
    return out


def fit_transform(raw) -> Transform:
    """Learn the min-max metadata from raw training covariates."""
    z = _logged(np.atleast_2d(raw), LOGGED)
    lo, hi = z.min(axis=0), z.max(axis=0)
    flat = np.flatnonzero(hi <= lo)
    if flat.size:
        raise DegenerateCovariateError(f"covariate {COVARIATES[flat[0]]!r} is constant")
    return Transform(LOGGED, lo, hi)


def apply_transform(t: Transform, raw) -> np.ndarray:
    """Map raw covariates with stored metadata; values are not clipped to [0, 1]."""
    z = _logged(np.atleast_2d(raw), t.logged)
    return (z - t.lo) / (t.hi - t.lo)


@dataclass(frozen=True)
class ProcessedDataset:
    coords: np.ndarray
    X: np.ndarray
    y: np.ndarray
    transform: Transform
    raw: np.ndarray = field(repr=False, default=None)

    @property
    def n(self) -> int:
        return self.y.size


def preprocess(records) -> ProcessedDataset:
    coords, raw, y = _arrays(records)
    t = fit_transform(raw)
    return ProcessedDataset(coords, apply_transform(t, raw), y, t, raw)


@dataclass
class CvReport:
    method: str
    fold_mspe: list
    failures: dict
    predictions: np.ndarray

    @property
    def failed(self) -> int:
        return len(self.failures)

    @property
    def mean(self) -> float:
        ok = [v for v in self.fold_mspe if math.isfinite(v)]
        return float(np.mean(ok)) if ok else float("nan")

    @property
    def sd(self) -> float:
        ok = [v for v in self.fold_mspe if math.isfinite(v)]
        return float(np.std(ok, ddof=1)) if len(ok) > 1 else float("nan")


def _run_fold(task):
    method, fold, raw, y, train, test, seed, dnn_options = task
    try:
        t = fit_transform(raw[train])
        predict = fit_method(method, apply_transform(t, raw[train]), y[train], seed=seed,
                             dnn_options=dnn_options)
        pred = predict(apply_transform(t, raw[test]))
        if not np.all(np.isfinite(pred)):
            raise ArithmeticError("non-finite predictions")
        return fold, pred, None
    except Exception as exc:  # recorded as a failed fold
        log.warning("%s fold %d failed: %s", method, fold, exc)
        return fold, None, f"{type(exc).__name__}: {exc}"


def kfold_mspe(dataset, method: str, k: int = 10, seed: int = 0, threads: int = 1,
               dnn_options: DnnOptions = DnnOptions()) -> CvReport:
    """Out-of-fold MSPE with transforms and tuning refit on every training fold.

    ``dataset`` is a list of records or a :class:`ProcessedDataset`; in both
    cases the raw covariates are used so that no held-out value leaks into
    the scaling.
    """
    if method not in METHODS:
        raise InvalidInputError(f"unknown method {method!r}")
    if isinstance(dataset, ProcessedDataset):
        raw, y = dataset.raw, dataset.y
    else:
        _, raw, y = _arrays(dataset)
    n = y.size
    if not 2 <= k <= n:
        raise InvalidInputError(f"need 2 <= k <= n, got k={k}, n={n}")
    splits = kfold_indices(n, k, seed)
    fold_seeds = np.random.SeedSequence([seed, METHODS.index(method)]).generate_state(k)
    tasks = [(method, f, raw, y, tr, te, int(fold_seeds[f]), dnn_options)
             for f, (tr, te) in enumerate(splits)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_fold, tasks))
    else:
        results = [_run_fold(t) for t in tasks]
    preds = np.full(n, np.nan)
    scores, failures = [], {}
    for (fold, pred, err), (_, te) in zip(results, splits):
        if err is not None:
            failures[fold] = err
            scores.append(float("nan"))
            continue
        preds[te] = pred
        r = pred - y[te]
        scores.append(float(r @ r) / te.size)
    return CvReport(method, scores, failures, preds)


def _atomic_csv(path, header, rows):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    tmp.replace(path)


def write_outputs(reports, coords, y, out_dir):
    """``folds.csv``, ``summary.csv`` and ``predictions.csv`` for each method."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _atomic_csv(out / "folds.csv", ("fold", "method", "mspe", "status"),
                ([f, r.method, repr(v), r.failures.get(f, "ok")]
                 for r in reports for f, v in enumerate(r.fold_mspe)))
    _atomic_csv(out / "summary.csv", ("method", "folds", "failed", "mspe_mean", "mspe_sd"),
                ([r.method, len(r.fold_mspe), r.failed, repr(r.mean), repr(r.sd)] for r in reports))
    _atomic_csv(out / "predictions.csv", ("method", "lon", "lat", "observed", "predicted"),
                ([r.method, repr(float(c[0])), repr(float(c[1])), repr(float(o)), repr(float(p))]
                 for r in reports for c, o, p in zip(coords, y, r.predictions)))
