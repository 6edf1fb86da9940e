"""Sparse ReLU feedforward networks trained from scratch with numpy.

The network has the form

    f(x) = W_L s_{v_L}( ... W_1 s_{v_1}(W_0 x) )

where ``s_v(z) = max(0, z - v)`` is the shifted ReLU applied componentwise.
There is no shift on the input layer and no bias on the output. Training
minimizes the mean squared error with mini-batch Adam; after every Adam
update the weight matrices (not the shifts) are soft-thresholded, which is
the proximal step of an L1 penalty.

Parameters live in one flat float64 buffer during training so that the Adam
moments and the proximal step are single vectorized operations.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from spatialdnn.errors import DivergenceError, InvalidInputError

__all__ = [
    "NetworkShape",
    "NetworkParams",
    "TrainConfig",
    "AdamState",
    "FitResult",
    "ClassReport",
    "init_params",
    "forward",
    "predict",
    "loss_and_grads",
    "adam_step",
    "prox_l1",
    "fit",
    "sparsity",
    "class_check",
    "params_to_json",
    "params_from_json",
    "save_params",
    "load_params",
]

FORMAT_VERSION = "spatialdnn-network/1"


@dataclass(frozen=True)
class NetworkShape:
    """Layer widths ``(p_0, ..., p_{L+1})`` with ``p_{L+1} = 1``."""

    widths: tuple

    def __post_init__(self):
        w = tuple(int(x) for x in self.widths)
        if len(w) < 2:
            raise InvalidInputError("a network needs at least input and output widths")
        if any(x <= 0 for x in w):
            raise InvalidInputError("all widths must be positive")
        if w[-1] != 1:
            raise InvalidInputError("output width must be 1")
        object.__setattr__(self, "widths", w)

    @classmethod
    def uniform(cls, d: int, depth: int, width: int) -> "NetworkShape":
        """``depth`` hidden layers of equal ``width``."""
        return cls((d,) + (width,) * depth + (1,))

    @property
    def depth(self) -> int:
        return len(self.widths) - 2

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def weight_shapes(self):
        p = self.widths
        return [(p[l + 1], p[l]) for l in range(self.depth + 1)]

    @property
    def shift_sizes(self):
        return list(self.widths[1:-1])

    @property
    def n_weights(self) -> int:
        return sum(a * b for a, b in self.weight_shapes)

    @property
    def n_params(self) -> int:
        return self.n_weights + sum(self.shift_sizes)

    def views(self, buf: np.ndarray):
        """Split a flat buffer into weight and shift views (no copies)."""
        weights, shifts = [], []
        pos = 0
        for r, c in self.weight_shapes:
            weights.append(buf[pos:pos + r * c].reshape(r, c))
            pos += r * c
        for k in self.shift_sizes:
            shifts.append(buf[pos:pos + k])
            pos += k
        return weights, shifts


@dataclass(frozen=True)
class NetworkParams:
    """Weights ``W_0..W_L`` and shifts ``v_1..v_L``; ``v_0`` is implicitly zero."""

    weights: tuple
    shifts: tuple

    def __post_init__(self):
        ws = tuple(np.asarray(w, dtype=np.float64) for w in self.weights)
        vs = tuple(np.asarray(v, dtype=np.float64).reshape(-1) for v in self.shifts)
        if not ws:
            raise InvalidInputError("at least one weight matrix is required")
        if len(vs) != len(ws) - 1:
            raise InvalidInputError("need exactly one shift vector per hidden layer")
        for l, w in enumerate(ws):
            if w.ndim != 2:
                raise InvalidInputError(f"W_{l} is not a matrix")
            if l > 0 and w.shape[1] != ws[l - 1].shape[0]:
                raise InvalidInputError(f"W_{l} does not chain with W_{l - 1}")
            if l > 0 and vs[l - 1].shape[0] != w.shape[1]:
                raise InvalidInputError(f"v_{l} has the wrong length")
        if ws[-1].shape[0] != 1:
            raise InvalidInputError("output layer must have one row")
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "shifts", vs)

    @property
    def shape(self) -> NetworkShape:
        return NetworkShape((self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.weights] + [v for v in self.shifts])

    @classmethod
    def from_vector(cls, shape: NetworkShape, vec) -> "NetworkParams":
        vec = np.array(vec, dtype=np.float64)
        if vec.shape != (shape.n_params,):
            raise InvalidInputError("parameter vector has the wrong length")
        ws, vs = shape.views(vec)
        return cls(tuple(ws), tuple(vs))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    l1_lambda: float = 1e-4
    epochs: int = 500
    batch_size: int = 32
    clamp: float = 10.0
    seed: int = 0
    restarts: int = 3

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidInputError("learning_rate must be positive")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise InvalidInputError("Adam betas must lie in (0, 1)")
        if not self.adam_eps > 0:
            raise InvalidInputError("adam_eps must be positive")
        if self.l1_lambda < 0:
            raise InvalidInputError("l1_lambda must be nonnegative")
        if self.epochs < 1 or self.batch_size < 1 or self.restarts < 1:
            raise InvalidInputError("epochs, batch_size and restarts must be positive")
        if not self.clamp >= 1:
            raise InvalidInputError("clamp F must be at least 1")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


@dataclass(frozen=True)
class FitResult:
    """Selected network and training diagnostics.

    ``delta_hat`` is the restart-gap proxy for the optimization gap: the
    selected restart's final training MSE minus the smallest final training
    MSE over all restarts. It is not the expected risk gap to the global
    minimizer, which cannot be computed.
    """

    params: NetworkParams
    loss_trace: np.ndarray
    tau_hat: int
    delta_hat: float
    selected_config: TrainConfig
    restart_losses: tuple = ()
    selected_restart: int = 0

    @property
    def final_mse(self) -> float:
        return float(self.restart_losses[self.selected_restart])


@dataclass(frozen=True)
class ClassReport:
    max_norm_ok: bool
    sparsity_ok: bool
    clamp_enabled: bool
    max_norm: float
    nonzeros: int

    @property
    def member(self) -> bool:
        return self.max_norm_ok and self.sparsity_ok and self.clamp_enabled


def init_params(shape: NetworkShape, seed=None) -> NetworkParams:
    """He initialization: ``W_l ~ N(0, 2 / p_l)``, shifts zero."""
    rng = np.random.default_rng(seed)
    weights = tuple(
        rng.normal(0.0, math.sqrt(2.0 / c), size=(r, c)) for r, c in shape.weight_shapes
    )
    shifts = tuple(np.zeros(k) for k in shape.shift_sizes)
    return NetworkParams(weights, shifts)


def _forward_batch(weights, shifts, X):
    h = X @ weights[0].T
    for W, v in zip(weights[1:], shifts):
        h = np.maximum(h - v, 0.0) @ W.T
    return h[:, 0]


def predict(params: NetworkParams, X, clamp=None) -> np.ndarray:
    """Evaluate the network on the rows of ``X``, optionally truncated to [-F, F]."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != params.weights[0].shape[1]:
        raise InvalidInputError(
            f"expected {params.weights[0].shape[1]} covariates, got {X.shape[1]}"
        )
    out = _forward_batch(params.weights, params.shifts, X)
    if clamp is not None:
        out = np.clip(out, -clamp, clamp)
    return out


def forward(params: NetworkParams, x, clamp=None) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidInputError("forward takes a single covariate vector")
    return float(predict(params, x, clamp)[0])


def _backprop(weights, shifts, X, y, gw, gv):
    """Fill gradient views ``gw``/``gv`` in place; return the batch MSE."""
    n = X.shape[0]
    # acts[l] is the input to W_l
    acts = [X]
    masks = []
    h = X @ weights[0].T
    for W, v in zip(weights[1:], shifts):
        z = h - v
        mask = z > 0.0
        a = np.where(mask, z, 0.0)
        masks.append(mask)
        acts.append(a)
        h = a @ W.T
    resid = h[:, 0] - y
    mse = float(resid @ resid) / n
    delta = (2.0 / n) * resid[:, None]
    for l in range(len(weights) - 1, -1, -1):
        np.matmul(delta.T, acts[l], out=gw[l])
        if l > 0:
            delta = (delta @ weights[l]) * masks[l - 1]
            # d/dv of max(0, z - v) is -1 on the active set
            np.sum(delta, axis=0, out=gv[l - 1])
            np.negative(gv[l - 1], out=gv[l - 1])
    return mse


def loss_and_grads(params: NetworkParams, X, y):
    """Mean squared error of a batch and its exact gradient.

    Returns
    -------
    mse : float
    grads : NetworkParams
        Same layout as ``params``. The ReLU derivative at zero is taken as 0.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[0] == 0:
        raise InvalidInputError("empty batch")
    if X.shape[0] != y.shape[0]:
        raise InvalidInputError("covariate and response counts differ")
    shape = params.shape
    gbuf = np.zeros(shape.n_params)
    gw, gv = shape.views(gbuf)
    mse = _backprop(params.weights, params.shifts, X, y, gw, gv)
    return mse, NetworkParams.from_vector(shape, gbuf)


def _adam_update(theta, grad, state: AdamState, config: TrainConfig):
    b1, b2 = config.adam_beta1, config.adam_beta2
    state.t += 1
    state.m *= b1
    state.m += (1.0 - b1) * grad
    state.v *= b2
    state.v += (1.0 - b2) * grad * grad
    mhat = state.m / (1.0 - b1 ** state.t)
    vhat = state.v / (1.0 - b2 ** state.t)
    theta -= config.learning_rate * mhat / (np.sqrt(vhat) + config.adam_eps)


def adam_step(params, state: AdamState | None, grads, config: TrainConfig):
    """One bias-corrected Adam update.

    ``params`` and ``grads`` may be :class:`NetworkParams` or flat arrays.
    Returns the updated parameters (same type as given) and the new state;
    inputs are not modified.
    """
    as_net = isinstance(params, NetworkParams)
    theta = params.to_vector() if as_net else np.array(params, dtype=np.float64)
    g = grads.to_vector() if isinstance(grads, NetworkParams) else np.asarray(grads, dtype=np.float64)
    if state is None:
        state = AdamState.zeros(theta.size)
    else:
        state = AdamState(state.m.copy(), state.v.copy(), state.t)
    _adam_update(theta, g, state, config)
    if as_net:
        return NetworkParams.from_vector(params.shape, theta), state
    return theta, state


def _soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def prox_l1(params, threshold: float):
    """Soft-threshold every weight entry; shifts pass through unchanged."""
    if threshold < 0:
        raise InvalidInputError("threshold must be nonnegative")
    if not isinstance(params, NetworkParams):
        return _soft_threshold(np.asarray(params, dtype=np.float64), threshold)
    return NetworkParams(
        tuple(_soft_threshold(w, threshold) for w in params.weights),
        tuple(v.copy() for v in params.shifts),
    )


def sparsity(params: NetworkParams, tol: float = 0.0, include_shifts: bool = True) -> int:
    """Number of entries with ``|entry| > tol``."""
    if tol < 0:
        raise InvalidInputError("tol must be nonnegative")
    count = sum(int(np.count_nonzero(np.abs(w) > tol)) for w in params.weights)
    if include_shifts:
        count += sum(int(np.count_nonzero(np.abs(v) > tol)) for v in params.shifts)
    return count


def class_check(params: NetworkParams, tau: int, F=None, tol: float = 0.0) -> ClassReport:
    """Membership report for the bounded sparse network class.

    The sup-norm bound is enforced by output clamping, so only whether a
    finite clamp level ``F`` is in use is reported.
    """
    norms = [float(np.max(np.abs(params.weights[0])))]
    for W, v in zip(params.weights[1:], params.shifts):
        norms.append(float(np.max(np.abs(W))) + (float(np.max(np.abs(v))) if v.size else 0.0))
    max_norm = max(norms)
    nnz = sparsity(params, tol)
    clamp_on = F is not None and math.isfinite(F)
    return ClassReport(max_norm <= 1.0, nnz <= tau, clamp_on, max_norm, nnz)


def _train_once(shape, X, y, config, init_seed, shuffle_seed):
    n = X.shape[0]
    theta = init_params(shape, init_seed).to_vector()
    grad = np.zeros_like(theta)
    weights, shifts = shape.views(theta)
    gw, gv = shape.views(grad)
    state = AdamState.zeros(theta.size)
    nw = shape.n_weights
    thr = config.learning_rate * config.l1_lambda
    rng = np.random.default_rng(shuffle_seed)
    bs = config.batch_size
    trace = np.empty(config.epochs)
    # overflow is reported as DivergenceError below
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(config.epochs):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, bs):
                idx = order[start:start + bs]
                mse = _backprop(weights, shifts, X[idx], y[idx], gw, gv)
                total += mse * idx.size
                _adam_update(theta, grad, state, config)
                if thr > 0:
                    w = theta[:nw]
                    np.copyto(w, np.sign(w) * np.maximum(np.abs(w) - thr, 0.0))
            trace[epoch] = total / n
            if not math.isfinite(trace[epoch]) or not np.all(np.isfinite(theta)):
                raise DivergenceError(epoch)
        resid = _forward_batch(weights, shifts, X) - y
        final = float(resid @ resid) / n
    if not math.isfinite(final):
        raise DivergenceError(config.epochs - 1)
    return theta, trace, final


def fit(X, y, shape: NetworkShape, config: TrainConfig = TrainConfig()) -> FitResult:
    """Least-squares fit by mini-batch Adam with L1 proximal steps.

    Runs ``config.restarts`` independently seeded trainings and keeps the
    one with the smallest final training MSE.

    Raises
    ------
    DivergenceError
        If the loss becomes non-finite; the error names the epoch.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise InvalidInputError("X must be n x d with one response per row")
    if X.shape[1] != shape.input_dim:
        raise InvalidInputError(
            f"network expects {shape.input_dim} covariates, data has {X.shape[1]}"
        )
    if config.batch_size > X.shape[0]:
        raise InvalidInputError("batch_size exceeds the number of observations")
    seeds = np.random.SeedSequence(config.seed).spawn(config.restarts)
    runs = []
    for ss in seeds:
        init_ss, shuffle_ss = ss.spawn(2)
        runs.append(_train_once(shape, X, y, config, init_ss, shuffle_ss))
    finals = [r[2] for r in runs]
    best = int(np.argmin(finals))
    params = NetworkParams.from_vector(shape, runs[best][0])
    return FitResult(
        params=params,
        loss_trace=runs[best][1],
        tau_hat=sparsity(params, 0.0),
        delta_hat=finals[best] - min(finals),
        selected_config=config,
        restart_losses=tuple(finals),
        selected_restart=best,
    )


def params_to_json(params: NetworkParams) -> str:
    doc = {
        "format": FORMAT_VERSION,
        "widths": list(params.shape.widths),
        "weights": [w.tolist() for w in params.weights],
        "shifts": [v.tolist() for v in params.shifts],
    }
    return json.dumps(doc)


def params_from_json(text: str) -> NetworkParams:
    doc = json.loads(text)
    if doc.get("format") != FORMAT_VERSION:
        raise InvalidInputError(f"unsupported network format {doc.get('format')!r}")
    params = NetworkParams(
        tuple(np.array(w, dtype=np.float64).reshape(-1, c) if len(w) else np.zeros((0, c))
              for w, c in zip(doc["weights"], doc["widths"][:-1])),
        tuple(np.array(v, dtype=np.float64) for v in doc["shifts"]),
    )
    if list(params.shape.widths) != list(doc["widths"]):
        raise InvalidInputError("widths do not match the stored arrays")
    return params


def save_params(params: NetworkParams, path):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(params_to_json(params))
    tmp.replace(path)


def load_params(path) -> NetworkParams:
    return params_from_json(Path(path).read_text())
