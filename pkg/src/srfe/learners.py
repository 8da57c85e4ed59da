"""Regressors, metrics and a cross-validated model search.

The model search stands in for an AutoML system: ``ML_GRID`` covers OLS,
CART, random forests and k-nearest neighbours, ``DL_GRID`` covers small
multilayer perceptrons.  CART and random forests are backed by scikit-learn;
OLS, KNN and the MLP are implemented here with numpy.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from sklearn.ensemble import RandomForestRegressor
from sklearn.tree import DecisionTreeRegressor

__all__ = [
    "Dataset",
    "FittedModel",
    "LearnerError",
    "LengthMismatch",
    "EmptyVector",
    "RankDeficient",
    "TooFewRows",
    "DegenerateData",
    "rmse",
    "fit_ols",
    "r_squared",
    "fit_cart",
    "fit_forest",
    "fit_knn",
    "fit_mlp",
    "mlp_init",
    "mlp_forward",
    "mlp_loss_and_grads",
    "make_folds",
    "cross_val_rmse",
    "model_search",
    "Candidate",
    "ML_GRID",
    "DL_GRID",
    "fit_candidate",
]

log = logging.getLogger(__name__)


class LearnerError(ValueError):
    pass


class LengthMismatch(LearnerError):
    pass


class EmptyVector(LearnerError):
    pass


class RankDeficient(LearnerError):
    pass


class TooFewRows(LearnerError):
    pass


class DegenerateData(LearnerError):
    pass


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    feature_names: list[str]
    y_clean: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.X.ndim != 2:
            raise LearnerError(f"X must be 2-D, got shape {self.X.shape}")
        if self.X.shape[0] < 1:
            raise EmptyVector("dataset has no rows")
        if self.y.shape != (self.X.shape[0],):
            raise LengthMismatch(f"X has {self.X.shape[0]} rows, y has shape {self.y.shape}")
        self.feature_names = list(self.feature_names)
        if len(self.feature_names) != self.X.shape[1]:
            raise LengthMismatch("feature_names length differs from column count")
        if len(set(self.feature_names)) != len(self.feature_names):
            raise LearnerError("feature names must be unique")
        if not (np.isfinite(self.X).all() and np.isfinite(self.y).all()):
            raise LearnerError("dataset contains non-finite values")
        if self.y_clean is not None:
            self.y_clean = np.asarray(self.y_clean, dtype=np.float64)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.X.shape[1]

    def subset(self, rows) -> Dataset:
        rows = np.asarray(rows)
        clean = None if self.y_clean is None else self.y_clean[rows]
        return Dataset(self.X[rows], self.y[rows], self.feature_names, clean, dict(self.info))


def rmse(predicted, actual) -> float:
    p = np.asarray(predicted, dtype=np.float64).ravel()
    a = np.asarray(actual, dtype=np.float64).ravel()
    if p.shape != a.shape:
        raise LengthMismatch(f"lengths differ: {p.size} vs {a.size}")
    if p.size == 0:
        raise EmptyVector("rmse of empty vectors")
    d = p - a
    return math.sqrt(float(np.mean(d * d)))


@dataclass
class FittedModel:
    kind: str
    hyperparameters: dict
    n_features: int
    state: Any = field(repr=False)
    cv_rmse: float | None = None
    metadata: dict = field(default_factory=dict, repr=False)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise LengthMismatch(f"expected {self.n_features} columns, got shape {X.shape}")
        return _PREDICT[self.kind](self.state, X)

    def summary(self) -> dict:
        return {"kind": self.kind, "hyperparameters": dict(self.hyperparameters),
                "cv_rmse": self.cv_rmse}


# -- OLS ----------------------------------------------------------------------

def fit_ols(X, y, allow_rank_deficient: bool = False) -> FittedModel:
    """Least squares with intercept via QR of the centered design.

    With ``allow_rank_deficient`` the minimum-norm solution (SVD) is used
    instead of raising :class:`RankDeficient`.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, m = X.shape
    if y.shape != (n,):
        raise LengthMismatch(f"X has {n} rows, y has shape {y.shape}")
    if n <= m + 1 and not allow_rank_deficient:
        raise TooFewRows(f"need more than {m + 1} rows for {m} features, got {n}")
    x_mean = X.mean(axis=0)
    y_mean = float(y.mean())
    Xc = X - x_mean
    yc = y - y_mean
    if m == 0:
        coef = np.zeros(0)
    elif allow_rank_deficient:
        coef = np.linalg.lstsq(Xc, yc, rcond=None)[0]
    else:
        Q, R = np.linalg.qr(Xc)
        diag = np.abs(np.diag(R))
        scale = max(float(np.abs(Xc).max()), 1.0) * max(n, m)
        if diag.size == 0 or diag.min() <= 1e-10 * scale:
            raise RankDeficient("design matrix is rank deficient after centering")
        coef = _solve_upper(R, Q.T @ yc)
    intercept = y_mean - float(x_mean @ coef)
    return FittedModel("OLS", {}, m, (intercept, coef))


def _solve_upper(R: np.ndarray, b: np.ndarray) -> np.ndarray:
    x = np.zeros_like(b)
    for i in range(len(b) - 1, -1, -1):
        x[i] = (b[i] - R[i, i + 1:] @ x[i + 1:]) / R[i, i]
    return x


def _predict_ols(state, X):
    intercept, coef = state
    return intercept + X @ coef


def r_squared(model: FittedModel, X, y) -> float:
    """``1 - SSE/SST`` on the given data (1.0 when ``y`` is constant and fit exactly)."""
    y = np.asarray(y, dtype=np.float64)
    resid = y - model.predict(X)
    sse = float(resid @ resid)
    dev = y - y.mean()
    sst = float(dev @ dev)
    if sst == 0.0:
        return 1.0 if sse == 0.0 else 0.0
    return 1.0 - sse / sst


# -- trees (scikit-learn) -----------------------------------------------------

def _seed_from(rng: np.random.Generator | None) -> int:
    if rng is None:
        return 0
    return int(rng.integers(2**31 - 1))


def fit_cart(X, y, max_depth: int | None = None, min_leaf: int = 1,
             rng: np.random.Generator | None = None) -> FittedModel:
    X = np.asarray(X, dtype=np.float64)
    tree = DecisionTreeRegressor(max_depth=max_depth, min_samples_leaf=min_leaf,
                                 random_state=_seed_from(rng))
    tree.fit(X, np.asarray(y, dtype=np.float64))
    return FittedModel("CART", {"max_depth": max_depth, "min_leaf": min_leaf},
                       X.shape[1], tree)


def fit_forest(X, y, n_trees: int = 50, max_depth: int | None = None, min_leaf: int = 1,
               feature_subsample: float = 1.0,
               rng: np.random.Generator | None = None) -> FittedModel:
    X = np.asarray(X, dtype=np.float64)
    forest = RandomForestRegressor(n_estimators=n_trees, max_depth=max_depth,
                                   min_samples_leaf=min_leaf, max_features=feature_subsample,
                                   bootstrap=True, n_jobs=1, random_state=_seed_from(rng))
    forest.fit(X, np.asarray(y, dtype=np.float64))
    params = {"n_trees": n_trees, "max_depth": max_depth, "min_leaf": min_leaf,
              "feature_subsample": feature_subsample}
    return FittedModel("RandomForest", params, X.shape[1], forest)


def _predict_sklearn(state, X):
    return state.predict(X)


# -- KNN ----------------------------------------------------------------------

def _zscore_stats(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    return mu, sd


def fit_knn(X, y, k: int = 5) -> FittedModel:
    if k < 1:
        raise LearnerError("k must be >= 1")
    X = np.asarray(X, dtype=np.float64)
    mu, sd = _zscore_stats(X)
    state = (mu, sd, (X - mu) / sd, np.asarray(y, dtype=np.float64).copy(), k)
    return FittedModel("KNN", {"k": k}, X.shape[1], state)


def _predict_knn(state, X):
    mu, sd, Z, y, k = state
    k = min(k, len(y))
    Q = (X - mu) / sd
    out = np.empty(X.shape[0])
    sq_train = np.einsum("ij,ij->i", Z, Z)
    step = max(1, 2_000_000 // max(len(y), 1))
    for lo in range(0, X.shape[0], step):
        q = Q[lo:lo + step]
        d2 = sq_train[None, :] - 2.0 * q @ Z.T + np.einsum("ij,ij->i", q, q)[:, None]
        if k == len(y):
            out[lo:lo + step] = y.mean()
            continue
        idx = np.argpartition(d2, k - 1, axis=1)[:, :k]
        out[lo:lo + step] = y[idx].mean(axis=1)
    return out


# -- MLP ----------------------------------------------------------------------

def mlp_init(layer_sizes: Sequence[int], rng: np.random.Generator) -> list[tuple[np.ndarray, np.ndarray]]:
    """Glorot-uniform weights for ``layer_sizes = (n_in, h1, ..., 1)``."""
    params = []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        params.append((W, np.zeros(fan_out)))
    return params


def mlp_forward(params, X: np.ndarray) -> np.ndarray:
    h = X
    for W, b in params[:-1]:
        h = np.tanh(h @ W + b)
    W, b = params[-1]
    return (h @ W + b).ravel()


def mlp_loss_and_grads(params, X: np.ndarray, y: np.ndarray):
    """Mean squared error ``0.5 * mean((f(X) - y)**2)`` and its gradients."""
    acts = [X]
    h = X
    for W, b in params[:-1]:
        h = np.tanh(h @ W + b)
        acts.append(h)
    W, b = params[-1]
    pred = (h @ W + b).ravel()
    err = pred - y
    n = X.shape[0]
    loss = 0.5 * float(err @ err) / n
    delta = (err / n)[:, None]
    grads = [None] * len(params)
    for layer in range(len(params) - 1, -1, -1):
        W, _ = params[layer]
        a = acts[layer]
        grads[layer] = (a.T @ delta, delta.sum(axis=0))
        if layer:
            delta = (delta @ W.T) * (1.0 - a * a)
    return loss, grads


def fit_mlp(X, y, hidden_sizes: Sequence[int] = (32,), epochs: int = 100,
            learning_rate: float = 1e-2, rng: np.random.Generator | None = None,
            batch_size: int = 64) -> FittedModel:
    """Tanh MLP trained by mini-batch Adam on z-scored inputs and target."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if rng is None:
        rng = np.random.default_rng(0)
    hp = {"hidden_sizes": list(hidden_sizes), "epochs": epochs,
          "learning_rate": learning_rate, "batch_size": batch_size}
    mu, sd = _zscore_stats(X)
    y_mu = float(y.mean())
    y_sd = float(y.std())
    if y_sd == 0.0:
        # constant target: nothing to learn
        return FittedModel("MLP", hp, X.shape[1], (mu, sd, y_mu, 1.0, None))
    Z = (X - mu) / sd
    t = (y - y_mu) / y_sd
    params = mlp_init([X.shape[1], *hidden_sizes, 1], rng)
    flat = [p for pair in params for p in pair]
    m1 = [np.zeros_like(p) for p in flat]
    m2 = [np.zeros_like(p) for p in flat]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    n = len(t)
    bs = min(batch_size, n)
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, bs):
            rows = order[lo:lo + bs]
            _, grads = mlp_loss_and_grads(params, Z[rows], t[rows])
            step += 1
            gflat = [g for pair in grads for g in pair]
            corr = learning_rate * math.sqrt(1 - beta2**step) / (1 - beta1**step)
            for i, g in enumerate(gflat):
                m1[i] *= beta1
                m1[i] += (1 - beta1) * g
                m2[i] *= beta2
                m2[i] += (1 - beta2) * g * g
                flat[i] -= corr * m1[i] / (np.sqrt(m2[i]) + eps)
    return FittedModel("MLP", hp, X.shape[1], (mu, sd, y_mu, y_sd, params))


def _predict_mlp(state, X):
    mu, sd, y_mu, y_sd, params = state
    if params is None:
        return np.full(X.shape[0], y_mu)
    return mlp_forward(params, (X - mu) / sd) * y_sd + y_mu


_PREDICT = {
    "OLS": _predict_ols,
    "CART": _predict_sklearn,
    "RandomForest": _predict_sklearn,
    "KNN": _predict_knn,
    "MLP": _predict_mlp,
}


# -- model search -------------------------------------------------------------

Candidate = tuple[str, dict]

ML_GRID: tuple[Candidate, ...] = (
    ("OLS", {}),
    *(("CART", {"max_depth": d, "min_leaf": leaf}) for d in (4, 8, 12) for leaf in (1, 5)),
    *(("RandomForest", {"n_trees": 15, "max_depth": None, "min_leaf": leaf, "feature_subsample": f})
      for leaf, f in ((1, 1.0), (5, 1.0), (1, 0.5))),
    *(("KNN", {"k": k}) for k in (1, 3, 5, 10, 20, 40)),
)

DL_GRID: tuple[Candidate, ...] = tuple(
    ("MLP", {"hidden_sizes": h, "epochs": 60, "learning_rate": 1e-2, "batch_size": 128})
    for h in ((16,), (32,), (32, 16), (64, 32))
)


def fit_candidate(kind: str, params: dict, X, y, rng: np.random.Generator) -> FittedModel:
    if kind == "OLS":
        return fit_ols(X, y, allow_rank_deficient=True)
    if kind == "CART":
        return fit_cart(X, y, rng=rng, **params)
    if kind == "RandomForest":
        return fit_forest(X, y, rng=rng, **params)
    if kind == "KNN":
        return fit_knn(X, y, **params)
    if kind == "MLP":
        return fit_mlp(X, y, rng=rng, **params)
    raise LearnerError(f"unknown model kind {kind!r}")


def make_folds(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Fold id per row: a random permutation dealt round-robin into ``k`` folds."""
    if k < 2:
        raise LearnerError("need at least 2 folds")
    if n < k:
        raise TooFewRows(f"{n} rows cannot fill {k} folds")
    folds = np.empty(n, dtype=int)
    folds[rng.permutation(n)] = np.arange(n) % k
    return folds


def _candidate_rng(seed: int, index: int, fold: int) -> np.random.Generator:
    return np.random.default_rng([seed, index, fold])


def cross_val_rmse(kind: str, params: dict, X, y, folds: np.ndarray,
                   seed: int = 0, index: int = 0) -> float:
    """Mean held-out RMSE over the folds in ``folds``."""
    scores = []
    for f in np.unique(folds):
        train = folds != f
        model = fit_candidate(kind, params, X[train], y[train], _candidate_rng(seed, index, int(f)))
        pred = model.predict(X[~train])
        if not np.isfinite(pred).all():
            return math.inf
        scores.append(rmse(pred, y[~train]))
    return float(np.mean(scores))


def model_search(train: Dataset, cv_folds: int = 5, budget: int = 24, seed: int = 0,
                 grid: Sequence[Candidate] = ML_GRID,
                 folds: np.ndarray | None = None) -> FittedModel:
    """Pick the grid candidate with the lowest k-fold CV RMSE and refit it.

    Only the first ``budget`` grid entries are evaluated.  Ties go to the
    earlier grid entry.  Passing ``folds`` fixes the fold assignment so that
    several searches can share it.
    """
    if budget < 1:
        raise LearnerError("budget must be >= 1")
    X, y = train.X, train.y
    if folds is None:
        folds = make_folds(train.n, cv_folds, np.random.default_rng([seed, 0xF01D]))
    elif len(folds) != train.n:
        raise LengthMismatch("fold assignment length differs from row count")
    scored = []
    for index, (kind, params) in enumerate(list(grid)[:budget]):
        try:
            score = cross_val_rmse(kind, params, X, y, folds, seed, index)
        except LearnerError as exc:
            log.warning("candidate %s %s failed: %s", kind, params, exc)
            score = math.inf
        scored.append(score)
    best = int(np.argmin(scored))
    if not math.isfinite(scored[best]):
        raise DegenerateData("no candidate produced a finite CV score")
    kind, params = grid[best]
    model = fit_candidate(kind, params, X, y, _candidate_rng(seed, best, -1 & 0xFFFF))
    model.cv_rmse = scored[best]
    model.metadata = {"grid_index": best,
                      "candidates": [{"kind": k, "hyperparameters": p, "cv_rmse": s}
                                     for (k, p), s in zip(grid, scored)]}
    return model
