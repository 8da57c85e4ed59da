"""Random polynomial targets with proportional Gaussian noise."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .exprcore import Expr, add, const, mul, var
from .learners import Dataset, rmse

__all__ = [
    "DimensionMismatch",
    "PolynomialSpec",
    "SyntheticConfig",
    "random_polynomial",
    "eval_polynomial",
    "eval_polynomial_batch",
    "generate_dataset",
    "term_count",
    "baseline_noise_rmse",
    "polynomial_to_expr",
    "write_dataset",
]


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class PolynomialSpec:
    """Sum of ``coefficient * prod_j x_j ** exponents[j]`` terms."""

    feature_count: int
    terms: tuple[tuple[float, tuple[int, ...]], ...]

    def __post_init__(self):
        terms = tuple((float(c), tuple(int(e) for e in exps)) for c, exps in self.terms)
        object.__setattr__(self, "terms", terms)
        if not terms:
            raise ValueError("a polynomial needs at least one term")
        for _, exps in terms:
            if len(exps) != self.feature_count:
                raise DimensionMismatch(
                    f"exponent vector of length {len(exps)} for {self.feature_count} features")
            if any(e < 0 for e in exps):
                raise ValueError("exponents must be nonnegative")

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([c for c, _ in self.terms])

    @property
    def exponents(self) -> np.ndarray:
        return np.array([e for _, e in self.terms], dtype=int)

    def to_dict(self) -> dict:
        return {"feature_count": self.feature_count,
                "terms": [[c, list(e)] for c, e in self.terms]}

    @classmethod
    def from_dict(cls, d: dict) -> PolynomialSpec:
        return cls(d["feature_count"], tuple((c, tuple(e)) for c, e in d["terms"]))

    def __str__(self) -> str:
        parts = []
        for c, exps in self.terms:
            factors = [f"x{j}" if e == 1 else f"x{j}^{e}" for j, e in enumerate(exps) if e]
            if c != 1.0:
                factors.insert(0, f"{c:g}")
            parts.append("*".join(factors) or f"{c:g}")
        return " + ".join(parts)


@dataclass(frozen=True)
class SyntheticConfig:
    n_samples: int = 5000
    noise_fraction: float = 0.05
    feature_count_range: tuple[int, int] = (2, 5)
    term_count_range: tuple[int, int] = (1, 5)
    max_exponent: int = 3
    coefficient_choices: tuple[float, ...] = (1.0, 2.0, 3.0)
    feature_range: tuple[float, float] = (-2.0, 2.0)
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not 0.0 <= self.noise_fraction <= 1.0:
            raise ValueError("noise_fraction must lie in [0, 1]")
        lo, hi = self.feature_range
        if not lo < hi:
            raise ValueError("feature_range must have low < high")
        a, b = self.term_count_range
        if not 1 <= a <= b:
            raise ValueError("term_count_range must satisfy 1 <= low <= high")
        a, b = self.feature_count_range
        if not 1 <= a <= b:
            raise ValueError("feature_count_range must satisfy 1 <= low <= high")
        if self.max_exponent < 1:
            raise ValueError("max_exponent must be >= 1")
        if not self.coefficient_choices:
            raise ValueError("coefficient_choices must not be empty")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self.__dict__.items()}


def random_polynomial(config: SyntheticConfig, rng: np.random.Generator) -> PolynomialSpec:
    m = int(rng.integers(config.feature_count_range[0], config.feature_count_range[1] + 1))
    n_terms = int(rng.integers(config.term_count_range[0], config.term_count_range[1] + 1))
    terms = []
    for _ in range(n_terms):
        while True:
            exps = rng.integers(0, config.max_exponent + 1, size=m)
            if exps.max() >= 1:
                break
        coef = config.coefficient_choices[int(rng.integers(len(config.coefficient_choices)))]
        terms.append((coef, tuple(int(e) for e in exps)))
    return PolynomialSpec(m, tuple(terms))


def eval_polynomial(spec: PolynomialSpec, row: Sequence[float]) -> float:
    if len(row) != spec.feature_count:
        raise DimensionMismatch(f"row has {len(row)} values, polynomial needs {spec.feature_count}")
    total = 0.0
    for c, exps in spec.terms:
        term = c
        for x, e in zip(row, exps):
            term *= float(x) ** e
        total += term
    return total


def eval_polynomial_batch(spec: PolynomialSpec, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.feature_count:
        raise DimensionMismatch(f"X has shape {X.shape}, polynomial needs {spec.feature_count} columns")
    out = np.zeros(X.shape[0])
    for c, exps in spec.terms:
        term = np.full(X.shape[0], c)
        for j, e in enumerate(exps):
            if e:
                term = term * X[:, j] ** e
        out += term
    return out


def generate_dataset(spec: PolynomialSpec, n: int, sigma_rel: float,
                     rng: np.random.Generator,
                     feature_range: tuple[float, float] = (-2.0, 2.0)) -> Dataset:
    """Sample ``n`` rows; noise std is ``sigma_rel * |p(x)|`` per row.

    The returned dataset keeps the noiseless target in ``y_clean``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    X = rng.uniform(feature_range[0], feature_range[1], size=(n, spec.feature_count))
    clean = eval_polynomial_batch(spec, X)
    # scale 0 gives exactly zero noise, so rows with p(x) = 0 stay clean
    noise = rng.standard_normal(n) * (sigma_rel * np.abs(clean))
    names = [f"x{j}" for j in range(spec.feature_count)]
    return Dataset(X, clean + noise, names, y_clean=clean,
                   info={"polynomial": spec.to_dict(), "sigma_rel": sigma_rel,
                         "term_count": term_count(spec)})


def term_count(spec: PolynomialSpec) -> int:
    return len(spec.terms)


def baseline_noise_rmse(spec: PolynomialSpec, dataset: Dataset) -> float:
    """RMSE of the true polynomial against the noisy target."""
    return rmse(eval_polynomial_batch(spec, dataset.X), dataset.y)


def polynomial_to_expr(spec: PolynomialSpec) -> Expr:
    """The same polynomial as an expression tree (powers as repeated products)."""
    total = None
    for c, exps in spec.terms:
        term = const(c)
        for j, e in enumerate(exps):
            for _ in range(e):
                term = mul(term, var(j))
        total = term if total is None else add(total, term)
    return total


def write_dataset(dataset: Dataset, path: str | Path, sidecar: dict | None = None) -> None:
    """Write ``x0..x{m-1}, y, y_clean`` CSV plus an optional JSON sidecar."""
    path = Path(path)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = list(dataset.feature_names) + ["y"]
    has_clean = dataset.y_clean is not None
    if has_clean:
        header.append("y_clean")
    writer.writerow(header)
    for i in range(dataset.n):
        row = [repr(float(v)) for v in dataset.X[i]] + [repr(float(dataset.y[i]))]
        if has_clean:
            row.append(repr(float(dataset.y_clean[i])))
        writer.writerow(row)
    path.write_text(buf.getvalue())
    if sidecar is not None:
        side = path.with_suffix(".json")
        side.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def half_normal_mean(sigma: float) -> float:
    return sigma * math.sqrt(2.0 / math.pi)
