"""Small statistics kernel: t and normal CDFs, rank tests, OLS inference.

Kept dependency-free (numpy + math) on purpose; scipy is only used by the
test suite as a cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "TooFewSamples",
    "RankDeficient",
    "betainc",
    "t_sf_two_sided",
    "t_cdf",
    "normal_sf",
    "rankdata",
    "wilcoxon_signed_rank",
    "sign_test",
    "spearman",
    "OlsInference",
    "ols_inference",
]


class TooFewSamples(ValueError):
    pass


class RankDeficient(ValueError):
    pass


def _betacf(a: float, b: float, x: float, max_iter: int = 500, eps: float = 1e-16) -> float:
    # modified Lentz evaluation of the incomplete-beta continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    # the fraction converges fast for x below the mean; use symmetry otherwise
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf_two_sided(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if df <= 0:
        raise ValueError("df must be positive")
    if math.isnan(t):
        return math.nan
    if math.isinf(t):
        return 0.0
    if t * t < df:
        return 1.0 - _t_central(t, df)
    return betainc(df / 2.0, 0.5, df / (df + t * t))


def _t_central(t: float, df: float) -> float:
    # P(|T| < |t|); accurate for small |t| where df / (df + t^2) rounds to 1
    return betainc(0.5, df / 2.0, t * t / (df + t * t))


def t_cdf(t: float, df: float) -> float:
    if not math.isinf(t) and t * t < df:
        half = 0.5 * _t_central(t, df)
        return 0.5 + half if t > 0 else 0.5 - half
    tail = 0.5 * t_sf_two_sided(t, df)
    return 1.0 - tail if t > 0 else tail


def normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def rankdata(values) -> np.ndarray:
    """1-based ranks with ties assigned their average rank."""
    a = np.asarray(values, dtype=np.float64)
    order = np.argsort(a, kind="mergesort")
    ranks = np.empty(len(a))
    sorted_a = a[order]
    i = 0
    while i < len(a):
        j = i
        while j + 1 < len(a) and sorted_a[j + 1] == sorted_a[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


EXACT_MAX_N = 25


def wilcoxon_signed_rank(values: Sequence[float], min_n: int = 6) -> float:
    """One-sided p-value for median(values) > 0.

    Zeros are dropped.  For at most 25 nonzero values the null distribution
    of the positive rank sum is enumerated and the mid-p value
    ``P(W > w) + P(W = w) / 2`` is returned; above that a normal approximation
    with tie-corrected variance and no continuity correction is used.  Both
    give exactly 0.5 for a sample symmetric about zero.
    """
    d = np.asarray(values, dtype=np.float64)
    d = d[~np.isnan(d)]
    if len(d) < min_n:
        raise TooFewSamples(f"need at least {min_n} values, got {len(d)}")
    d = d[d != 0]
    n = len(d)
    if n == 0:
        return 0.5
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if n <= EXACT_MAX_N:
        # ranks are multiples of 1/2, so count in half-rank units
        units = np.rint(2 * ranks).astype(int)
        total = int(units.sum())
        counts = np.zeros(total + 1)
        counts[0] = 1.0
        for u in units:
            shifted = np.zeros_like(counts)
            shifted[u:] = counts[:-u]
            counts += shifted
        w = int(round(2 * w_plus))
        mass = counts / counts.sum()
        return float(mass[w + 1:].sum() + 0.5 * mass[w])
    mean = n * (n + 1) / 4.0
    _, tie_sizes = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float((tie_sizes**3 - tie_sizes).sum()) / 48.0
    if var <= 0:
        return 0.5
    return normal_sf((w_plus - mean) / math.sqrt(var))


def sign_test(values: Sequence[float]) -> float:
    """One-sided exact binomial p-value for P(value > 0) > 1/2, zeros dropped."""
    d = np.asarray(values, dtype=np.float64)
    d = d[~np.isnan(d) & (d != 0)]
    n = len(d)
    if n == 0:
        return 1.0
    k = int((d > 0).sum())
    return sum(math.comb(n, i) for i in range(k, n + 1)) / 2.0**n


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or len(x) < 2:
        raise ValueError("need two equal-length sequences of length >= 2")
    rx = rankdata(x) - (len(x) + 1) / 2.0
    ry = rankdata(y) - (len(y) + 1) / 2.0
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if denom == 0.0:
        return math.nan
    return float(rx @ ry) / denom


@dataclass
class OlsInference:
    names: list[str]
    coefficients: np.ndarray
    std_errors: np.ndarray
    t_values: np.ndarray
    p_values: np.ndarray
    r_squared: float
    n: int
    df_resid: int


def ols_inference(X, y, names: Sequence[str]) -> OlsInference:
    """OLS with intercept plus classical standard errors and t-test p-values.

    ``names`` labels the columns of ``X``; the intercept is prepended as
    ``"intercept"``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, m = X.shape
    p = m + 1
    if n < p + 1:
        raise TooFewSamples(f"need at least {p + 1} observations for {m} covariates, got {n}")
    A = np.column_stack([np.ones(n), X])
    # scale columns so the rank check is unit-free
    col_scale = np.sqrt((A * A).sum(axis=0))
    col_scale[col_scale == 0] = 1.0
    Q, R = np.linalg.qr(A / col_scale)
    diag = np.abs(np.diag(R))
    if diag.min() <= 1e-10:
        raise RankDeficient("covariate matrix is rank deficient (constant or collinear covariate)")
    beta_scaled = np.linalg.solve(R, Q.T @ y)
    beta = beta_scaled / col_scale
    resid = y - A @ beta
    sse = float(resid @ resid)
    df = n - p
    sigma2 = sse / df
    R_inv = np.linalg.solve(R, np.eye(p))
    cov = sigma2 * (R_inv @ R_inv.T) / np.outer(col_scale, col_scale)
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, beta / se, np.where(beta == 0, 0.0, np.inf * np.sign(beta)))
    pvals = np.array([t_sf_two_sided(float(v), df) for v in t])
    dev = y - y.mean()
    sst = float(dev @ dev)
    r2 = 1.0 - sse / sst if sst > 0 else 1.0
    return OlsInference(["intercept", *names], beta, se, t, pvals, r2, n, df)
