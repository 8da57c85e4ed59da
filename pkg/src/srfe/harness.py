"""Repeated trials, sample-size x noise sweeps, and robustness statistics."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import datagen, stats
from .gpsr import DEFAULT_PARSIMONY, GpConfig
from .learners import Dataset, fit_ols, r_squared, rmse
from .pipeline import SearchConfig, TrialResult, run_paired_trial
from .stats import RankDeficient, TooFewSamples

__all__ = [
    "REFERENCE_SAMPLE_SIZES",
    "REFERENCE_NOISE_LEVELS",
    "ROBUSTNESS_MODELS",
    "ZeroVariance",
    "EmptyResults",
    "SyntheticSource",
    "CsvSource",
    "TrialFailure",
    "SweepCell",
    "RobustnessFit",
    "nonlinearity_lr_std",
    "nonlinearity_one_minus_r2",
    "significance_test",
    "summarize",
    "summarize_improvements",
    "repeat_experiment",
    "sweep",
    "ols_robustness_regression",
    "covariate_value",
    "write_jsonl",
    "read_jsonl",
    "write_sweep_csv",
]

log = logging.getLogger(__name__)

REFERENCE_SAMPLE_SIZES = (100, 500, 1000, 5000, 10000)
REFERENCE_NOISE_LEVELS = (0.01, 0.02, 0.03, 0.04, 0.05)

# standard robustness models: (covariates, model class)
ROBUSTNESS_MODELS = {
    "model1": (("n_samples", "noise_pct"), "ml"),
    "model2": (("n_samples", "noise_pct"), "dl"),
    "model3": (("term_count", "nonlin_lr_std"), "ml"),
    "model4": (("term_count", "nonlin_lr_std"), "dl"),
    "model5": (("term_count", "nonlin_one_minus_r2"), "ml"),
    "model6": (("term_count", "nonlin_one_minus_r2"), "dl"),
}


class ZeroVariance(ValueError):
    pass


class EmptyResults(ValueError):
    pass


# -- non-linearity ------------------------------------------------------------

def _zero_variance(train: Dataset) -> bool:
    return float(np.std(train.y)) == 0.0


def nonlinearity_lr_std(train: Dataset) -> float:
    """Training RMSE of an OLS fit divided by the population std of ``y``.

    Defined as 0 for a constant target.
    """
    if _zero_variance(train):
        return 0.0
    model = fit_ols(train.X, train.y)
    return rmse(model.predict(train.X), train.y) / float(np.std(train.y))


def nonlinearity_one_minus_r2(train: Dataset) -> float:
    if _zero_variance(train):
        return 0.0
    model = fit_ols(train.X, train.y)
    return 1.0 - r_squared(model, train.X, train.y)


# -- significance and summaries ---------------------------------------------

def significance_test(improvements: Sequence[float]) -> float:
    """One-sided Wilcoxon signed-rank p-value for a positive median improvement."""
    return stats.wilcoxon_signed_rank(improvements, min_n=6)


def summarize_improvements(values: Sequence[float]) -> dict:
    v = np.asarray(list(values), dtype=np.float64)
    if v.size == 0:
        raise EmptyResults("no improvements to summarize")
    sentinel = np.isinf(v) & (v > 0)
    finite = v[np.isfinite(v)]
    return {
        "mean": float(finite.mean()) if finite.size else math.nan,
        "median": float(np.median(v)),
        "fraction_positive": float((v > 0).mean()),
        "sentinel_count": int(sentinel.sum()),
        "n": int(v.size),
    }


def summarize(results: Sequence) -> dict:
    """Per model class (``ml``, ``dl``) summary of relative improvements."""
    rows = [_as_dict(r) for r in results if not _is_failure(r)]
    if not rows:
        raise EmptyResults("no successful trials")
    return {cls: summarize_improvements([r[f"relative_improvement_{cls}"] for r in rows])
            for cls in ("ml", "dl")}


# -- experiment orchestration ------------------------------------------------

@dataclass(frozen=True)
class SyntheticSource:
    """Fresh random polynomial and dataset per repetition.

    The noise level is not part of the seed: sources that differ only in
    ``noise_fraction`` share the polynomial, the inputs and the standard
    normal draws, and the noise level just rescales the noise.
    """

    config: datagen.SyntheticConfig = field(default_factory=datagen.SyntheticConfig)

    def label(self) -> str:
        c = self.config
        return f"synthetic-n{c.n_samples}-noise{c.noise_fraction:g}"

    def seed_key(self, rep: int) -> str:
        return f"synthetic-n{self.config.n_samples}-rep{rep}"

    def build(self, rep: int, master_seed: int) -> tuple[str, Dataset]:
        c = self.config
        seed = [master_seed & 0xFFFFFFFFFFFFFFFF, c.rng_seed, c.n_samples, rep]
        rng = np.random.default_rng(seed)
        spec = datagen.random_polynomial(c, rng)
        ds = datagen.generate_dataset(spec, c.n_samples, c.noise_fraction, rng, c.feature_range)
        return f"{self.label()}-rep{rep}", ds


@dataclass(frozen=True)
class CsvSource:
    """One fixed dataset re-split with a new seed per repetition."""

    dataset: Dataset
    name: str = "csv"

    def label(self) -> str:
        return self.name

    def seed_key(self, rep: int) -> str:
        return self.name

    def build(self, rep: int, master_seed: int) -> tuple[str, Dataset]:
        return self.name, self.dataset


@dataclass
class TrialFailure:
    dataset_id: str
    split_seed: int
    error: str
    failed: bool = True

    def to_dict(self) -> dict:
        return {"dataset_id": self.dataset_id, "split_seed": self.split_seed,
                "error": self.error, "failed": True}


def _run_job(job) -> TrialResult | TrialFailure:
    source, rep, gp, parsimony, search, master_seed = job
    dataset_id = f"{source.label()}-rep{rep}"
    try:
        dataset_id, dataset = source.build(rep, master_seed)
        return run_paired_trial(dataset, rep, gp, parsimony, search, dataset_id=dataset_id,
                                master_seed=master_seed, seed_key=source.seed_key(rep))
    except Exception as exc:  # noqa: BLE001 - recorded, not dropped
        log.error("trial %s/%s failed: %s", dataset_id, rep, exc)
        return TrialFailure(dataset_id, rep, f"{type(exc).__name__}: {exc}\n"
                            + traceback.format_exc(limit=3))


def _run_jobs(jobs: list, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs))


def repeat_experiment(source, n_reps: int, gp_config: GpConfig | None = None,
                      parsimony_list: Sequence[float] = DEFAULT_PARSIMONY,
                      search_config: SearchConfig | None = None,
                      master_seed: int = 0, workers: int = 1) -> list:
    """``n_reps`` paired trials; repetition ``r`` uses split seed ``r``.

    Failed trials come back as :class:`TrialFailure` entries in place.
    """
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    gp_config = gp_config or GpConfig()
    search_config = search_config or SearchConfig()
    jobs = [(source, r, gp_config, tuple(parsimony_list), search_config, master_seed)
            for r in range(n_reps)]
    return _run_jobs(jobs, workers)


@dataclass
class SweepCell:
    n_samples: int
    noise_fraction: float
    repetitions: int
    trials: list = field(repr=False)

    @property
    def successful(self) -> list[TrialResult]:
        return [t for t in self.trials if not _is_failure(t)]

    @property
    def failed_count(self) -> int:
        return len(self.trials) - len(self.successful)

    def _summary(self, cls: str) -> dict:
        ok = self.successful
        if not ok:
            return {"mean": math.nan, "median": math.nan, "fraction_positive": math.nan,
                    "sentinel_count": 0, "n": 0}
        return summarize_improvements([getattr(t, f"relative_improvement_{cls}") for t in ok])

    @property
    def mean_improvement_ml(self) -> float:
        return self._summary("ml")["mean"]

    @property
    def mean_improvement_dl(self) -> float:
        return self._summary("dl")["mean"]

    @property
    def median_improvement_ml(self) -> float:
        return self._summary("ml")["median"]

    @property
    def median_improvement_dl(self) -> float:
        return self._summary("dl")["median"]

    @property
    def sentinels(self) -> int:
        return self._summary("ml")["sentinel_count"] + self._summary("dl")["sentinel_count"]

    def row(self) -> dict:
        return {"n": self.n_samples, "noise": self.noise_fraction,
                "mean_ml": self.mean_improvement_ml, "median_ml": self.median_improvement_ml,
                "mean_dl": self.mean_improvement_dl, "median_dl": self.median_improvement_dl,
                "reps": self.repetitions, "sentinels": self.sentinels,
                "failed": self.failed_count}


def sweep(sample_sizes: Sequence[int], noise_levels: Sequence[float], reps_per_cell: int,
          gp_config: GpConfig | None = None,
          parsimony_list: Sequence[float] = DEFAULT_PARSIMONY,
          search_config: SearchConfig | None = None,
          synthetic: datagen.SyntheticConfig | None = None,
          master_seed: int = 0, workers: int = 1) -> list[SweepCell]:
    """Grid of synthetic cells, sizes outer and noise levels inner."""
    if not sample_sizes or not noise_levels:
        raise ValueError("sweep axes must be non-empty")
    if reps_per_cell < 1:
        raise ValueError("reps_per_cell must be >= 1")
    gp_config = gp_config or GpConfig()
    search_config = search_config or SearchConfig()
    base = synthetic or datagen.SyntheticConfig()
    cells = []
    jobs = []
    for n in sample_sizes:
        for noise in noise_levels:
            cfg = datagen.SyntheticConfig(**{**base.__dict__, "n_samples": int(n),
                                             "noise_fraction": float(noise)})
            cells.append((int(n), float(noise)))
            jobs += [(SyntheticSource(cfg), r, gp_config, tuple(parsimony_list),
                      search_config, master_seed) for r in range(reps_per_cell)]
    results = _run_jobs(jobs, workers)
    out = []
    for i, (n, noise) in enumerate(cells):
        chunk = results[i * reps_per_cell:(i + 1) * reps_per_cell]
        out.append(SweepCell(n, noise, reps_per_cell, chunk))
    return out


# -- robustness regression ---------------------------------------------------

@dataclass
class RobustnessFit:
    covariates: list[str]
    coefficients: list[float]
    std_errors: list[float]
    p_values: list[float]
    r_squared: float
    n: int
    model: str = "ml"

    def coefficient(self, name: str) -> float:
        return self.coefficients[self.covariates.index(name)]

    def p_value(self, name: str) -> float:
        return self.p_values[self.covariates.index(name)]

    def to_dict(self) -> dict:
        return {"model": self.model, "covariates": self.covariates,
                "coefficients": self.coefficients, "std_errors": self.std_errors,
                "p_values": self.p_values, "r2": self.r_squared, "n": self.n}


def _as_dict(r) -> dict:
    if isinstance(r, dict):
        return r
    return r.to_dict() if hasattr(r, "to_dict") else dict(r.__dict__)


def _is_failure(r) -> bool:
    return isinstance(r, TrialFailure) or (isinstance(r, dict) and r.get("failed"))


def _improvement(value) -> float:
    if value == "inf":
        return math.inf
    return float(value)


def covariate_value(record: dict, name: str) -> float:
    """Covariate by name; ``noise_pct`` is the noise fraction in percent."""
    cov = record["covariates"]
    if name == "noise_pct":
        v = cov.get("noise_fraction")
        return math.nan if v is None else 100.0 * float(v)
    v = cov.get(name)
    return math.nan if v is None else float(v)


def ols_robustness_regression(results: Iterable, covariates: Sequence[str],
                              model: str = "ml") -> RobustnessFit:
    """OLS of relative improvement on trial covariates.

    ``model`` is ``"ml"``, ``"dl"`` or ``"pooled"``; pooled stacks both
    classes and adds a ``model_type_dl`` indicator.  Trials with infinite
    improvement or missing covariates are skipped.
    """
    if model not in ("ml", "dl", "pooled"):
        raise ValueError("model must be 'ml', 'dl' or 'pooled'")
    classes = ("ml", "dl") if model == "pooled" else (model,)
    rows, targets = [], []
    for r in results:
        if _is_failure(r):
            continue
        rec = _as_dict(r)
        base = [covariate_value(rec, c) for c in covariates]
        for cls in classes:
            y = _improvement(rec[f"relative_improvement_{cls}"])
            x = base + ([1.0 if cls == "dl" else 0.0] if model == "pooled" else [])
            if math.isfinite(y) and all(math.isfinite(v) for v in x):
                rows.append(x)
                targets.append(y)
    names = list(covariates) + (["model_type_dl"] if model == "pooled" else [])
    if len(rows) < len(names) + 2:
        raise TooFewSamples(f"need {len(names) + 2} usable trials, got {len(rows)}")
    fit = stats.ols_inference(np.array(rows), np.array(targets), names)
    return RobustnessFit(fit.names, fit.coefficients.tolist(), fit.std_errors.tolist(),
                         fit.p_values.tolist(), fit.r_squared, fit.n, model)


# -- file output -------------------------------------------------------------

def write_jsonl(results: Iterable, path: str | Path, header: dict | None = None) -> None:
    """One JSON object per line; an optional first line records the run config."""
    lines = []
    if header is not None:
        lines.append(json.dumps({"config": header}, sort_keys=True))
    for r in results:
        lines.append(json.dumps(_as_dict(r), sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n")


def read_jsonl(path: str | Path) -> tuple[dict | None, list[dict]]:
    header = None
    records = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        if "config" in obj and len(obj) == 1:
            header = obj["config"]
        else:
            records.append(obj)
    return header, records


def write_sweep_csv(cells: Sequence[SweepCell], path: str | Path) -> None:
    buf = io.StringIO()
    fields = ["n", "noise", "mean_ml", "median_ml", "mean_dl", "median_dl",
              "reps", "sentinels", "failed"]
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for cell in cells:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in cell.row().items()})
    Path(path).write_text(buf.getvalue())
