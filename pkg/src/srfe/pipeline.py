"""SR feature augmentation and paired baseline-vs-augmented trials."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import datagen
from .exprcore import evaluate_batch, to_infix_string
from .gpsr import DEFAULT_PARSIMONY, GpConfig, SrProgram, fit_sr_ensemble
from .learners import (
    DL_GRID,
    ML_GRID,
    Candidate,
    Dataset,
    LearnerError,
    fit_ols,
    make_folds,
    model_search,
    r_squared,
    rmse,
)

__all__ = [
    "MIN_TRIAL_ROWS",
    "TEST_FRACTION",
    "SearchConfig",
    "TrialResult",
    "TooFewRowsForTrial",
    "augment_with_sr",
    "relative_performance",
    "split_indices",
    "trial_seed",
    "run_paired_trial",
    "format_report",
]

log = logging.getLogger(__name__)

MIN_TRIAL_ROWS = 25
TEST_FRACTION = 0.2
# test RMSEs below this fraction of the target scale are round-off and count as 0
RMSE_RESOLUTION = 1e-12


class TooFewRowsForTrial(ValueError):
    pass


@dataclass(frozen=True)
class SearchConfig:
    """Settings for the two proxy searches (``proxy_ml`` and ``proxy_dl``)."""

    cv_folds: int = 5
    budget: int = 24
    ml_grid: tuple[Candidate, ...] = ML_GRID
    dl_grid: tuple[Candidate, ...] = DL_GRID
    # append every ensemble program, or only the lowest-train-RMSE one
    sr_mode: str = "all"

    def __post_init__(self):
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be >= 2")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.sr_mode not in ("all", "best"):
            raise ValueError("sr_mode must be 'all' or 'best'")

    def to_dict(self) -> dict:
        return {"cv_folds": self.cv_folds, "budget": self.budget, "sr_mode": self.sr_mode,
                "proxy_ml": [list(c) for c in self.ml_grid],
                "proxy_dl": [list(c) for c in self.dl_grid]}


@dataclass
class TrialResult:
    dataset_id: str
    split_seed: int
    baseline_rmse_ml: float
    augmented_rmse_ml: float
    baseline_rmse_dl: float
    augmented_rmse_dl: float
    relative_improvement_ml: float
    relative_improvement_dl: float
    sr_reports: list[dict]
    covariates: dict
    sr_failed: bool = False
    # extra test-split diagnostics for the per-trial report
    lr_rmse: float | None = None
    sr_rmse: float | None = None
    noise_rmse: float | None = None
    true_polynomial: str | None = None
    models: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, allow_nan=True)

    @classmethod
    def from_dict(cls, d: dict) -> TrialResult:
        d = dict(d)
        for key in ("relative_improvement_ml", "relative_improvement_dl"):
            if d.get(key) == "inf":
                d[key] = math.inf
        return cls(**d)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    return obj


def augment_with_sr(X_train, X_test, programs: Sequence[SrProgram]):
    """Append one column per program to both matrices, originals first."""
    X_train = np.asarray(X_train, dtype=np.float64)
    X_test = np.asarray(X_test, dtype=np.float64)
    if not programs:
        return X_train, X_test
    extra_train = np.column_stack([evaluate_batch(p.expr, X_train) for p in programs])
    extra_test = np.column_stack([evaluate_batch(p.expr, X_test) for p in programs])
    return np.hstack([X_train, extra_train]), np.hstack([X_test, extra_test])


def relative_performance(baseline_rmse: float, augmented_rmse: float) -> float:
    """``(baseline / augmented - 1) * 100``; +inf when the augmented RMSE is zero.

    Positive values favour the augmented model.  A zero baseline against a
    zero augmented RMSE counts as no change.
    """
    if augmented_rmse < 0 or baseline_rmse < 0:
        raise ValueError("RMSE values must be nonnegative")
    if augmented_rmse == 0.0:
        return 0.0 if baseline_rmse == 0.0 else math.inf
    return (baseline_rmse / augmented_rmse - 1.0) * 100.0


def _key(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


def trial_seed(master_seed: int, dataset_id: str, split_seed: int, purpose: str) -> list[int]:
    """Seed material for one random stream of one trial."""
    return [master_seed & 0xFFFFFFFFFFFFFFFF, _key(dataset_id), split_seed, _key(purpose)]


def split_indices(n: int, rng: np.random.Generator, test_fraction: float = TEST_FRACTION):
    perm = rng.permutation(n)
    n_test = max(1, int(round(n * test_fraction)))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def _nonlinearity(X, y) -> tuple[float, float]:
    # local import: harness depends on this module
    from .harness import nonlinearity_lr_std, nonlinearity_one_minus_r2
    train = Dataset(X, y, [f"f{j}" for j in range(X.shape[1])])
    try:
        return nonlinearity_lr_std(train), nonlinearity_one_minus_r2(train)
    except LearnerError as exc:
        log.warning("non-linearity covariates unavailable: %s", exc)
        return math.nan, math.nan


def run_paired_trial(dataset: Dataset, split_seed: int, gp_config: GpConfig | None = None,
                     parsimony_list: Sequence[float] = DEFAULT_PARSIMONY,
                     search_config: SearchConfig | None = None,
                     dataset_id: str = "dataset", master_seed: int = 0,
                     seed_key: str | None = None) -> TrialResult:
    """One paired trial: baseline and SR-augmented proxy models on a shared split.

    Random streams are keyed by ``seed_key`` (default ``dataset_id``), so
    trials that share a key share their split and SR seeds.
    """
    gp_config = gp_config or GpConfig()
    search_config = search_config or SearchConfig()
    if dataset.n < MIN_TRIAL_ROWS:
        raise TooFewRowsForTrial(f"need at least {MIN_TRIAL_ROWS} rows, got {dataset.n}")

    def stream(purpose: str) -> list[int]:
        return trial_seed(master_seed, seed_key or dataset_id, split_seed, purpose)

    train_idx, test_idx = split_indices(dataset.n, np.random.default_rng(stream("split")))
    X_tr, y_tr = dataset.X[train_idx], dataset.y[train_idx]
    X_te, y_te = dataset.X[test_idx], dataset.y[test_idx]

    gp_seed = int(np.random.SeedSequence(stream("sr")).generate_state(1, np.uint64)[0])
    gp = replace(gp_config, rng_seed=gp_seed)
    sr_failed = False
    try:
        programs = fit_sr_ensemble(X_tr, y_tr, list(parsimony_list), gp)
    except Exception as exc:  # noqa: BLE001 - any SR failure degrades to baseline
        log.warning("SR fit failed on %s/%s: %s", dataset_id, split_seed, exc)
        programs, sr_failed = [], True

    appended = programs
    if programs and search_config.sr_mode == "best":
        appended = [min(programs, key=lambda p: p.train_rmse)]
    Xa_tr, Xa_te = augment_with_sr(X_tr, X_te, appended)
    if not (np.isfinite(Xa_tr).all() and np.isfinite(Xa_te).all()):
        Xa_tr, Xa_te, sr_failed = X_tr, X_te, True

    folds = make_folds(len(train_idx), search_config.cv_folds,
                       np.random.default_rng(stream("folds")))
    names = list(dataset.feature_names)
    base_train = Dataset(X_tr, y_tr, names)
    aug_train = Dataset(Xa_tr, y_tr, names + [f"sr{j}" for j in range(Xa_tr.shape[1] - len(names))])
    search_seed = int(np.random.SeedSequence(stream("search")).generate_state(1)[0])

    # scale for the round-off floor; 1.0 keeps a constant target meaningful
    floor = RMSE_RESOLUTION * (float(np.std(y_tr)) or 1.0)
    scores = {}
    models = {}
    for proxy, grid in (("ml", search_config.ml_grid), ("dl", search_config.dl_grid)):
        for variant, train, X_eval in (("baseline", base_train, X_te), ("augmented", aug_train, Xa_te)):
            model = model_search(train, search_config.cv_folds, search_config.budget,
                                 search_seed, grid, folds=folds)
            score = rmse(model.predict(X_eval), y_te)
            scores[proxy, variant] = 0.0 if score <= floor else score
            models[f"{variant}_{proxy}"] = model.summary()

    lr = fit_ols(X_tr, y_tr, allow_rank_deficient=True)
    lr_rmse = rmse(lr.predict(X_te), y_te)
    sr_rmse = None
    if programs:
        best = min(programs, key=lambda p: p.train_rmse)
        sr_rmse = rmse(evaluate_batch(best.expr, X_te), y_te)

    nl_std, nl_r2 = _nonlinearity(X_tr, y_tr)
    info = dataset.info or {}
    covariates = {
        "n_samples": dataset.n,
        "noise_fraction": info.get("sigma_rel"),
        "term_count": info.get("term_count"),
        "nonlin_lr_std": nl_std,
        "nonlin_one_minus_r2": nl_r2,
    }
    noise_rmse = None
    true_poly = None
    if dataset.y_clean is not None:
        noise_rmse = rmse(dataset.y_clean[test_idx], y_te)
    if "polynomial" in info:
        true_poly = str(datagen.PolynomialSpec.from_dict(info["polynomial"]))

    return TrialResult(
        dataset_id=dataset_id,
        split_seed=split_seed,
        baseline_rmse_ml=scores["ml", "baseline"],
        augmented_rmse_ml=scores["ml", "augmented"],
        baseline_rmse_dl=scores["dl", "baseline"],
        augmented_rmse_dl=scores["dl", "augmented"],
        relative_improvement_ml=relative_performance(scores["ml", "baseline"], scores["ml", "augmented"]),
        relative_improvement_dl=relative_performance(scores["dl", "baseline"], scores["dl", "augmented"]),
        sr_reports=[p.to_dict() for p in programs],
        covariates=covariates,
        sr_failed=sr_failed,
        lr_rmse=lr_rmse,
        sr_rmse=sr_rmse,
        noise_rmse=noise_rmse,
        true_polynomial=true_poly,
        models=models,
        config={"master_seed": master_seed, "gp": gp_config.to_dict(),
                "parsimony_list": list(parsimony_list), "search": search_config.to_dict(),
                "function_set": list(gp_config.function_set), "proxies": ["proxy_ml", "proxy_dl"]},
    )


def _fmt(v) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return f"{v:.6g}"


def format_report(result: TrialResult) -> str:
    """Plain-text report with one row per quantity."""
    best = None
    if result.sr_reports:
        best = min(result.sr_reports, key=lambda r: r["train_rmse"])
    rows = [
        ("True polynomial", result.true_polynomial or "n/a"),
        ("Fitted SR", best["formula_infix"] if best else "n/a (SR failed)"),
        ("Baseline - true polynomial RMSE (noise only)", _fmt(result.noise_rmse)),
        ("LR RMSE", _fmt(result.lr_rmse)),
        ("SR RMSE", _fmt(result.sr_rmse)),
        ("proxy_ml RMSE", _fmt(result.baseline_rmse_ml)),
        ("SR + proxy_ml RMSE", _fmt(result.augmented_rmse_ml)),
        ("proxy_dl RMSE", _fmt(result.baseline_rmse_dl)),
        ("SR + proxy_dl RMSE", _fmt(result.augmented_rmse_dl)),
        ("Relative improvement ml (%)", _fmt(result.relative_improvement_ml)),
        ("Relative improvement dl (%)", _fmt(result.relative_improvement_dl)),
    ]
    width = max(len(label) for label, _ in rows)
    head = f"Trial {result.dataset_id} (split seed {result.split_seed})"
    lines = [head, "-" * max(len(head), width + 20)]
    lines += [f"{label.ljust(width)}  {value}" for label, value in rows]
    return "\n".join(lines) + "\n"
