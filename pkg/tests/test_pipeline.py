import json
import math

import numpy as np
import pytest

from srfe import pipeline
from srfe.datagen import PolynomialSpec, generate_dataset
from srfe.exprcore import VariableOutOfRange, const, var
from srfe.gpsr import GpConfig, SrProgram
from srfe.learners import Dataset
from srfe.pipeline import (
    SearchConfig,
    TooFewRowsForTrial,
    TrialResult,
    augment_with_sr,
    format_report,
    relative_performance,
    run_paired_trial,
    split_indices,
    trial_seed,
)

FAST_GP = GpConfig(population_size=80, generations=5, tournament_size=5)
FAST_SEARCH = SearchConfig(cv_folds=3, budget=4)

# x1^3*x2^3 + x3^3 + x1^3 with 0-based indices
REFERENCE_POLY = PolynomialSpec(3, ((1.0, (3, 3, 0)), (1.0, (0, 0, 3)), (1.0, (3, 0, 0))))


def _program(expr):
    return SrProgram(expr=expr, train_rmse=0.0, parsimony_coefficient=0.0, generation_found=0)


def _poly_dataset(n=120, noise=0.05, seed=0, spec=REFERENCE_POLY):
    d = generate_dataset(spec, n, noise, np.random.default_rng(seed))
    return d


class TestRelativePerformance:
    @pytest.mark.parametrize("base, aug, expected", [
        (0.99, 0.79, 25.316),
        (0.70, 0.36, 94.444),
        (1.0, 1.0, 0.0),
    ])
    def test_examples(self, base, aug, expected):
        assert relative_performance(base, aug) == pytest.approx(expected, abs=1e-3)

    def test_sign_property(self, rng):
        for b, a in rng.uniform(0.01, 10, size=(200, 2)):
            assert (relative_performance(b, a) > 0) == (b > a)

    def test_zero_augmented_is_sentinel(self):
        assert relative_performance(1.0, 0.0) == math.inf
        assert relative_performance(0.0, 0.0) == 0.0

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            relative_performance(-1.0, 1.0)


class TestAugment:
    def test_shape_and_originals(self, rng):
        Xtr, Xte = rng.normal(size=(10, 3)), rng.normal(size=(4, 3))
        a, b = augment_with_sr(Xtr, Xte, [_program(var(0)), _program(const(1))])
        assert a.shape == (10, 5) and b.shape == (4, 5)
        np.testing.assert_array_equal(a[:, :3], Xtr)
        np.testing.assert_array_equal(b[:, :3], Xte)

    def test_constant_and_identity(self, rng):
        Xtr, Xte = rng.normal(size=(6, 2)), rng.normal(size=(3, 2))
        a, b = augment_with_sr(Xtr, Xte, [_program(const(1)), _program(var(0))])
        np.testing.assert_array_equal(a[:, 2], 1.0)
        np.testing.assert_array_equal(a[:, 3], Xtr[:, 0])
        np.testing.assert_array_equal(b[:, 3], Xte[:, 0])

    def test_no_programs(self, rng):
        Xtr, Xte = rng.normal(size=(6, 2)), rng.normal(size=(3, 2))
        a, b = augment_with_sr(Xtr, Xte, [])
        np.testing.assert_array_equal(a, Xtr)
        np.testing.assert_array_equal(b, Xte)

    def test_variable_out_of_range(self, rng):
        with pytest.raises(VariableOutOfRange):
            augment_with_sr(rng.normal(size=(4, 2)), rng.normal(size=(2, 2)), [_program(var(5))])

    def test_row_permutation_equivariance(self, rng):
        Xtr, Xte = rng.normal(size=(8, 2)), rng.normal(size=(5, 2))
        prog = [_program(var(1))]
        perm = rng.permutation(5)
        _, b = augment_with_sr(Xtr, Xte, prog)
        _, bp = augment_with_sr(Xtr, Xte[perm], prog)
        np.testing.assert_array_equal(bp, b[perm])


class TestSplit:
    def test_sizes(self):
        tr, te = split_indices(100, np.random.default_rng(0))
        assert len(tr) == 80 and len(te) == 20
        assert set(tr).isdisjoint(te) and len(set(tr) | set(te)) == 100

    def test_seed_material_differs_by_purpose(self):
        assert trial_seed(0, "d", 1, "split") != trial_seed(0, "d", 1, "sr")
        assert trial_seed(0, "d", 1, "split") == trial_seed(0, "d", 1, "split")


class TestRunPairedTrial:
    def test_too_few_rows(self, rng):
        d = Dataset(rng.normal(size=(20, 2)), rng.normal(size=20), ["a", "b"])
        with pytest.raises(TooFewRowsForTrial):
            run_paired_trial(d, 0, FAST_GP, (0.01,), FAST_SEARCH)

    def test_linear_noiseless(self, rng):
        X = rng.uniform(-2, 2, size=(100, 2))
        d = Dataset(X, X[:, 0].copy(), ["x0", "x1"])
        r = run_paired_trial(d, 0, FAST_GP, (0.001,), FAST_SEARCH)
        assert r.baseline_rmse_ml == 0.0
        assert r.augmented_rmse_ml == 0.0
        assert r.relative_improvement_ml == 0.0

    def test_deterministic(self):
        d = _poly_dataset()
        a = run_paired_trial(d, 3, FAST_GP, (0.001, 0.1), FAST_SEARCH, dataset_id="x")
        b = run_paired_trial(d, 3, FAST_GP, (0.001, 0.1), FAST_SEARCH, dataset_id="x")
        assert a.to_json() == b.to_json()

    def test_fields_and_recomputation(self):
        r = run_paired_trial(_poly_dataset(), 0, FAST_GP, (0.001, 0.01, 0.1), FAST_SEARCH)
        assert len(r.sr_reports) == 3
        for cls in ("ml", "dl"):
            base = getattr(r, f"baseline_rmse_{cls}")
            aug = getattr(r, f"augmented_rmse_{cls}")
            assert getattr(r, f"relative_improvement_{cls}") == relative_performance(base, aug)
        assert set(r.covariates) == {"n_samples", "noise_fraction", "term_count",
                                     "nonlin_lr_std", "nonlin_one_minus_r2"}
        assert r.covariates["nonlin_lr_std"] ** 2 == pytest.approx(
            r.covariates["nonlin_one_minus_r2"], rel=1e-10)
        assert r.covariates["term_count"] == 3
        assert r.true_polynomial == "x0^3*x1^3 + x2^3 + x0^3"

    def test_best_mode_appends_one(self):
        d = _poly_dataset()
        all_mode = run_paired_trial(d, 0, FAST_GP, (0.001, 0.1), FAST_SEARCH)
        best = run_paired_trial(d, 0, FAST_GP, (0.001, 0.1),
                                SearchConfig(cv_folds=3, budget=4, sr_mode="best"))
        assert all_mode.sr_reports == best.sr_reports
        assert all_mode.baseline_rmse_ml == best.baseline_rmse_ml

    def test_json_roundtrip(self):
        r = run_paired_trial(_poly_dataset(), 0, FAST_GP, (0.01,), FAST_SEARCH)
        back = TrialResult.from_dict(json.loads(r.to_json()))
        assert back.to_json() == r.to_json()

    def test_sr_failure_falls_back(self, monkeypatch):
        def boom(*a, **k):
            raise RuntimeError("no SR today")

        monkeypatch.setattr(pipeline, "fit_sr_ensemble", boom)
        r = run_paired_trial(_poly_dataset(), 0, FAST_GP, (0.01,), FAST_SEARCH)
        assert r.sr_failed
        assert r.sr_reports == []
        assert r.augmented_rmse_ml == r.baseline_rmse_ml
        assert r.relative_improvement_dl == 0.0

    def test_no_test_leakage(self):
        d = _poly_dataset(n=150)
        kwargs = dict(gp_config=FAST_GP, parsimony_list=(0.001, 0.1), search_config=FAST_SEARCH,
                      dataset_id="leak", master_seed=4)
        ref = run_paired_trial(d, 2, **kwargs)
        _, test_idx = split_indices(d.n, np.random.default_rng(trial_seed(4, "leak", 2, "split")))
        y = d.y.copy()
        y[test_idx] = 1e6 * np.random.default_rng(0).normal(size=len(test_idx))
        bad = run_paired_trial(Dataset(d.X, y, d.feature_names, d.y_clean, d.info), 2, **kwargs)
        assert bad.sr_reports == ref.sr_reports
        assert bad.models == ref.models
        assert bad.covariates == ref.covariates
        assert bad.baseline_rmse_ml != ref.baseline_rmse_ml

    def test_report_layout(self):
        r = run_paired_trial(_poly_dataset(), 0, FAST_GP, (0.01,), FAST_SEARCH, dataset_id="demo")
        text = format_report(r)
        for label in ("True polynomial", "Fitted SR", "Baseline - true polynomial RMSE",
                      "LR RMSE", "SR RMSE", "proxy_ml RMSE", "SR + proxy_ml RMSE",
                      "proxy_dl RMSE", "SR + proxy_dl RMSE"):
            assert label in text


@pytest.mark.slow
def test_reference_polynomial_favours_augmentation():
    d = generate_dataset(REFERENCE_POLY, 5000, 0.05, np.random.default_rng(2024))
    gp = GpConfig(population_size=500, generations=20)
    wins = 0
    for seed in range(20):
        r = run_paired_trial(d, seed, gp, (0.001, 0.01, 0.1), SearchConfig(), dataset_id="t1")
        wins += r.augmented_rmse_ml <= r.baseline_rmse_ml
    assert wins >= 12
