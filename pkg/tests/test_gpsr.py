import json
import math
from dataclasses import replace

import numpy as np
import pytest

from srfe.exprcore import add, const, depth, evaluate, mul, size, var
from srfe.gpsr import (
    EmptyDataset,
    GpConfig,
    NonFiniteInput,
    SrProgram,
    crossover,
    evolve,
    fit_sr_ensemble,
    hoist_mutation,
    init_population,
    penalized_fitness,
    point_mutation,
    raw_rmse,
    subtree_mutation,
    tournament_select,
)
from oracles import loop_rmse, random_expr

SMALL = GpConfig(population_size=60, generations=4, tournament_size=5)


def _xy(rng, n=80, m=2):
    X = rng.uniform(-2, 2, size=(n, m))
    y = X[:, 0] * X[:, 1] + 0.3 * X[:, 0]
    return X, y


class TestGpConfig:
    @pytest.mark.parametrize("kwargs", [
        {"p_crossover": 1.1},
        {"p_crossover": 0.9, "p_point_mutation": 0.2},
        {"init_depth_min": 0},
        {"init_depth_min": 5, "init_depth_max": 4},
        {"init_depth_max": 9, "max_depth": 8},
        {"population_size": 10, "tournament_size": 20},
        {"parsimony_coefficient": -1.0},
        {"function_set": ("add", "pow")},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            GpConfig(**kwargs)

    def test_defaults_valid(self):
        cfg = GpConfig()
        assert cfg.function_set == ("add", "sub", "mul", "pdiv")
        assert cfg.to_dict()["population_size"] == 1000


class TestFitness:
    def test_examples(self):
        X = np.zeros((4, 1))
        y = np.full(4, 2.0)
        e = add(var(0), mul(var(0), var(0)))  # predicts 0, rmse 2, size 5
        assert raw_rmse(e, X, y) == 2.0
        assert penalized_fitness(e, X, y, 0.0) == 2.0
        assert penalized_fitness(e, X, y, 0.01) == pytest.approx(2.05)

    def test_smaller_tree_wins_ties(self):
        X = np.ones((3, 1))
        y = np.zeros(3)
        small = add(var(0), var(0))
        big = add(add(var(0), var(0)), add(const(0), const(0)))
        assert raw_rmse(small, X, y) == raw_rmse(big, X, y)
        assert penalized_fitness(small, X, y, 0.01) < penalized_fitness(big, X, y, 0.01)

    def test_matches_loop_oracle(self, rng):
        X, y = _xy(rng)
        for _ in range(50):
            e = random_expr(rng, 2, 6)
            pred = [evaluate(e, r) for r in X]
            assert raw_rmse(e, X, y) == pytest.approx(loop_rmse(pred, y), rel=1e-12)

    def test_empty(self):
        with pytest.raises(EmptyDataset):
            penalized_fitness(var(0), np.zeros((0, 1)), np.zeros(0), 0.0)


class TestInitPopulation:
    def test_depth_bounds(self):
        cfg = GpConfig(population_size=10, tournament_size=2, init_depth_min=2, init_depth_max=4)
        pop = init_population(cfg, 3, rng=np.random.default_rng(0))
        assert len(pop) == 10
        assert all(2 <= depth(e) <= 4 for e in pop)

    def test_single_feature(self):
        pop = init_population(GpConfig(population_size=50, tournament_size=2), 1,
                              rng=np.random.default_rng(0))
        assert all(e.max_variable() <= 0 for e in pop)

    def test_deterministic(self):
        cfg = GpConfig(population_size=40, tournament_size=2)
        a = init_population(cfg, 3, rng=np.random.default_rng(9))
        b = init_population(cfg, 3, rng=np.random.default_rng(9))
        assert a == b

    def test_default_bounds_large(self):
        cfg = GpConfig(population_size=300, tournament_size=2)
        pop = init_population(cfg, 4)
        assert all(cfg.init_depth_min <= depth(e) <= cfg.init_depth_max for e in pop)
        assert all(e.max_variable() < 4 for e in pop)


class TestTournament:
    def test_candidate_subset(self):
        pop = [var(0), var(0), var(0)]
        assert tournament_select(pop, [3.0, 1.0, 2.0], 2, None, candidates=[0, 2]) == 2

    def test_full_tournament_is_argmin(self, rng):
        pop = [var(0)] * 8
        fit = rng.permutation(8).astype(float)
        idx = tournament_select(pop, fit, 8, None, candidates=np.arange(8))
        assert idx == int(np.argmin(fit))

    def test_tie_prefers_smaller_tree(self):
        pop = [add(var(0), var(0)), var(0)]
        assert tournament_select(pop, [1.0, 1.0], 2, None, candidates=[0, 1]) == 1

    def test_tie_prefers_lower_index(self):
        pop = [var(0), var(1), var(0)]
        assert tournament_select(pop, [1.0, 1.0, 1.0], 3, None, candidates=[2, 1]) == 1

    def test_k1_uniform(self):
        rng = np.random.default_rng(0)
        pop = [var(0)] * 4
        counts = np.bincount([tournament_select(pop, [0, 1, 2, 3], 1, rng) for _ in range(4000)],
                             minlength=4)
        assert counts.min() > 850


class TestOperators:
    def test_hoist_constant(self, rng):
        assert hoist_mutation(const(0.5), rng) == const(0.5)

    def test_crossover_root_with_itself(self):
        t = add(mul(var(0), var(1)), var(2))

        class RootPicker:
            def integers(self, lo, hi=None, size=None):
                return 0

        assert crossover(t, t, RootPicker()) == t

    def test_depth_limit_property(self):
        rng = np.random.default_rng(0)
        cfg = GpConfig(max_depth=6, init_depth_max=5)
        for i in range(1000):
            p1 = random_expr(rng, 3, 6)
            p2 = random_expr(rng, 3, 6)
            op = i % 4
            if op == 0:
                child = crossover(p1, p2, rng, max_depth=cfg.max_depth)
            elif op == 1:
                child = subtree_mutation(p1, cfg, rng, n_features=3)
            elif op == 2:
                child = hoist_mutation(p1, rng, max_depth=cfg.max_depth)
            else:
                child = point_mutation(p1, cfg, rng, n_features=3)
            assert depth(child) <= cfg.max_depth

    def test_hoist_never_grows(self, rng):
        for _ in range(200):
            p = random_expr(rng, 3, 6)
            assert size(hoist_mutation(p, rng)) <= size(p)

    def test_point_mutation_keeps_shape(self, rng):
        for _ in range(200):
            p = random_expr(rng, 3, 6)
            child = point_mutation(p, SMALL, rng, n_features=3)
            assert size(child) == size(p)
            for a, b in zip(p.nodes, child.nodes):
                assert getattr(a, "arity", 0) == getattr(b, "arity", 0)


class TestEvolve:
    def test_recovers_identity(self):
        rng = np.random.default_rng(0)
        X = rng.uniform(-2, 2, size=(200, 2))
        hits = 0
        for seed in range(10):
            prog = evolve(X, X[:, 0], GpConfig(rng_seed=seed))
            hits += prog.train_rmse <= 1e-9
        assert hits >= 8

    def test_zero_generations(self, rng):
        X, y = _xy(rng)
        cfg = GpConfig(population_size=30, generations=0, tournament_size=3)
        seen = []
        prog = evolve(X, y, cfg, callback=lambda g, pop, r: seen.append(r.copy()))
        assert len(seen) == 1
        assert prog.train_rmse == seen[0].min()
        assert prog.generation_found == 0

    def test_deterministic(self, rng):
        X, y = _xy(rng)
        a = evolve(X, y, SMALL)
        b = evolve(X, y, SMALL)
        assert a == b

    def test_best_over_whole_run(self, rng):
        X, y = _xy(rng)
        per_gen = []
        prog = evolve(X, y, SMALL, callback=lambda g, pop, r: per_gen.append(r.min()))
        assert prog.train_rmse == min(per_gen)
        assert all(np.diff(prog.history) <= 0)
        assert prog.train_rmse <= per_gen[-1]

    def test_recompute_rmse(self, rng):
        X, y = _xy(rng)
        prog = evolve(X, y, SMALL)
        assert prog.recompute_rmse(X, y) == pytest.approx(prog.train_rmse, rel=1e-12)

    def test_population_respects_depth(self, rng):
        X, y = _xy(rng)
        depths = []
        evolve(X, y, SMALL, callback=lambda g, pop, r: depths.extend(depth(e) for e in pop))
        assert max(depths) <= SMALL.max_depth

    def test_errors(self):
        with pytest.raises(EmptyDataset):
            evolve(np.zeros((0, 2)), np.zeros(0), SMALL)
        X = np.ones((5, 2))
        X[1, 1] = np.nan
        with pytest.raises(NonFiniteInput):
            evolve(X, np.ones(5), SMALL)

    def test_json_fields(self, rng):
        X, y = _xy(rng)
        d = json.loads(evolve(X, y, SMALL).to_json())
        assert set(d) >= {"formula_infix", "formula_prefix", "parsimony", "train_rmse",
                          "generation_found", "size", "depth"}
        back = SrProgram.from_dict(d)
        assert math.isclose(back.recompute_rmse(X, y), d["train_rmse"], rel_tol=1e-9)


class TestEnsemble:
    def test_order_and_coefficients(self, rng):
        X, y = _xy(rng)
        progs = fit_sr_ensemble(X, y, (0.001, 0.01, 0.1), SMALL)
        assert [p.parsimony_coefficient for p in progs] == [0.001, 0.01, 0.1]

    def test_singleton_equals_evolve(self, rng):
        X, y = _xy(rng)
        (only,) = fit_sr_ensemble(X, y, [0.05], SMALL)
        assert only == evolve(X, y, replace(SMALL, parsimony_coefficient=0.05))

    def test_empty_list(self, rng):
        X, y = _xy(rng)
        with pytest.raises(ValueError):
            fit_sr_ensemble(X, y, [], SMALL)

    def test_parsimony_shrinks_trees(self):
        rng = np.random.default_rng(7)
        X = rng.uniform(-2, 2, size=(100, 3))
        y = X[:, 0] ** 2 * X[:, 1] + X[:, 2] + rng.normal(0, 0.3, 100)
        cfg = GpConfig(population_size=150, generations=8, tournament_size=7)
        low, high = [], []
        for seed in range(20):
            a, b = fit_sr_ensemble(X, y, (0.001, 0.5), replace(cfg, rng_seed=seed))
            low.append(a.size)
            high.append(b.size)
        assert np.median(high) <= np.median(low)
