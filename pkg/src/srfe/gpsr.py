"""Genetic-programming symbolic regression.

A gplearn-style engine: ramped half-and-half initialization, tournament
selection on parsimony-penalized RMSE, crossover plus subtree, hoist and point
mutation, and one elite carried over per generation.  The engine remembers the
lowest raw training RMSE seen in *any* generation and returns that program,
which need not belong to the final population.

Every stochastic choice for offspring ``i`` of generation ``g`` comes from a
Philox counter-based generator keyed by ``(rng_seed, stream)`` with counter
``(g, i)``, so results do not depend on evaluation order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .exprcore import (
    DEFAULT_FUNCTION_SET,
    Constant,
    Expr,
    FunctionOp,
    Variable,
    depth,
    _eval_columns,
    evaluate_batch,
    get_function,
    parse_prefix,
    size,
    subtree_end,
    to_infix_string,
    to_prefix_string,
)

__all__ = [
    "GpConfig",
    "SrProgram",
    "EmptyDataset",
    "NonFiniteInput",
    "POINT_REPLACE_PROB",
    "DEFAULT_PARSIMONY",
    "raw_rmse",
    "penalized_fitness",
    "init_population",
    "random_tree",
    "selection_ranks",
    "tournament_select",
    "crossover",
    "subtree_mutation",
    "hoist_mutation",
    "point_mutation",
    "evolve",
    "fit_sr_ensemble",
]

POINT_REPLACE_PROB = 0.05
DEFAULT_PARSIMONY = (0.001, 0.01, 0.1)


class EmptyDataset(ValueError):
    pass


class NonFiniteInput(ValueError):
    pass


@dataclass(frozen=True)
class GpConfig:
    population_size: int = 1000
    generations: int = 30
    tournament_size: int = 20
    p_crossover: float = 0.9
    p_subtree_mutation: float = 0.01
    p_hoist_mutation: float = 0.01
    p_point_mutation: float = 0.01
    init_depth_min: int = 2
    init_depth_max: int = 6
    max_depth: int = 8
    parsimony_coefficient: float = 0.001
    constant_range: tuple[float, float] = (-1.0, 1.0)
    function_set: tuple[str, ...] = DEFAULT_FUNCTION_SET
    rng_seed: int = 0
    # stop once the best raw RMSE is at or below this value (gplearn's
    # stopping_criteria); 0.0 only triggers on an exact fit
    stopping_rmse: float = 0.0

    def __post_init__(self):
        probs = (self.p_crossover, self.p_subtree_mutation,
                 self.p_hoist_mutation, self.p_point_mutation)
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ValueError("operator probabilities must lie in [0, 1]")
        if sum(probs) > 1.0 + 1e-12:
            raise ValueError("operator probabilities must sum to at most 1")
        if not 1 <= self.init_depth_min <= self.init_depth_max <= self.max_depth:
            raise ValueError("need 1 <= init_depth_min <= init_depth_max <= max_depth")
        if not self.population_size >= self.tournament_size >= 1:
            raise ValueError("need population_size >= tournament_size >= 1")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        if self.parsimony_coefficient < 0:
            raise ValueError("parsimony_coefficient must be nonnegative")
        lo, hi = self.constant_range
        if not lo <= hi:
            raise ValueError("constant_range must be (low, high) with low <= high")
        if not self.function_set:
            raise ValueError("function_set must not be empty")
        for symbol in self.function_set:
            get_function(symbol)
        object.__setattr__(self, "function_set", tuple(self.function_set))
        object.__setattr__(self, "constant_range", (float(lo), float(hi)))

    @property
    def functions(self) -> tuple[FunctionOp, ...]:
        return tuple(get_function(s) for s in self.function_set)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["constant_range"] = list(self.constant_range)
        d["function_set"] = list(self.function_set)
        return d


@dataclass(frozen=True)
class SrProgram:
    expr: Expr
    train_rmse: float
    parsimony_coefficient: float
    generation_found: int
    # best-so-far raw RMSE after each generation (index 0 = initial population)
    history: tuple[float, ...] = field(default=(), compare=False)

    @property
    def size(self) -> int:
        return size(self.expr)

    @property
    def depth(self) -> int:
        return depth(self.expr)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return evaluate_batch(self.expr, X)

    def recompute_rmse(self, X: np.ndarray, y: np.ndarray) -> float:
        return raw_rmse(self.expr, X, y)

    def to_dict(self) -> dict:
        return {
            "formula_infix": to_infix_string(self.expr),
            "formula_prefix": to_prefix_string(self.expr),
            "parsimony": self.parsimony_coefficient,
            "train_rmse": self.train_rmse,
            "generation_found": self.generation_found,
            "size": self.size,
            "depth": self.depth,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> SrProgram:
        return cls(
            expr=parse_prefix(d["formula_prefix"]),
            train_rmse=float(d["train_rmse"]),
            parsimony_coefficient=float(d["parsimony"]),
            generation_found=int(d["generation_found"]),
        )


def _check_data(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"X must be 2-D, got shape {X.shape}")
    if X.shape[0] == 0 or y.size == 0:
        raise EmptyDataset("training data has no rows")
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise NonFiniteInput("training data contains NaN or infinite values")
    return X, y


def raw_rmse(expr: Expr, X: np.ndarray, y: np.ndarray) -> float:
    resid = evaluate_batch(expr, X) - y
    return math.sqrt(float(np.mean(resid * resid)))


def _fast_rmse(nodes: tuple, X: np.ndarray, y: np.ndarray) -> float:
    # evolve() has validated X and set np.errstate already
    resid = _eval_columns(nodes, X) - y
    return math.sqrt(float(resid @ resid) / len(y))


def penalized_fitness(expr: Expr, X, y, c: float) -> float:
    """Raw RMSE plus ``c`` times the node count.  Lower is better."""
    X, y = _check_data(X, y)
    return raw_rmse(expr, X, y) + c * size(expr)


# -- tree construction -------------------------------------------------------

def _random_terminal(rng: np.random.Generator, n_features: int,
                     constant_range: tuple[float, float]):
    # one slot per variable plus one for a constant, as gplearn does
    k = int(rng.integers(n_features + 1))
    if k == n_features:
        return Constant(rng.uniform(*constant_range))
    return Variable(k)


def random_tree(rng: np.random.Generator, n_features: int, functions: Sequence[FunctionOp],
                min_depth: int, max_depth: int, method: str,
                constant_range: tuple[float, float] = (-1.0, 1.0)) -> Expr:
    """Build a tree with ``min_depth <= depth <= max_depth``.

    ``method`` is ``"full"`` (functions until ``max_depth``) or ``"grow"``
    (functions until ``min_depth``, then functions or terminals at random).
    """
    if method not in ("full", "grow"):
        raise ValueError(f"unknown init method {method!r}")
    n_funcs = len(functions)
    nodes = []
    # stack of node depths still to fill
    todo = [1]
    while todo:
        d = todo.pop()
        if d >= max_depth:
            make_function = False
        elif d < min_depth or method == "full":
            make_function = True
        else:
            make_function = rng.integers(n_funcs + n_features + 1) < n_funcs
        if make_function:
            op = functions[int(rng.integers(n_funcs))]
            nodes.append(op)
            todo.extend([d + 1] * op.arity)
        else:
            nodes.append(_random_terminal(rng, n_features, constant_range))
    return Expr.trusted(tuple(nodes))


def _ramped_tree(rng: np.random.Generator, config: GpConfig, n_features: int) -> Expr:
    target = int(rng.integers(config.init_depth_min, config.init_depth_max + 1))
    method = "full" if rng.random() < 0.5 else "grow"
    return random_tree(rng, n_features, config.functions, config.init_depth_min,
                       target, method, config.constant_range)


def init_population(config: GpConfig, m: int, rng: np.random.Generator | None = None,
                    stream: int = 0) -> list[Expr]:
    """Ramped half-and-half population of ``config.population_size`` trees.

    When ``rng`` is None each tree gets a generator keyed by its index.
    """
    if m < 1:
        raise ValueError("need at least one feature")
    out = []
    key = _philox_key(config.rng_seed, stream)
    for i in range(config.population_size):
        r = rng if rng is not None else _keyed_rng(config.rng_seed, stream, 0, i, key)
        out.append(_ramped_tree(r, config, m))
    return out


def _philox_key(seed: int, stream: int) -> np.ndarray:
    return np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, stream]).generate_state(2, np.uint64)


def _keyed_rng(seed: int, stream: int, generation: int, index: int,
               key: np.ndarray | None = None) -> np.random.Generator:
    """Counter-based stream for one offspring; ``key`` caches the run key."""
    if key is None:
        key = _philox_key(seed, stream)
    return np.random.Generator(np.random.Philox(key=key, counter=[0, index, generation, 0]))


# -- selection and variation ---------------------------------------------------

def selection_ranks(population: Sequence[Expr], fitnesses) -> np.ndarray:
    """Rank of each individual under (fitness, size, index) ordering."""
    n = len(population)
    sizes = np.array([len(e.nodes) for e in population])
    order = np.lexsort((np.arange(n), sizes, np.asarray(fitnesses, dtype=np.float64)))
    ranks = np.empty(n, dtype=np.intp)
    ranks[order] = np.arange(n)
    return ranks


def tournament_select(population: Sequence[Expr], fitnesses, k: int,
                      rng: np.random.Generator, candidates=None, ranks=None) -> int:
    """Index of the best of ``k`` contestants drawn with replacement.

    Ties on fitness go to the smaller tree, then to the lower index.
    ``candidates`` overrides the random draw (used in tests); ``ranks`` is
    :func:`selection_ranks` precomputed once per generation.
    """
    if candidates is None:
        candidates = rng.integers(0, len(population), size=k)
    c = np.asarray(candidates, dtype=np.intp)
    if ranks is None:
        ranks = selection_ranks(population, fitnesses)
    return int(c[ranks[c].argmin()])


def _random_point(expr: Expr, rng: np.random.Generator) -> int:
    return int(rng.integers(len(expr.nodes)))


def _accept(child: Expr, parent: Expr, max_depth: int) -> Expr:
    return child if depth(child) <= max_depth else parent


def crossover(parent1: Expr, parent2: Expr, rng: np.random.Generator,
              max_depth: int | None = None) -> Expr:
    """Replace a random subtree of ``parent1`` with a random subtree of ``parent2``."""
    start = _random_point(parent1, rng)
    donor_start = _random_point(parent2, rng)
    donor = Expr.trusted(parent2.nodes[parent2.subtree_slice(donor_start)])
    child = parent1.replace_subtree(start, donor)
    return child if max_depth is None else _accept(child, parent1, max_depth)


def subtree_mutation(parent: Expr, config: GpConfig, rng: np.random.Generator,
                     n_features: int | None = None) -> Expr:
    if n_features is None:
        n_features = parent.max_variable() + 1 or 1
    start = _random_point(parent, rng)
    fresh = _ramped_tree(rng, config, n_features)
    return _accept(parent.replace_subtree(start, fresh), parent, config.max_depth)


def hoist_mutation(parent: Expr, rng: np.random.Generator,
                   max_depth: int | None = None) -> Expr:
    """Replace a random subtree with one of its own subtrees."""
    start = _random_point(parent, rng)
    sub = parent.nodes[parent.subtree_slice(start)]
    inner = int(rng.integers(len(sub)))
    hoisted = Expr.trusted(sub[inner:subtree_end(sub, inner)])
    child = parent.replace_subtree(start, hoisted)
    # hoisting never deepens a tree, but keep the contract uniform
    return child if max_depth is None else _accept(child, parent, max_depth)


def point_mutation(parent: Expr, config: GpConfig, rng: np.random.Generator,
                   n_features: int | None = None) -> Expr:
    """Swap each node independently with probability ``POINT_REPLACE_PROB``."""
    if n_features is None:
        n_features = parent.max_variable() + 1 or 1
    nodes = list(parent.nodes)
    hits = np.flatnonzero(rng.random(len(nodes)) < POINT_REPLACE_PROB)
    if hits.size == 0:
        return parent
    by_arity: dict[int, list[FunctionOp]] = {}
    for op in config.functions:
        by_arity.setdefault(op.arity, []).append(op)
    for i in hits:
        node = nodes[i]
        if isinstance(node, FunctionOp):
            choices = by_arity.get(node.arity, [node])
            nodes[i] = choices[int(rng.integers(len(choices)))]
        else:
            nodes[i] = _random_terminal(rng, n_features, config.constant_range)
    return _accept(Expr.trusted(tuple(nodes)), parent, config.max_depth)


# -- evolution ----------------------------------------------------------------

def _pick_operator(rng: np.random.Generator, config: GpConfig) -> str:
    u = rng.random()
    for name, p in (("crossover", config.p_crossover),
                    ("subtree", config.p_subtree_mutation),
                    ("hoist", config.p_hoist_mutation),
                    ("point", config.p_point_mutation)):
        if u < p:
            return name
        u -= p
    return "reproduction"


def _offspring(population, fitness, ranks, config: GpConfig, n_features: int,
               rng: np.random.Generator) -> Expr:
    k = config.tournament_size
    parent = population[tournament_select(population, fitness, k, rng, ranks=ranks)]
    op = _pick_operator(rng, config)
    if op == "crossover":
        donor = population[tournament_select(population, fitness, k, rng, ranks=ranks)]
        return crossover(parent, donor, rng, config.max_depth)
    if op == "subtree":
        return subtree_mutation(parent, config, rng, n_features)
    if op == "hoist":
        return hoist_mutation(parent, rng, config.max_depth)
    if op == "point":
        return point_mutation(parent, config, rng, n_features)
    return parent


class _Scorer:
    """Raw-RMSE evaluator with a cache keyed on the node tuple."""

    def __init__(self, X, y):
        self.X = X
        self.y = y
        self.cache: dict[tuple, float] = {}

    def __call__(self, expr: Expr) -> float:
        value = self.cache.get(expr.nodes)
        if value is None:
            value = _fast_rmse(expr.nodes, self.X, self.y)
            if len(self.cache) > 200_000:
                self.cache.clear()
            self.cache[expr.nodes] = value
        return value


def evolve(X, y, config: GpConfig, stream: int = 0,
           callback: Callable[[int, list, np.ndarray], None] | None = None) -> SrProgram:
    """Run the GP search and return the lowest-raw-RMSE program seen.

    ``stream`` separates the random streams of runs sharing a seed.
    ``callback(generation, population, raw_rmses)`` is invoked after each
    generation is scored.
    """
    X, y = _check_data(X, y)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return _evolve(X, y, config, stream, callback)


def _evolve(X, y, config, stream, callback) -> SrProgram:
    n_features = X.shape[1]
    c = config.parsimony_coefficient
    score = _Scorer(X, y)
    population = init_population(config, n_features, stream=stream)
    key = _philox_key(config.rng_seed, stream)
    best: tuple[float, Expr, int] | None = None
    history = []

    for gen in range(config.generations + 1):
        if gen > 0:
            elite = population[int(np.lexsort((sizes, rmses))[0])]
            children = [elite]
            ranks = selection_ranks(population, fitness)
            for i in range(1, config.population_size):
                rng = _keyed_rng(config.rng_seed, stream, gen, i, key)
                children.append(_offspring(population, fitness, ranks, config, n_features, rng))
            population = children

        rmses = np.array([score(e) for e in population])
        sizes = np.array([len(e.nodes) for e in population])
        fitness = rmses + c * sizes
        i_best = int(np.lexsort((sizes, rmses))[0])
        if best is None or rmses[i_best] < best[0]:
            best = (float(rmses[i_best]), population[i_best], gen)
        history.append(best[0])
        if callback is not None:
            callback(gen, population, rmses)
        if best[0] <= config.stopping_rmse:
            break

    return SrProgram(expr=best[1], train_rmse=best[0], parsimony_coefficient=c,
                     generation_found=best[2], history=tuple(history))


def fit_sr_ensemble(X, y, parsimony_list: Sequence[float], config: GpConfig) -> list[SrProgram]:
    """One :func:`evolve` run per parsimony coefficient, in input order."""
    if len(parsimony_list) == 0:
        raise ValueError("parsimony_list must not be empty")
    return [
        evolve(X, y, replace(config, parsimony_coefficient=float(c)), stream=i)
        for i, c in enumerate(parsimony_list)
    ]
