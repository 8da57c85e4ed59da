"""Run configuration as a flat ``dotted.key = value`` document.

Every key has a matching command-line flag (``--gp.generations 20``).  The
resolved mapping is embedded in output files, and any of those files can be
passed back through ``--config`` to reproduce the run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .datagen import SyntheticConfig
from .gpsr import GpConfig
from .pipeline import SearchConfig

__all__ = ["ConfigInvalid", "KEYS", "RunConfig", "parse_text", "load_file"]


class ConfigInvalid(ValueError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in str(text).split(",") if t.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in str(text).split(",") if t.strip())


def _words(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in str(text).split(",") if t.strip())


def _opt_str(text) -> str | None:
    text = "" if text is None else str(text).strip()
    return text or None


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        text = str(text).strip()
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return parse


_g = GpConfig()
_s = SyntheticConfig()
_q = SearchConfig()

# key -> (parser, default, help)
KEYS: dict[str, tuple[Callable[[Any], Any], Any, str]] = {
    "master_seed": (int, 0, "master seed for every random stream"),
    "source": (_choice("synthetic", "csv"), "synthetic", "dataset source kind"),
    "csv.path": (_opt_str, None, "input CSV file"),
    "csv.target": (_opt_str, None, "target column name in the CSV"),
    "synthetic.n_samples": (int, _s.n_samples, "rows per synthetic dataset"),
    "synthetic.noise": (float, _s.noise_fraction, "relative noise std"),
    "synthetic.feature_min": (int, _s.feature_count_range[0], "fewest features"),
    "synthetic.feature_max": (int, _s.feature_count_range[1], "most features"),
    "synthetic.term_min": (int, _s.term_count_range[0], "fewest polynomial terms"),
    "synthetic.term_max": (int, _s.term_count_range[1], "most polynomial terms"),
    "synthetic.max_exponent": (int, _s.max_exponent, "largest exponent per variable"),
    "synthetic.coefficients": (_floats, _s.coefficient_choices, "coefficient choices"),
    "synthetic.feature_range": (_floats, _s.feature_range, "low,high feature bounds"),
    "gp.population_size": (int, _g.population_size, "GP population size"),
    "gp.generations": (int, _g.generations, "GP generations"),
    "gp.tournament_size": (int, _g.tournament_size, "tournament size"),
    "gp.p_crossover": (float, _g.p_crossover, "crossover probability"),
    "gp.p_subtree_mutation": (float, _g.p_subtree_mutation, "subtree mutation probability"),
    "gp.p_hoist_mutation": (float, _g.p_hoist_mutation, "hoist mutation probability"),
    "gp.p_point_mutation": (float, _g.p_point_mutation, "point mutation probability"),
    "gp.init_depth_min": (int, _g.init_depth_min, "minimum initial depth"),
    "gp.init_depth_max": (int, _g.init_depth_max, "maximum initial depth"),
    "gp.max_depth": (int, _g.max_depth, "depth limit for offspring"),
    "gp.constant_range": (_floats, _g.constant_range, "low,high constant range"),
    "gp.function_set": (_words, _g.function_set, "comma-separated primitives"),
    "gp.stopping_rmse": (float, _g.stopping_rmse, "stop once best RMSE <= this"),
    "sr.parsimony": (_floats, (0.001, 0.01, 0.1), "one SR program per coefficient"),
    "sr.mode": (_choice("all", "best"), _q.sr_mode, "append all programs or the best"),
    "search.cv_folds": (int, _q.cv_folds, "CV folds in the proxy searches"),
    "search.budget": (int, _q.budget, "candidates evaluated per search"),
    "run.reps": (int, 50, "repetitions for suite / per sweep cell"),
    "run.split_seed": (int, 0, "split seed for a single trial"),
    "run.workers": (int, 1, "parallel trial workers (does not change results)"),
    "sweep.sizes": (_ints, (100, 500, 1000, 5000, 10000), "sample sizes"),
    "sweep.noise": (_floats, (0.01, 0.02, 0.03, 0.04, 0.05), "noise levels"),
    "output.dir": (str, "results", "output directory"),
}

# keys that never influence results and are left out of embedded configs
SCHEDULING_KEYS = frozenset({"run.workers", "output.dir"})


def parse_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigInvalid(f"line {line_no}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def load_file(path: str | Path) -> dict[str, Any]:
    """Read a key-value file, a JSON object, or a result file's config header."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from None
    stripped = text.lstrip()
    if stripped.startswith("{"):
        first = stripped.splitlines()[0]
        try:
            obj = json.loads(first) if path.suffix == ".jsonl" else json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"{path}: bad JSON: {exc}") from None
        if "config" in obj and isinstance(obj["config"], dict):
            obj = obj["config"]
        if "run_config" in obj and isinstance(obj["run_config"], dict):
            obj = obj["run_config"]
        return obj
    return parse_text(text)


@dataclass(frozen=True)
class RunConfig:
    values: dict

    @classmethod
    def resolve(cls, *layers: dict) -> RunConfig:
        """Merge layers left to right (later wins) over the defaults."""
        values = {k: default for k, (_, default, _) in KEYS.items()}
        for layer in layers:
            for key, raw in layer.items():
                if key not in KEYS:
                    raise ConfigInvalid(f"unknown config key {key!r}")
                if raw is None:
                    continue
                parser = KEYS[key][0]
                try:
                    if isinstance(raw, (list, tuple)):
                        raw = ",".join(str(v) for v in raw)
                    values[key] = parser(raw)
                except (TypeError, ValueError) as exc:
                    raise ConfigInvalid(f"bad value for {key}: {raw!r} ({exc})") from None
        cfg = cls(values)
        cfg.validate()
        return cfg

    def __getitem__(self, key: str):
        return self.values[key]

    def validate(self) -> None:
        v = self.values
        if v["source"] == "csv":
            if not v["csv.path"] or not v["csv.target"]:
                raise ConfigInvalid("source=csv needs csv.path and csv.target")
        elif v["csv.path"]:
            raise ConfigInvalid("csv.path is set but source is synthetic; set source = csv")
        if v["run.reps"] < 1 or v["run.workers"] < 1:
            raise ConfigInvalid("run.reps and run.workers must be >= 1")
        try:
            self.gp_config()
            self.synthetic_config()
            self.search_config()
        except ValueError as exc:
            raise ConfigInvalid(str(exc)) from None
        if not v["sr.parsimony"]:
            raise ConfigInvalid("sr.parsimony must list at least one coefficient")

    def gp_config(self) -> GpConfig:
        v = self.values
        return GpConfig(
            population_size=v["gp.population_size"], generations=v["gp.generations"],
            tournament_size=v["gp.tournament_size"], p_crossover=v["gp.p_crossover"],
            p_subtree_mutation=v["gp.p_subtree_mutation"],
            p_hoist_mutation=v["gp.p_hoist_mutation"],
            p_point_mutation=v["gp.p_point_mutation"],
            init_depth_min=v["gp.init_depth_min"], init_depth_max=v["gp.init_depth_max"],
            max_depth=v["gp.max_depth"], constant_range=tuple(v["gp.constant_range"]),
            function_set=tuple(v["gp.function_set"]), stopping_rmse=v["gp.stopping_rmse"],
        )

    def synthetic_config(self, n_samples: int | None = None,
                         noise: float | None = None) -> SyntheticConfig:
        v = self.values
        return SyntheticConfig(
            n_samples=v["synthetic.n_samples"] if n_samples is None else n_samples,
            noise_fraction=v["synthetic.noise"] if noise is None else noise,
            feature_count_range=(v["synthetic.feature_min"], v["synthetic.feature_max"]),
            term_count_range=(v["synthetic.term_min"], v["synthetic.term_max"]),
            max_exponent=v["synthetic.max_exponent"],
            coefficient_choices=tuple(v["synthetic.coefficients"]),
            feature_range=tuple(v["synthetic.feature_range"]),
        )

    def search_config(self) -> SearchConfig:
        v = self.values
        return SearchConfig(cv_folds=v["search.cv_folds"], budget=v["search.budget"],
                            sr_mode=v["sr.mode"])

    def embedded(self) -> dict:
        """JSON-ready resolved values, minus scheduling-only keys."""
        return {k: list(val) if isinstance(val, tuple) else val
                for k, val in sorted(self.values.items()) if k not in SCHEDULING_KEYS}
