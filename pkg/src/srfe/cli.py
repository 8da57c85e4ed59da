"""Command-line entry point: ``srfe {gen,trial,suite,sweep,robustness,report}``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
Errors are reported on stderr as a single JSON object.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import datagen, harness
from .config import KEYS, ConfigInvalid, RunConfig, load_file
from .harness import CsvSource, SyntheticSource
from .ingest import ingest_csv
from .pipeline import TrialResult, format_report, run_paired_trial

log = logging.getLogger("srfe")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

ALIASES = {
    "seed": "master_seed",
    "n": "synthetic.n_samples",
    "noise": "synthetic.noise",
    "csv": "csv.path",
    "target": "csv.target",
    "reps": "run.reps",
    "workers": "run.workers",
    "split_seed": "run.split_seed",
    "outdir": "output.dir",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key-value config file or a previous result file")
    group = p.add_argument_group("configuration keys")
    for key, (_, default, help_text) in KEYS.items():
        group.add_argument(f"--{key}", dest=f"cfg:{key}", default=None, metavar="V",
                           help=f"{help_text} (default: {default})")
    for alias, key in ALIASES.items():
        flag = "--" + alias.replace("_", "-")
        group.add_argument(flag, dest=f"cfg:{key}", default=None, metavar="V",
                           help=f"alias for --{key}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="srfe", description="Symbolic regression as feature engineering.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen", help="write a synthetic dataset (CSV + JSON sidecar)")
    _add_config_flags(p)
    p.add_argument("--out", help="CSV path (default: <output.dir>/dataset.csv)")

    p = sub.add_parser("trial", help="one paired trial")
    _add_config_flags(p)

    p = sub.add_parser("suite", help="repeated paired trials on one source")
    _add_config_flags(p)

    p = sub.add_parser("sweep", help="sample-size x noise grid of synthetic trials")
    _add_config_flags(p)

    p = sub.add_parser("robustness", help="OLS of improvement on trial covariates")
    p.add_argument("--results", required=True, help="JSON-lines trial file")
    p.add_argument("--covariates", default="n_samples,noise_pct",
                   help="comma-separated covariate names")
    p.add_argument("--model", default="ml", choices=("ml", "dl", "pooled"))
    p.add_argument("--all-models", action="store_true", help="fit all six standard robustness models")
    p.add_argument("--out", help="output JSON (default: robustness.json beside results)")

    p = sub.add_parser("report", help="plain-text per-trial report")
    p.add_argument("--results", required=True, help="JSON-lines trial file")
    p.add_argument("--index", type=int, help="only this trial (0-based)")
    p.add_argument("--out", help="also write the report here")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    layers = []
    if getattr(args, "config", None):
        layers.append(load_file(args.config))
    flags = {name[4:]: value for name, value in vars(args).items()
             if name.startswith("cfg:") and value is not None}
    layers.append(flags)
    return RunConfig.resolve(*layers)


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg["output.dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_source(cfg: RunConfig):
    if cfg["source"] == "csv":
        dataset = ingest_csv(cfg["csv.path"], cfg["csv.target"])
        return CsvSource(dataset, Path(cfg["csv.path"]).stem)
    return SyntheticSource(cfg.synthetic_config())


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def cmd_gen(args, cfg: RunConfig) -> int:
    source = SyntheticSource(cfg.synthetic_config())
    dataset_id, dataset = source.build(0, cfg["master_seed"])
    path = Path(args.out) if args.out else _outdir(cfg) / "dataset.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    sidecar = {"spec": dataset.info["polynomial"], "polynomial": str(
        datagen.PolynomialSpec.from_dict(dataset.info["polynomial"])),
        "seed": cfg["master_seed"], "sigma_rel": cfg["synthetic.noise"],
        "n": dataset.n, "dataset_id": dataset_id, "run_config": cfg.embedded()}
    datagen.write_dataset(dataset, path, sidecar)
    print(path)
    return EXIT_OK


def _trial_kwargs(cfg: RunConfig) -> dict:
    return {"gp_config": cfg.gp_config(), "parsimony_list": cfg["sr.parsimony"],
            "search_config": cfg.search_config(), "master_seed": cfg["master_seed"]}


def cmd_trial(args, cfg: RunConfig) -> int:
    source = _load_source(cfg)
    split_seed = cfg["run.split_seed"]
    # same dataset as `gen` with this seed; split_seed only changes the split
    dataset_id, dataset = source.build(0, cfg["master_seed"])
    result = run_paired_trial(dataset, split_seed, dataset_id=dataset_id,
                              seed_key=source.seed_key(0), **_trial_kwargs(cfg))
    out = _outdir(cfg)
    harness.write_jsonl([result], out / "trial.jsonl", header=cfg.embedded())
    report = format_report(result)
    (out / "trial_report.txt").write_text(report)
    print(report, end="")
    return EXIT_OK


def cmd_suite(args, cfg: RunConfig) -> int:
    source = _load_source(cfg)
    kw = _trial_kwargs(cfg)
    results = harness.repeat_experiment(source, cfg["run.reps"], kw["gp_config"],
                                        kw["parsimony_list"], kw["search_config"],
                                        master_seed=kw["master_seed"], workers=cfg["run.workers"])
    out = _outdir(cfg)
    harness.write_jsonl(results, out / "suite.jsonl", header=cfg.embedded())
    summary = _summary_block(results)
    (out / "suite_summary.json").write_text(_dump({"summary": summary, "run_config": cfg.embedded()}))
    print(_dump(summary), end="")
    return EXIT_OK


def _summary_block(results) -> dict:
    ok = [r for r in results if not isinstance(r, harness.TrialFailure)]
    block = {"trials": len(results), "failed": len(results) - len(ok)}
    if not ok:
        return block
    block.update(harness.summarize(ok))
    for cls in ("ml", "dl"):
        vals = [getattr(r, f"relative_improvement_{cls}") for r in ok]
        if len(vals) >= 6:
            block[cls]["wilcoxon_p"] = harness.significance_test(vals)
            block[cls]["sign_test_p"] = harness.stats.sign_test(vals)
    return block


def cmd_sweep(args, cfg: RunConfig) -> int:
    kw = _trial_kwargs(cfg)
    cells = harness.sweep(cfg["sweep.sizes"], cfg["sweep.noise"], cfg["run.reps"],
                          kw["gp_config"], kw["parsimony_list"], kw["search_config"],
                          synthetic=cfg.synthetic_config(), master_seed=kw["master_seed"],
                          workers=cfg["run.workers"])
    out = _outdir(cfg)
    harness.write_sweep_csv(cells, out / "sweep_cells.csv")
    trials = [t for cell in cells for t in cell.trials]
    harness.write_jsonl(trials, out / "sweep_trials.jsonl", header=cfg.embedded())
    (out / "sweep_cells.json").write_text(_dump({"cells": [c.row() for c in cells],
                                                 "run_config": cfg.embedded()}))
    print(out / "sweep_cells.csv")
    return EXIT_OK


def cmd_robustness(args) -> int:
    header, records = harness.read_jsonl(args.results)
    if args.all_models:
        fits = {name: harness.ols_robustness_regression(records, covs, model).to_dict()
                for name, (covs, model) in harness.ROBUSTNESS_MODELS.items()}
    else:
        covs = [c.strip() for c in args.covariates.split(",") if c.strip()]
        fits = {"fit": harness.ols_robustness_regression(records, covs, args.model).to_dict()}
    out = Path(args.out) if args.out else Path(args.results).with_name("robustness.json")
    meta = {"results_file": str(args.results), "run_config": header}
    # a single fit is written flat; --all-models keys the six fits by model name
    payload = {"fits": fits, **meta} if args.all_models else {**fits["fit"], **meta}
    out.write_text(_dump(payload))
    for name, fit in fits.items():
        print(f"{name} ({fit['model']}, n={fit['n']}, R2={fit['r2']:.6g})")
        for c, b, p in zip(fit["covariates"], fit["coefficients"], fit["p_values"]):
            print(f"  {c:<22} {b:>12.6g}  ({p:.3g})")
    return EXIT_OK


def cmd_report(args) -> int:
    header, records = harness.read_jsonl(args.results)
    trials = [r for r in records if not r.get("failed")]
    if args.index is not None:
        if not 0 <= args.index < len(trials):
            raise UsageError(f"--index {args.index} out of range (0..{len(trials) - 1})")
        trials = [trials[args.index]]
    text = "\n".join(format_report(TrialResult.from_dict(r)) for r in trials)
    if args.out:
        footer = "\nrun config: " + json.dumps(header, sort_keys=True) + "\n"
        Path(args.out).write_text(text + footer)
    print(text, end="")
    return EXIT_OK


def _fail(code: int, kind: str, message: str) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command == "robustness":
            return cmd_robustness(args)
        if args.command == "report":
            return cmd_report(args)
        cfg = resolve_config(args)
        return {"gen": cmd_gen, "trial": cmd_trial, "suite": cmd_suite,
                "sweep": cmd_sweep}[args.command](args, cfg)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "UsageError", str(exc))
    except ConfigInvalid as exc:
        return _fail(EXIT_USAGE, "ConfigInvalid", str(exc))
    except OSError as exc:
        return _fail(EXIT_RUNTIME, "IoError", str(exc))
    except Exception as exc:  # noqa: BLE001 - surfaced as a machine-readable error
        log.debug("runtime failure", exc_info=True)
        return _fail(EXIT_RUNTIME, type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
