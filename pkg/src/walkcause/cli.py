"""Command-line entry point: ``walkcause {design,simulate,estimate,benchmark,balance}``.

Configuration is layered as flags > JSON config file (``--config``) > built-in
defaults, and the effective configuration is written to ``run_config.json`` in
the output directory. Exit codes: 0 success, 2 partial failure (some scenarios
errored), 1 fatal error.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
import warnings
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd

from . import __version__
from .data import DatasetSchema, ScenarioSpec, composite_exposure, load_csv, write_csv
from .design import generate_design, validate_orthogonality
from .diagnostics import asmd, iptw_weights, positivity_report
from .errors import WalkcauseError
from .estimators import ESTIMATORS, scenario_sweep, write_frame_csv
from .learners import KINDS, load_model, save_model
from .nuisance import EstimationConfig, fit_outcome_model, fit_propensity
from .simulation import (
    BenchmarkConfig,
    SimulationConfig,
    benchmark_estimation_config,
    generate_dataset,
    run_benchmark,
)
from .svg import Panel, Series, line_panels, love_plot

log = logging.getLogger("walkcause")

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2
SEED_ENV = "WALKCAUSE_SEED"


class _Parser(argparse.ArgumentParser):
    """Usage errors (including unknown flags) are fatal: exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_FATAL, f"{self.prog}: error: {message}\n")


# ----------------------------------------------------------------------------- defaults


DEFAULTS: dict[str, dict[str, Any]] = {
    "design": {"num_attributes": 5, "names": None},
    "simulate": {"simulation": SimulationConfig().to_dict()},
    "estimate": {
        "data": None,
        "schema": None,
        "simulation": SimulationConfig().to_dict(),
        "estimation": EstimationConfig().to_dict(),
        "estimators": ["raw_difference", "g_formula", "iptw", "tmle"],
        "scenarios": None,
        "digits": 6,
        "save_model": None,
        "load_model": None,
    },
    "benchmark": {
        "benchmark": BenchmarkConfig().to_dict(),
    },
    "balance": {
        "data": None,
        "schema": None,
        "simulation": SimulationConfig().to_dict(),
        "estimation": EstimationConfig().to_dict(),
        "scenario": "1",
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _set_path(d: dict, path: str, value: Any) -> None:
    keys = path.split(".")
    for k in keys[:-1]:
        d = d.setdefault(k, {})
    d[keys[-1]] = value


def _resolve_seed(flag: int | None, cfg: dict) -> int:
    if flag is not None:
        return int(flag)
    if cfg.get("seed") is not None:
        return int(cfg["seed"])
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise WalkcauseError(f"{SEED_ENV}={env!r} is not an integer") from None
    return 0


def _csv_list(text: str, cast=str) -> list:
    return [cast(t.strip()) for t in text.split(",") if t.strip()]


# ----------------------------------------------------------------------------- parser

# flag dest -> config path, for every flag that overrides a config value
_OVERRIDES = {
    "design": {"num_attributes": "num_attributes", "names": "names"},
    "simulate": {
        "n": "simulation.n", "p": "simulation.p", "H": "simulation.H",
        "beta": "simulation.beta", "noise_sd": "simulation.noise_sd",
        "confounders": "simulation.confounders", "discretize": "simulation.discretize",
    },
    "estimate": {
        "data": "data", "schema": "schema", "n": "simulation.n", "beta": "simulation.beta",
        "discretize": "simulation.discretize", "estimators": "estimators",
        "scenarios": "scenarios", "outcome_learner": "estimation.outcome_learner.kind",
        "propensity_learner": "estimation.propensity_learner.kind",
        "tree_count": ("estimation.outcome_learner.tree_count",
                       "estimation.propensity_learner.tree_count"),
        "folds": "estimation.cross_fit_folds", "clip_lo": "estimation.clip_lo",
        "clip_hi": "estimation.clip_hi", "bootstrap": "estimation.bootstrap_reps",
        "fluctuation": "estimation.fluctuation", "caliper": "estimation.psm_caliper",
        "replacement": "estimation.psm_replacement", "digits": "digits",
        "save_model": "save_model", "load_model": "load_model",
    },
    "benchmark": {
        "betas": "benchmark.betas", "replicates": "benchmark.replicates",
        "counts": "benchmark.intervention_counts", "estimators": "benchmark.estimators",
        "n": "benchmark.simulation.n", "n_oracle": "benchmark.n_oracle",
        "reverse": "benchmark.reverse_scenarios",
    },
    "balance": {
        "data": "data", "schema": "schema", "n": "simulation.n", "beta": "simulation.beta",
        "scenario": "scenario", "propensity_learner": "estimation.propensity_learner.kind",
        "clip_lo": "estimation.clip_lo", "clip_hi": "estimation.clip_hi",
    },
}


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("common options")
    g.add_argument("--config", type=Path, help="JSON config file; flags override its values")
    g.add_argument("--seed", type=int, help=f"master seed (fallback: ${SEED_ENV}, then 0)")
    g.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: out)")
    g.add_argument("--svg", action=argparse.BooleanOptionalAction, default=True,
                   help="write SVG plots")
    g.add_argument("--workers", type=int, default=1, help="worker processes (default: 1)")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _input_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("input (a dataset file, or a simulated dataset when --data is absent)")
    g.add_argument("--data", type=Path, help="dataset CSV")
    g.add_argument("--schema", type=Path, help="schema JSON (default: schema.json next to --data)")
    g.add_argument("--n", type=int, help="simulated sample size")
    g.add_argument("--beta", type=float, help="simulated confounding strength in [0, 1]")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="walkcause", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("design", help="two-level orthogonal array of attribute profiles")
    p.add_argument("num_attributes", type=int, nargs="?", help="number of attributes, 2-6 (default 5)")
    p.add_argument("--names", type=_csv_list, help="comma-separated attribute names")
    _common(p)

    p = sub.add_parser("simulate", help="draw a synthetic dataset")
    p.add_argument("--n", type=int, help="sample size (default 5000)")
    p.add_argument("--p", type=int, help="number of covariates (default 5)")
    p.add_argument("--H", type=int, help="number of treatments (default 5)")
    p.add_argument("--beta", type=float, help="confounding strength in [0, 1] (default 0.5)")
    p.add_argument("--noise-sd", dest="noise_sd", type=float, help="outcome noise sd (default 0.1)")
    p.add_argument("--confounders", type=int, help="covariates driving assignment (default 3)")
    p.add_argument("--discretize", action=argparse.BooleanOptionalAction, default=None,
                   help="round the outcome to integer Likert points")
    _common(p)

    p = sub.add_parser("estimate", help="effects for every scenario with every estimator")
    _input_flags(p)
    p.add_argument("--discretize", action=argparse.BooleanOptionalAction, default=None,
                   help="round the simulated outcome to integer Likert points")
    p.add_argument("--estimators", type=_csv_list,
                   help=f"comma-separated subset of {','.join(ESTIMATORS)}")
    p.add_argument("--scenarios", type=_csv_list,
                   help='comma-separated scenarios such as "T1+T2" or "1+2" (default: all)')
    p.add_argument("--learner", choices=KINDS, help="learner for both nuisance models")
    p.add_argument("--outcome-learner", dest="outcome_learner", choices=KINDS)
    p.add_argument("--propensity-learner", dest="propensity_learner", choices=KINDS)
    p.add_argument("--tree-count", dest="tree_count", type=int, help="boosting rounds")
    p.add_argument("--folds", type=int, help="cross-fitting folds, 0 = off (default 5)")
    p.add_argument("--clip-lo", dest="clip_lo", type=float, help="lower propensity clip (0.01)")
    p.add_argument("--clip-hi", dest="clip_hi", type=float, help="upper propensity clip (0.99)")
    p.add_argument("--bootstrap", type=int, help="g-formula bootstrap replicates (default 200)")
    p.add_argument("--fluctuation", choices=("linear", "logistic"), help="TMLE update form")
    p.add_argument("--caliper", type=float, help="matching caliper on the propensity (0.05)")
    p.add_argument("--replacement", action=argparse.BooleanOptionalAction, default=None,
                   help="match controls with replacement (default: on)")
    p.add_argument("--digits", type=int, help="decimal places in results.csv (default 6)")
    p.add_argument("--save-model", dest="save_model", type=Path, help="save the outcome model")
    p.add_argument("--load-model", dest="load_model", type=Path,
                   help="reuse a saved outcome model instead of refitting")
    _common(p)

    p = sub.add_parser("benchmark", help="simulation study of estimator error")
    p.add_argument("--betas", type=lambda s: _csv_list(s, float), help="comma-separated betas")
    p.add_argument("--replicates", type=int, help="datasets per beta (default 50)")
    p.add_argument("--counts", type=lambda s: _csv_list(s, int),
                   help="numbers of joint interventions (default 1,2,3,4,5)")
    p.add_argument("--estimators", type=_csv_list, help="comma-separated estimators")
    p.add_argument("--n", type=int, help="sample size per dataset (default 5000)")
    p.add_argument("--n-oracle", dest="n_oracle", type=int, help="oracle draws (default 1e6)")
    p.add_argument("--reverse", action=argparse.BooleanOptionalAction, default=None,
                   help="use the last k treatments instead of the first k")
    _common(p)

    p = sub.add_parser("balance", help="covariate balance before and after IPTW")
    _input_flags(p)
    p.add_argument("--scenario", help='active treatments, e.g. "T1" or "1+2" (default: first)')
    p.add_argument("--propensity-learner", dest="propensity_learner", choices=KINDS)
    p.add_argument("--clip-lo", dest="clip_lo", type=float)
    p.add_argument("--clip-hi", dest="clip_hi", type=float)
    _common(p)
    return parser


def resolve_config(args: argparse.Namespace) -> dict[str, Any]:
    """Defaults, then the JSON config file, then explicitly given flags."""
    cmd = args.command
    cfg = copy.deepcopy(DEFAULTS[cmd])
    file_cfg: dict = {}
    if args.config is not None:
        with open(args.config, encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        if not isinstance(file_cfg, dict):
            raise WalkcauseError(f"{args.config}: config must be a JSON object")
        cfg = _merge(cfg, file_cfg)
    if cmd == "estimate" and getattr(args, "learner", None):
        for key in ("outcome_learner", "propensity_learner"):
            if getattr(args, key) is None:
                setattr(args, key, args.learner)
    for dest, path in _OVERRIDES[cmd].items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        if isinstance(value, Path):
            value = str(value)
        for p in (path if isinstance(path, tuple) else (path,)):
            _set_path(cfg, p, value)
    cfg["seed"] = _resolve_seed(args.seed, file_cfg)
    for section in ("simulation", "estimation", "benchmark"):
        if isinstance(cfg.get(section), dict) and "seed" in cfg[section]:
            cfg[section]["seed"] = cfg["seed"]
    cfg["command"] = cmd
    return cfg


# ----------------------------------------------------------------------------- io helpers


def _write_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _load_table(cfg: dict):
    if cfg.get("data"):
        data = Path(cfg["data"])
        schema_path = Path(cfg["schema"]) if cfg.get("schema") else data.with_name("schema.json")
        return load_csv(data, DatasetSchema.load(schema_path))
    sim = SimulationConfig.from_dict({**cfg["simulation"], "seed": cfg["seed"]})
    return generate_dataset(sim).table


def _estimation(cfg: dict) -> EstimationConfig:
    return EstimationConfig.from_dict({**cfg["estimation"], "seed": cfg["seed"]})


# ----------------------------------------------------------------------------- commands


def cmd_design(cfg: dict, out: Path, svg: bool, workers: int) -> int:
    design = generate_design(int(cfg["num_attributes"]), cfg.get("names"))
    check = validate_orthogonality(design)
    frame = pd.DataFrame(design.profiles, columns=list(design.names))
    write_frame_csv(frame, out / "design.csv")
    if not check.passed:
        log.error("generated design failed the orthogonality check")
        return EXIT_FATAL
    print(frame.to_string(index=False))
    return EXIT_OK


def cmd_simulate(cfg: dict, out: Path, svg: bool, workers: int) -> int:
    sim = SimulationConfig.from_dict({**cfg["simulation"], "seed": cfg["seed"]})
    data = generate_dataset(sim)
    write_csv(data.table, out / "dataset.csv")
    data.table.schema().dump(out / "schema.json")
    print(f"wrote {data.table.n} rows to {out / 'dataset.csv'}")
    return EXIT_OK


def _summary_svg(results, estimators: Sequence[str]) -> str:
    panels = []
    for name in estimators:
        frame = results.by_interventions(name)
        series = []
        for treatment, grp in frame.groupby("treatment", sort=False):
            series.append(Series(str(treatment), grp["n_interventions"].astype(float).tolist(),
                                 grp["mean_psi_percent"].tolist(), grp["band_lo"].tolist(),
                                 grp["band_hi"].tolist()))
        panels.append(Panel(name, series))
    return line_panels(panels, "Number of interventions", "Effect (% of scale)",
                       title="Effect by number of joint interventions")


def cmd_estimate(cfg: dict, out: Path, svg: bool, workers: int) -> int:
    table = _load_table(cfg)
    config = _estimation(cfg)
    estimators = list(cfg["estimators"])
    scenarios = None
    if cfg.get("scenarios"):
        scenarios = [ScenarioSpec.parse(s, table.treatment_names) for s in cfg["scenarios"]]
    outcome = None
    if cfg.get("load_model"):
        outcome = load_model(cfg["load_model"])
    elif cfg.get("save_model") and any(e != "raw_difference" for e in estimators):
        outcome = fit_outcome_model(table, config, with_bootstrap="g_formula" in estimators)
    if outcome is not None and cfg.get("save_model"):
        save_model(outcome, cfg["save_model"])
    results = scenario_sweep(table, config, estimators, scenarios, workers=workers,
                             outcome=outcome)
    results.write_csv(out / "results.csv", digits=int(cfg["digits"]))
    summary = pd.concat([results.by_interventions(e).assign(estimator=e) for e in estimators],
                        ignore_index=True)
    write_frame_csv(summary, out / "by_interventions.csv", int(cfg["digits"]))
    if svg:
        _write_text(out / "by_interventions.svg", _summary_svg(results, estimators))
    for row in results.failures:
        print(f"scenario {row.scenario_id} ({row.label}), {row.estimator}: {row.error}",
              file=sys.stderr)
    n_ok = len(results.rows) - len(results.failures)
    print(f"{n_ok}/{len(results.rows)} estimates written to {out / 'results.csv'}")
    return EXIT_PARTIAL if results.failures else EXIT_OK


def _benchmark_config(cfg: dict) -> BenchmarkConfig:
    b = dict(cfg["benchmark"])
    sim = SimulationConfig.from_dict(b.pop("simulation"))
    est = b.pop("estimation", None)
    est = EstimationConfig.from_dict(est) if est else benchmark_estimation_config()
    return BenchmarkConfig(
        betas=tuple(float(x) for x in b["betas"]),
        replicates=int(b["replicates"]),
        intervention_counts=tuple(int(k) for k in b["intervention_counts"]),
        estimators=tuple(b["estimators"]),
        simulation=sim,
        estimation=est,
        n_oracle=int(b["n_oracle"]),
        seed=cfg["seed"],
        reverse_scenarios=bool(b["reverse_scenarios"]),
    )


def _benchmark_svg(summary: pd.DataFrame, betas: Sequence[float]) -> str:
    panels = []
    for beta in betas:
        sub = summary[summary["beta"] == beta]
        series = [Series(str(est), g["n_interventions"].astype(float).tolist(),
                         (100 * g["mean"]).tolist(), (100 * g["band_lo"]).tolist(),
                         (100 * g["band_hi"]).tolist())
                  for est, g in sub.groupby("estimator", sort=False)]
        panels.append(Panel(f"beta = {beta:g}", series))
    return line_panels(panels, "Number of interventions", "Percentage error (%)",
                       title="Estimator error against the simulation truth")


def cmd_benchmark(cfg: dict, out: Path, svg: bool, workers: int) -> int:
    bcfg = _benchmark_config(cfg)
    for name in bcfg.estimators:
        if name not in ESTIMATORS:
            raise WalkcauseError(f"unknown estimator {name!r}; choose from {ESTIMATORS}")
    report = run_benchmark(bcfg, workers=workers)
    write_frame_csv(report.rows, out / "benchmark.csv")
    write_frame_csv(report.truths, out / "truths.csv")
    order = {name: i for i, name in enumerate(bcfg.estimators)}
    summary = (report.summary.assign(_est=report.summary["estimator"].map(order))
               .sort_values(["_est", "beta", "n_interventions"], kind="mergesort")
               .drop(columns="_est").reset_index(drop=True))
    write_frame_csv(summary, out / "benchmark_summary.csv")
    if svg:
        _write_text(out / "benchmark.svg", _benchmark_svg(summary, bcfg.betas))
    failed = int((report.rows["error"] != "").sum())
    print(f"{len(report.rows)} benchmark rows written to {out / 'benchmark.csv'}")
    if failed:
        print(f"{failed} cells failed; see the error column", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_balance(cfg: dict, out: Path, svg: bool, workers: int) -> int:
    table = _load_table(cfg)
    config = _estimation(cfg)
    scenario = ScenarioSpec.parse(str(cfg["scenario"]), table.treatment_names)
    exposure = composite_exposure(table, scenario)
    prop = fit_propensity(table, scenario, config, exposure)
    # ineligible units carry NaN propensity; their weight is 0 regardless
    weights = iptw_weights(np.nan_to_num(prop.propensity, nan=0.5), exposure.exposed,
                           exposure.control)
    report = asmd(table, scenario, weights)
    write_frame_csv(report.rows, out / "balance.csv")
    pos = positivity_report(prop.propensity, config.clip_lo, config.clip_hi)
    _write_json(out / "positivity.json", {
        "deciles": [float(x) for x in pos.deciles], "n": pos.n,
        "clipped_low": pos.clipped_low, "clipped_high": pos.clipped_high,
        "flagged": pos.flagged, "min": pos.min, "max": pos.max,
    })
    if svg:
        rows = report.rows
        _write_text(out / "balance.svg", love_plot(
            rows["covariate"].tolist(), rows["asmd_unadjusted"].tolist(),
            rows["asmd_weighted"].tolist(), title=f"Covariate balance: {report.label}"))
    print(report.rows.to_string(index=False))
    return EXIT_OK


COMMANDS = {
    "design": cmd_design,
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "benchmark": cmd_benchmark,
    "balance": cmd_balance,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.workers < 1:
            raise WalkcauseError("--workers must be >= 1")
        cfg = resolve_config(args)
        out: Path = args.out
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "run_config.json", cfg)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return COMMANDS[args.command](cfg, out, args.svg, args.workers)
    except (WalkcauseError, ValueError, OSError, KeyError, TypeError, json.JSONDecodeError) as exc:
        print(f"walkcause {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
