"""Command-line entry points.

Exit status: 0 on success, 2 for usage or validation problems, 1 for
runtime failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .core import (
    InvalidFloorError,
    ObservationLog,
    PropensityError,
    ValidationError,
    rng_stream,
    sidecar_path,
)
from .survey import CHARITIES, SURVEY_SCHEMA, ingest_survey_csv, subgroup_predicates

EXIT_USAGE = 2
EXIT_RUNTIME = 1


class UsageError(Exception):
    pass


def _read_json(path: str | None, what: str) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {path}")
    try:
        d = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what} is not valid JSON: {exc}") from None
    if not isinstance(d, dict):
        raise UsageError(f"{what} must hold a JSON object")
    return d


def load_log(path: str) -> ObservationLog:
    """A log written by this package (CSV + sidecar) or a raw survey export."""
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"log not found: {path}")
    if p.stat().st_size == 0:
        raise UsageError(f"log is empty: {path}")
    if sidecar_path(p).is_file():
        log = ObservationLog.read_csv(p)
    else:
        log, _ = ingest_survey_csv(p, SURVEY_SCHEMA, CHARITIES)
    if len(log) == 0:
        raise UsageError(f"log has no rows: {path}")
    return log


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- subcommands ------------------------------------------------------------

def cmd_simulate(args) -> int:
    from .simulation import (
        SWEEP_PARAMETERS,
        ExperimentConfig,
        build_dgp,
        paired_comparison,
        parameter_sweep,
        run_replicate,
        run_study,
        summarize,
        synthetic_corpus,
        value_context_draw,
        write_rows,
        write_tidy_results,
    )

    raw = _read_json(args.config, "config")
    corpus_path = raw.pop("corpus", None)
    sweep = raw.pop("sweep", None)
    config = ExperimentConfig.from_dict(raw, args.profile)
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    if args.replicates is not None:
        config = config.replace(replicates=args.replicates)
    corpus = load_log(corpus_path) if corpus_path else synthetic_corpus()
    out = _out_dir(args)
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2))
    workers = args.threads or 1

    def progress(i, n):
        if not args.quiet:
            print(f"\r{i}/{n} units", end="", file=sys.stderr, flush=True)

    if sweep:
        param, grid = sweep.get("parameter"), sweep.get("grid", [])
        if param not in SWEEP_PARAMETERS:
            raise UsageError(f"sweep parameter must be one of {SWEEP_PARAMETERS}")
        write_rows(out / "sweep.csv", parameter_sweep(corpus, config, param, grid, workers))
        return 0

    results = run_study(corpus, config, workers, progress)
    if not args.quiet:
        print(file=sys.stderr)
    write_tidy_results(out / "results_tidy.csv", results)
    write_rows(out / "summary.csv", summarize(results))
    algs = config.algorithms
    paired = {}
    if "TreeBagging" in algs and "Uniform" in algs and config.replicates >= 2:
        paired["value_treebagging_vs_uniform"] = paired_comparison(results, "true_value", "TreeBagging", "Uniform")
        paired["regret_treebagging_vs_uniform"] = paired_comparison(
            results, "regret_learning", "TreeBagging", "Uniform")
    if "TreeBagging" in algs and "BootstrapThompson" in algs and config.replicates >= 2:
        paired["regret_treebagging_vs_thompson"] = paired_comparison(
            results, "regret_learning", "TreeBagging", "BootstrapThompson")
    (out / "paired.json").write_text(json.dumps(paired, indent=2))

    if args.write_logs:
        vc = value_context_draw(corpus, config)
        dgp = build_dgp(corpus, config.lambdas, rng_stream(config.seed, "dgp", 0, 0), lam=config.lambdas[0])
        for alg in algs:
            _, full, result = run_replicate(dgp, config, alg, 0, vc, return_logs=True)
            full.write_csv(out / f"{alg}_log.csv")
            result.write(out / f"{alg}_policy.json")
    return 0


def _pipeline_settings(raw: dict):
    from .bandits import BanditConfig
    from .pipeline import PipelineConfig

    pipeline = PipelineConfig.from_dict(raw.get("pipeline", {}))
    bandit = BanditConfig.from_dict({"S": 20, "tree_depth": 1, **raw.get("bandit", {})})
    return pipeline, bandit


def cmd_learn_policy(args) -> int:
    from .pipeline import run_learning_pipeline

    raw = _read_json(args.config, "config")
    pipeline, bandit = _pipeline_settings(raw)
    if args.seed is not None:
        bandit = bandit.replace(seed=args.seed)
    log = load_log(args.log)
    if log.t_learn is not None:
        log = log.learning()
    result = run_learning_pipeline(log, pipeline, bandit=bandit)
    out = _out_dir(args)
    result.write(out / "policy.json")
    text = result.contextual.render()
    (out / "policy.txt").write_text(text + "\n")
    print(text)
    return 0


def _load_report(path: str) -> dict:
    report = _read_json(path, "policy report")
    for key in ("contextual_policy", "fixed_policy"):
        if key not in report:
            raise UsageError(f"policy report lacks {key!r}")
    return report


def cmd_evaluate(args) -> int:
    from .evaluation import write_region_table, write_value_table
    from .pipeline import load_policies

    log = load_log(args.log)
    if log.t_learn is not None and log.t_learn > 0:
        log = log.evaluation()
    pc, pn = load_policies(_load_report(args.policy))
    if pc.arms != log.arms or pn.arms != log.arms:
        raise UsageError("policy arms do not match the log's arms")
    out = _out_dir(args)
    write_value_table(out / "policy_values.csv", log, pc, pn)
    write_region_table(out / "region_contrasts.csv", log, pc, pn)
    print((out / "policy_values.csv").read_text(), end="")
    return 0


def cmd_plot_data(args) -> int:
    from .evaluation import (
        batch_descriptives,
        subgroup_means,
        write_subgroup_table,
        write_tidy,
    )
    from .pipeline import load_policies

    log = load_log(args.log)
    pc, _ = load_policies(_load_report(args.policy))
    groups = subgroup_predicates(log.schema) if log.schema == SURVEY_SCHEMA else {}
    rows = batch_descriptives(log, pc, groups)
    out = _out_dir(args)
    by_stat: dict[str, list] = {}
    for r in rows:
        by_stat.setdefault(r["statistic"], []).append(r)
    for stat, part in by_stat.items():
        write_tidy(out / f"{stat}.csv", part)
    write_subgroup_table(out / "subgroup_means.csv", subgroup_means(log, groups))
    return 0


def cmd_ingest(args) -> int:
    log, report = ingest_survey_csv(args.survey, SURVEY_SCHEMA, CHARITIES)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    log.write_csv(out)
    print(f"read {report.rows_read} rows, dropped {report.dropped_attention} failing the attention check, "
          f"kept {report.rows_kept}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    state = args.state_dir or os.environ.get("TREEBAGGING_STATE_DIR", "./experiments")
    port = args.port or int(os.environ.get("TREEBAGGING_PORT", "8000"))
    uvicorn.run(create_app(state), host=args.host, port=port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="treebagging", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default):
        p.add_argument("--config", help="JSON settings file")
        p.add_argument("--seed", type=int, help="master random seed")
        p.add_argument("--out", default=out_default, help="output location")
        p.add_argument("--threads", type=int, default=None, help="worker processes")
        return p

    p = common(sub.add_parser("simulate", help="run a simulation study"), "study")
    p.add_argument("--profile", choices=("desk", "full"), default=None)
    p.add_argument("--replicates", type=int, default=None, help="override the replicate count")
    p.add_argument("--write-logs", action="store_true", help="also write replicate-0 logs and policies")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = common(sub.add_parser("learn-policy", help="learn policies from a learning-phase log"), "policy")
    p.add_argument("log")
    p.set_defaults(func=cmd_learn_policy)

    p = common(sub.add_parser("evaluate", help="value and contrast tables from evaluation data"), "evaluation")
    p.add_argument("log")
    p.add_argument("policy", help="policy report JSON from learn-policy")
    p.set_defaults(func=cmd_evaluate)

    p = common(sub.add_parser("plot-data", help="tidy per-batch statistics for plotting"), "plot-data")
    p.add_argument("log")
    p.add_argument("policy")
    p.set_defaults(func=cmd_plot_data)

    p = common(sub.add_parser("ingest", help="validate a survey export into a log"), "log.csv")
    p.add_argument("survey")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("serve", help="run the assignment service")
    p.add_argument("--state-dir", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=None)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ValidationError, PropensityError, InvalidFloorError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
