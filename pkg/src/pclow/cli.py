"""Command-line pipeline: synth | split | fit | estimate | bootstrap |
evaluate | run, all driven by one JSON config.

Every subcommand reads only files produced by earlier stages, so a run can
be restarted at any stage. Produced file paths go to standard output;
diagnostics to standard error. Exit codes: 0 success, 1 validation error,
2 estimation failure.
"""

from __future__ import annotations

import argparse
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from pclow.cohort import Cohort, CohortError, read_cohort, write_cohort, write_schema
from pclow.config import (
    SEED_BOOTSTRAP,
    SEED_SPLIT,
    ConfigError,
    RunConfig,
    derive_seed,
    load_config,
)
from pclow.estimators import (
    EstimationError,
    TLearnerModel,
    att_iptw,
    att_tlearner,
    effect_from_risks,
    fit_tlearner,
    load_tlearner,
    pc_low_cases,
    propensity_scores,
    save_tlearner,
)
from pclow.evaluation import (
    EvaluationError,
    evaluate_counterfactual,
    evaluate_factual,
    pearson,
    propensity_histogram,
    read_assessments,
)
from pclow.learners import LearnerError
from pclow.report import (
    plot_pc_low_distribution,
    plot_propensity_histogram,
    write_table,
)
from pclow.resampling import cluster_bootstrap_multi
from pclow.synth import DgpError, generate_cohort, write_oracle

ATT_COLUMNS = ("method", "risk0", "risk1", "ard", "rr")
PC_LOW_COLUMNS = ("admission_id", "mu0", "mu1", "err", "pc_low", "in_support")


class _Manifest:
    def __init__(self):
        self.paths: list[Path] = []

    def add(self, path) -> Path:
        self.paths.append(Path(path))
        return Path(path)


def _info(msg: str) -> None:
    print(msg, file=sys.stderr)


# --- stage helpers ---------------------------------------------------------


def _cohort_files(config: RunConfig) -> tuple[Path, Path]:
    """(cohort csv, schema csv) for the analysis input."""
    if config.dgp is not None:
        return config.output_dir / "cohort.csv", config.output_dir / "schema.csv"
    return config.cohort_path, config.schema_path


def _split_files(config: RunConfig) -> tuple[Path, Path]:
    return config.output_dir / "train.csv", config.output_dir / "test.csv"


def cmd_synth(config: RunConfig, manifest: _Manifest) -> None:
    if config.dgp is None:
        raise ConfigError("synth requires a dgp block in the config")
    config.output_dir.mkdir(parents=True, exist_ok=True)
    synth = generate_cohort(config.dgp)
    cohort_path, schema_path = _cohort_files(config)
    write_schema(synth.schema, schema_path)
    write_cohort(synth.to_cohort(), cohort_path)
    write_oracle(synth, config.output_dir / "oracle.csv")
    manifest.add(schema_path)
    manifest.add(cohort_path)
    manifest.add(config.output_dir / "oracle.csv")
    _info(f"synth: generated {len(synth)} admissions in {config.dgp.n_clusters} clusters")


def cmd_split(config: RunConfig, manifest: _Manifest) -> None:
    cohort_path, schema_path = _cohort_files(config)
    cohort = read_cohort(cohort_path, schema_path)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    seed = config.split_seed if config.split_seed is not None else derive_seed(
        config.seed, SEED_SPLIT
    )
    rng = np.random.default_rng(seed)
    test_mask = rng.random(len(cohort)) < config.test_fraction
    train_path, test_path = _split_files(config)
    write_cohort(cohort.subset(~test_mask), train_path)
    write_cohort(cohort.subset(test_mask), test_path)
    rows = [
        (cohort.admission_ids[i], "test" if test_mask[i] else "train")
        for i in range(len(cohort))
    ]
    write_table(config.output_dir / "split.csv", ("admission_id", "assignment"), rows)
    manifest.add(train_path)
    manifest.add(test_path)
    manifest.add(config.output_dir / "split.csv")
    _info(
        f"split: {int((~test_mask).sum())} train / {int(test_mask.sum())} test "
        f"(seed {seed})"
    )


def _fit_one(config: RunConfig, cohort: Cohort, kind: str) -> TLearnerModel:
    return fit_tlearner(
        cohort,
        config.learners[kind],
        config.propensity_spec(kind),
        seed=config.fit_seed(kind),
    )


def cmd_fit(config: RunConfig, manifest: _Manifest) -> None:
    train_path, _ = _split_files(config)
    _, schema_path = _cohort_files(config)
    train = read_cohort(train_path, schema_path)
    models_dir = config.output_dir / "models"
    models_dir.mkdir(parents=True, exist_ok=True)
    for kind in config.learners:
        model = _fit_one(config, train, kind)
        for p in save_tlearner(model, models_dir, kind):
            manifest.add(p)
        _info(
            f"fit[{kind}]: support [{model.support.lower:.4f}, "
            f"{model.support.upper:.4f}], {len(model.selection.retained)} "
            "covariates retained"
        )


def _load_models(config: RunConfig) -> dict[str, TLearnerModel]:
    models_dir = config.output_dir / "models"
    return {kind: load_tlearner(models_dir, kind) for kind in config.learners}


def _observed(cohort: Cohort) -> Cohort:
    mask = ~np.isnan(cohort.outcome)
    return cohort.subset(mask) if not mask.all() else cohort


def _att_grid(
    config: RunConfig,
    models: dict[str, TLearnerModel],
    cohort: Cohort,
) -> list[tuple[str, object, object, object, object]]:
    """Rows: unadjusted, tlearner x kinds, iptw x kinds."""
    data = _observed(cohort)
    rows = []

    # the unadjusted row uses the first configured kind's support interval
    # unless pre-trim incidences were requested
    first = next(iter(models.values()))
    if config.unadjusted_pre_trim:
        unadj_data = data
    else:
        scores = propensity_scores(first, data)
        unadj_data = data.subset(first.support.contains(scores))
    treated = unadj_data.treatment == 1
    if not treated.any() or treated.all():
        raise EstimationError("unadjusted estimate needs both arms")
    eff = effect_from_risks(
        float(unadj_data.outcome[~treated].mean()),
        float(unadj_data.outcome[treated].mean()),
    )
    rows.append(("unadjusted", eff.risk0, eff.risk1, eff.ard, eff.rr))

    for kind, model in models.items():
        eff = att_tlearner(model, data)
        rows.append((f"tlearner_{kind}", eff.risk0, eff.risk1, eff.ard, eff.rr))
    for kind, model in models.items():
        scores = propensity_scores(model, data)
        inside = model.support.contains(scores)
        eff = att_iptw(scores[inside], data.treatment[inside], data.outcome[inside])
        rows.append((f"iptw_{kind}", eff.risk0, eff.risk1, eff.ard, eff.rr))
    return rows


def cmd_estimate(config: RunConfig, manifest: _Manifest) -> None:
    train_path, _ = _split_files(config)
    _, schema_path = _cohort_files(config)
    train = read_cohort(train_path, schema_path)
    models = _load_models(config)
    for kind, model in models.items():
        cases = pc_low_cases(model, train)
        rows = [
            (c.admission_id, c.mu0, c.mu1, c.err, c.pc_low, int(c.in_support))
            for c in cases
        ]
        path = config.output_dir / f"pc_low_{kind}.csv"
        write_table(path, PC_LOW_COLUMNS, rows)
        manifest.add(path)
        if not cases:
            _info(f"estimate[{kind}]: no treated admissions with the outcome")
    att_path = config.output_dir / "att.csv"
    write_table(att_path, ATT_COLUMNS, _att_grid(config, models, train))
    manifest.add(att_path)


def _grid_to_map(rows) -> dict[str, float]:
    out = {}
    for method, risk0, risk1, ard, rr in rows:
        out[f"{method}.risk0"] = risk0
        out[f"{method}.risk1"] = risk1
        out[f"{method}.ard"] = ard
        out[f"{method}.rr"] = rr
    return out


def cmd_bootstrap(config: RunConfig, manifest: _Manifest) -> None:
    train_path, test_path = _split_files(config)
    _, schema_path = _cohort_files(config)
    train = read_cohort(train_path, schema_path)
    assessments = None
    test = None
    if config.assessments_path is not None:
        assessments = read_assessments(config.assessments_path)
        test = read_cohort(test_path, schema_path)

    def estimator(cohort: Cohort) -> dict[str, float]:
        models = {kind: _fit_one(config, cohort, kind) for kind in config.learners}
        values = _grid_to_map(_att_grid(config, models, cohort))
        if assessments is not None:
            for kind, model in models.items():
                report = evaluate_counterfactual(pc_low_cases(model, test), assessments)
                values[f"agreement_{kind}.auc"] = report.auc
                values[f"agreement_{kind}.ppv"] = report.ppv
                values[f"agreement_{kind}.mse"] = report.mse
        return values

    results = cluster_bootstrap_multi(
        train,
        estimator,
        replications=config.replications,
        level=config.level,
        seed=derive_seed(config.seed, SEED_BOOTSTRAP),
        n_jobs=config.n_jobs,
    )
    n_failed = next(iter(results.values())).n_failed if results else 0
    if n_failed:
        _info(f"bootstrap: {n_failed}/{config.replications} replications failed")

    methods = ["unadjusted"]
    methods += [f"tlearner_{k}" for k in config.learners]
    methods += [f"iptw_{k}" for k in config.learners]
    header = ["method"]
    for col in ("risk0", "risk1", "ard", "rr"):
        header += [col, f"{col}_lo", f"{col}_hi"]
    rows = []
    for method in methods:
        row: list[object] = [method]
        for col in ("risk0", "risk1", "ard", "rr"):
            r = results[f"{method}.{col}"]
            row += [r.point, r.ci_lower, r.ci_upper]
        rows.append(row)
    att_ci_path = config.output_dir / "att_ci.csv"
    write_table(att_ci_path, header, rows)
    manifest.add(att_ci_path)

    if assessments is not None:
        header = ["model"]
        for col in ("auc", "ppv", "mse"):
            header += [col, f"{col}_lo", f"{col}_hi"]
        rows = []
        for kind in config.learners:
            row = [kind]
            for col in ("auc", "ppv", "mse"):
                r = results[f"agreement_{kind}.{col}"]
                row += [r.point, r.ci_lower, r.ci_upper]
            rows.append(row)
        agreement_ci_path = config.output_dir / "agreement_ci.csv"
        write_table(agreement_ci_path, header, rows)
        manifest.add(agreement_ci_path)


def cmd_evaluate(config: RunConfig, manifest: _Manifest) -> None:
    train_path, test_path = _split_files(config)
    _, schema_path = _cohort_files(config)
    train = read_cohort(train_path, schema_path)
    test = read_cohort(test_path, schema_path)
    models = _load_models(config)

    # factual discrimination per arm on the test set
    rows = []
    for kind, model in models.items():
        aucs = evaluate_factual(model, test)
        rows.append((kind, "control", aucs["control"]))
        rows.append((kind, "treated", aucs["treated"]))
    path = config.output_dir / "factual_auc.csv"
    write_table(path, ("model", "arm", "auc"), rows)
    manifest.add(path)

    # counterfactual agreement on the test set, when assessments exist
    test_cases = {kind: pc_low_cases(model, test) for kind, model in models.items()}
    if config.assessments_path is not None:
        assessments = read_assessments(config.assessments_path)
        rows = []
        for kind in models:
            report = evaluate_counterfactual(test_cases[kind], assessments)
            rows.append((kind, report.n_cases, report.auc, report.ppv, report.mse))
        path = config.output_dir / "agreement.csv"
        write_table(path, ("model", "n_cases", "auc", "ppv", "mse"), rows)
        manifest.add(path)
    else:
        _info("evaluate: no assessments configured; skipping agreement table")

    # pairwise correlation of PC_low over jointly scored test cases
    kinds = list(models)
    scored = {
        kind: {c.admission_id: c.pc_low for c in test_cases[kind] if c.pc_low is not None}
        for kind in kinds
    }
    rows = []
    for a in kinds:
        for b in kinds:
            common = sorted(set(scored[a]) & set(scored[b]))
            if len(common) >= 2:
                r = pearson([scored[a][i] for i in common], [scored[b][i] for i in common])
            else:
                r = None
            rows.append((a, b, r))
    path = config.output_dir / "correlation.csv"
    write_table(path, ("model_a", "model_b", "pearson"), rows)
    manifest.add(path)

    # propensity-score distributions per arm (train set)
    for kind, model in models.items():
        scores = propensity_scores(model, train)
        edges, c0, c1 = propensity_histogram(scores, train.treatment)
        rows = [
            (edges[i], edges[i + 1], int(c0[i]), int(c1[i]))
            for i in range(len(c0))
        ]
        path = config.output_dir / f"propensity_hist_{kind}.csv"
        write_table(path, ("bin_lower", "bin_upper", "control", "treated"), rows)
        manifest.add(path)
        fig_path = config.output_dir / f"propensity_hist_{kind}.png"
        plot_propensity_histogram(edges, c0, c1, f"propensity scores ({kind})", fig_path)
        manifest.add(fig_path)

    # PC_low distribution over in-support treated outcome-positive train cases
    train_values = {}
    for kind, model in models.items():
        vals = [c.pc_low for c in pc_low_cases(model, train) if c.pc_low is not None]
        train_values[kind] = np.array(vals)
    edges = np.linspace(0.0, 1.0, 21)
    rows = []
    for i in range(20):
        row: list[object] = [edges[i], edges[i + 1]]
        for kind in kinds:
            v = train_values[kind]
            # final bin is closed on the right so PC_low == 1 is counted
            upper = (v <= edges[i + 1]) if i == 19 else (v < edges[i + 1])
            row.append(int(((v >= edges[i]) & upper).sum()))
        rows.append(row)
    path = config.output_dir / "pc_low_distribution.csv"
    write_table(path, ["bin_lower", "bin_upper"] + kinds, rows)
    manifest.add(path)
    fig_path = config.output_dir / "pc_low_distribution.png"
    plot_pc_low_distribution(train_values, fig_path)
    manifest.add(fig_path)


def cmd_run(config: RunConfig, manifest: _Manifest) -> None:
    if config.dgp is not None:
        cmd_synth(config, manifest)
    cmd_split(config, manifest)
    cmd_fit(config, manifest)
    cmd_estimate(config, manifest)
    cmd_evaluate(config, manifest)
    cmd_bootstrap(config, manifest)
    run_manifest = config.output_dir / "run_manifest.txt"
    # timestamps live only here, never inside the tables
    stamp = datetime.now(timezone.utc).isoformat()
    with open(run_manifest, "w", encoding="utf-8") as fh:
        fh.write(f"# produced {stamp}\n")
        fh.write(f"# seed {config.seed}\n")
        for p in manifest.paths:
            fh.write(f"{p}\n")
    manifest.add(run_manifest)


COMMANDS = {
    "synth": cmd_synth,
    "split": cmd_split,
    "fit": cmd_fit,
    "estimate": cmd_estimate,
    "bootstrap": cmd_bootstrap,
    "evaluate": cmd_evaluate,
    "run": cmd_run,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pclow",
        description="Individualized PC_low estimation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the JSON run config")
        p.add_argument("--output-dir", default=None, help="override output directory")
        p.add_argument("--seed", type=int, default=None, help="override master seed")
        p.add_argument(
            "--replications", type=int, default=None, help="override bootstrap replications"
        )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.output_dir is not None:
            config.output_dir = Path(args.output_dir)
        if args.seed is not None:
            config.seed = args.seed
            if config.dgp is not None:
                config.dgp.seed = derive_seed(args.seed, 0)
        if args.replications is not None:
            if args.replications < 1:
                raise ConfigError("replications must be >= 1")
            config.replications = args.replications
    except (ConfigError, DgpError, OSError) as exc:
        _info(f"error: {exc}")
        return 1

    config.output_dir.mkdir(parents=True, exist_ok=True)
    manifest = _Manifest()
    try:
        COMMANDS[args.command](config, manifest)
    except (ConfigError, CohortError, DgpError, EvaluationError, LearnerError,
            OSError, ValueError) as exc:
        _info(f"error: {exc}")
        return 1
    except EstimationError as exc:
        _info(f"estimation failure: {exc}")
        return 2
    for p in manifest.paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
