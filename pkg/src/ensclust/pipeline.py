"""Whole-run orchestration: monthly tables in, ranked reports out.

Each month flows through prep, sample-size search, embedding, library
generation, the six selection strategies, and ranking. Artifacts land
under ``output_dir/<month>/`` with the config hash stamped into every
file; a JSON-lines manifest records seeds, timings, and the first
failed stage per month. Months run on a bounded worker pool and are
merged back in configured order, so reruns with an equal config hash
rewrite the report CSVs byte for byte.
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from joblib import Parallel, delayed

from .clusterers import default_grid, generate_library, save_library
from .config import ConfigError, RunConfig, config_hash, derive_seed
from .data import (
    ColumnSchema,
    DataTable,
    Partition,
    SyntheticSpec,
    generate_synthetic_months,
    load_partition,
    load_table,
    write_partition,
    write_table,
)
from .embed import GraphEmbedding
from .plots import save_drift_chart, save_match_heatmap
from .prep import MixedEncoder, hopkins_statistic, sample_random, sample_stratified
from .strategy import (
    evaluation_report,
    optimal_candidates,
    run_strategies,
    sample_size_search,
    select_metric_by_variance,
)
from .temporal import (
    cluster_profile,
    cohort_drift,
    make_bin_plan,
    match_count_matrix,
    recurrence_report,
    stability_match,
    write_stability_csv,
)
from .validity import compute_metric

__all__ = [
    "PipelineResult",
    "load_schema",
    "run_drift",
    "run_pipeline",
    "run_stability",
    "run_synth",
    "write_schema",
]

STAGES = ("prep", "sampling", "embed", "library", "strategies", "metric-selection", "ranking")


def write_schema(schema: Sequence[ColumnSchema], path: str | Path) -> None:
    payload = [
        {"name": col.name, "kind": col.kind, "units": col.units, "levels": col.levels}
        for col in schema
    ]
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def load_schema(path: str | Path) -> list[ColumnSchema]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"schema file not found: {path}")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"schema file {path} is not valid JSON: {err}") from None
    out = []
    for entry in payload:
        out.append(
            ColumnSchema(
                entry["name"],
                entry["kind"],
                units=entry.get("units"),
                levels=tuple(entry["levels"]) if entry.get("levels") else None,
            )
        )
    return out


def _synthetic_spec(config: RunConfig) -> SyntheticSpec:
    return SyntheticSpec(
        n=config.synthetic_n,
        k_true=config.synthetic_k,
        numeric_dims=config.synthetic_numeric_dims,
        categorical_dims=config.synthetic_categorical_dims,
        separation=config.synthetic_separation,
        noise_fraction=config.synthetic_noise,
        seed=derive_seed(config.seed, "synth"),
    )


def _synthetic_tables(config: RunConfig) -> list[tuple[DataTable, Partition]]:
    pool = config.synthetic_subject_pool or None
    return generate_synthetic_months(
        _synthetic_spec(config), config.months, config.synthetic_stable_clusters, pool
    )


def _load_tables(config: RunConfig) -> list[DataTable]:
    schema = load_schema(config.input_schema)
    tables = []
    for month in config.months:
        path = Path(config.input_tables.format(month=month))
        if not path.exists():
            raise ConfigError(f"input table missing for {month}: {path}")
        tables.append(load_table(path, schema, period=month))
    return tables


def _feature_names(config: RunConfig, table: DataTable) -> list[str]:
    if config.input_features:
        missing = [n for n in config.input_features if n not in table.column_names]
        if missing:
            raise ConfigError(f"feature columns not in the table: {missing}")
        return list(config.input_features)
    drop = {config.drift_subject, config.drift_category}
    names = [n for n in table.column_names if n not in drop]
    if not names:
        raise ConfigError("no feature columns left after dropping id columns")
    return names


def _feature_table(table: DataTable, names: Sequence[str]) -> DataTable:
    return DataTable(
        [table.schema_for(n) for n in names],
        {n: table.column(n) for n in names},
        table.period,
    )


class _MonthFailed(Exception):
    def __init__(self, stage: str):
        super().__init__(stage)
        self.stage = stage


def _run_stage(records: list[dict], month: str, stage: str, seed: int | None, fn):
    start = time.perf_counter()
    try:
        value, extra = fn()
    except Exception as err:  # noqa: BLE001 - stage boundary: record, stop the month
        records.append(
            {
                "record": "stage",
                "month": month,
                "stage": stage,
                "seed": seed,
                "elapsed_s": round(time.perf_counter() - start, 3),
                "status": "failed",
                "error": f"{type(err).__name__}: {err}",
            }
        )
        raise _MonthFailed(stage) from err
    entry = {
        "record": "stage",
        "month": month,
        "stage": stage,
        "seed": seed,
        "elapsed_s": round(time.perf_counter() - start, 3),
        "status": "ok",
    }
    if extra:
        entry["extra"] = extra
    records.append(entry)
    return value


def _write_search_csv(search, path: Path, comments: Sequence[str]) -> None:
    with path.open("w", newline="") as handle:
        for comment in comments:
            handle.write(f"# {comment}\n")
        for note in search.skipped:
            handle.write(f"# {note}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["metric", "strategy", "size", "aami"])
        for (metric, strategy, size), value in sorted(search.aami.items()):
            writer.writerow([metric, strategy, size, f"{value:.6f}"])


def _write_layout_csv(coords: np.ndarray, path: Path, comments: Sequence[str]) -> None:
    with path.open("w", newline="") as handle:
        for comment in comments:
            handle.write(f"# {comment}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow([f"e{d}" for d in range(coords.shape[1])])
        for row in coords:
            writer.writerow([f"{v:.6f}" for v in row])


def _run_month(config: RunConfig, chash: str, month: str, table: DataTable):
    """One month end to end; returns (records, failed stage or None)."""
    records: list[dict] = []
    month_dir = Path(config.output_dir) / month
    month_dir.mkdir(parents=True, exist_ok=True)
    comments = [f"config_hash={chash}", f"month={month}"]
    try:
        def prep():
            names = _feature_names(config, table)
            ftable = _feature_table(table, names)
            encoder = MixedEncoder().fit(ftable)
            matrix = encoder.transform(ftable)
            hop = hopkins_statistic(matrix, seed=derive_seed(config.seed, "hopkins", month))
            n_numeric = len(encoder.params_.numeric)
            return (matrix, n_numeric), {"features": names, "hopkins": round(hop, 4)}

        matrix, n_numeric = _run_stage(records, month, "prep", None, prep)

        def sampling():
            strata = None
            if config.sampling_stratify:
                if config.sampling_stratify not in table.column_names:
                    raise ConfigError(
                        f"stratify column {config.sampling_stratify!r} not in the table"
                    )
                strata = [str(v) for v in table.column(config.sampling_stratify)]
            seeds = tuple(
                derive_seed(config.seed, "sampling", month, i)
                for i in range(config.sampling_seeds)
            )
            search = sample_size_search(
                matrix,
                sizes=config.sampling_sizes,
                ks=config.sampling_ks,
                metrics=config.sampling_metrics,
                seeds=seeds,
                strata=strata,
            )
            method = "stratified" if strata is not None else "random"
            profiles = {
                m: [v for _, v in search.curve(m, method)] for m in config.sampling_metrics
            }
            metric = select_metric_by_variance(profiles)
            size = search.best_size(metric, method)
            draw_seed = derive_seed(config.seed, "draw", month)
            if strata is not None:
                rows = sample_stratified(strata, size, seed=draw_seed)
            else:
                rows = sample_random(matrix.shape[0], size, seed=draw_seed)
            _write_search_csv(
                search,
                month_dir / "metric_search.csv",
                comments + [f"selected_metric={metric}", f"selected_size={size}"],
            )
            with (month_dir / "rows.csv").open("w", newline="") as handle:
                for comment in comments:
                    handle.write(f"# {comment}\n")
                handle.write("row\n")
                for r in rows:
                    handle.write(f"{int(r)}\n")
            return (metric, rows), {"method": method, "size": int(size)}

        sampling_seed = derive_seed(config.seed, "sampling", month, 0)
        metric, rows = _run_stage(records, month, "sampling", sampling_seed, sampling)
        sampled = matrix[rows]

        def embed():
            numeric = sampled[:, :n_numeric] if n_numeric else None
            categorical = sampled[:, n_numeric:] if sampled.shape[1] > n_numeric else None
            seed = derive_seed(config.seed, "embed", month)
            embedding = GraphEmbedding(
                n_neighbors=min(config.embedding_neighbors, sampled.shape[0] - 1),
                n_components=config.embedding_dims,
                alpha=config.embedding_alpha,
                epochs=config.embedding_epochs,
                seed=seed,
            )
            coords = embedding.fit_transform(numeric, categorical)
            _write_layout_csv(coords, month_dir / "layout.csv", comments)
            return coords, {"dims": int(coords.shape[1])}

        coords = _run_stage(
            records, month, "embed", derive_seed(config.seed, "embed", month), embed
        )

        def library_stage():
            grid = default_grid(config.library_profile)
            library = generate_library(coords, grid)
            save_library(library, month_dir / "library.csv", header_comments=comments)
            return library, {"members": library.n, "failed_fits": len(library.failures)}

        library = _run_stage(records, month, "library", None, library_stage)

        def strategies():
            seed = derive_seed(config.seed, "consensus", month)
            outcomes = run_strategies(
                coords,
                library,
                keep=config.strategy_keep or None,
                k=config.consensus_k or None,
                seed=seed,
                reference=config.strategy_reference,
            )
            part_dir = month_dir / "partitions"
            part_dir.mkdir(exist_ok=True)
            for outcome in outcomes:
                write_partition(
                    outcome.partition,
                    part_dir / f"{outcome.strategy_id}.labels",
                    header_comments=comments + [f"strategy={outcome.strategy_id}"],
                )
            return outcomes, {"strategies": [o.strategy_id for o in outcomes]}

        outcomes = _run_stage(
            records, month, "strategies", derive_seed(config.seed, "consensus", month), strategies
        )

        # The metric fell out of the sample-size search; its record sits at
        # the canonical slot so the manifest reads in pipeline order.
        _run_stage(
            records, month, "metric-selection", None, lambda: (metric, {"metric": metric})
        )

        def ranking():
            optimal = optimal_candidates(library, coords, metric, top=5)
            scored = [
                (outcome, compute_metric(metric, coords, outcome.partition))
                for outcome in outcomes
            ]
            report = evaluation_report(optimal, scored, metric)
            report.write_csv(month_dir / "report.csv", header_comments=comments)
            top_row = min(report.rows, key=lambda r: r.rank)
            return report, {"rank_1": top_row.strategy_id}

        _run_stage(records, month, "ranking", None, ranking)
    except _MonthFailed as fail:
        return records, fail.stage
    return records, None


@dataclass(frozen=True)
class PipelineResult:
    config: RunConfig
    hash: str
    output_dir: Path
    failed: dict[str, str]

    @property
    def ok(self) -> bool:
        return not self.failed


def run_pipeline(config: RunConfig) -> PipelineResult:
    """Run every configured month; partial outputs survive stage failures."""
    chash = config_hash(config)
    out_dir = Path(config.output_dir)

    # Resolve all inputs before any computation so bad paths fail fast.
    if config.input_tables:
        tables = _load_tables(config)
        truths: list[Partition | None] = [None] * len(tables)
    else:
        pairs = _synthetic_tables(config)
        tables = [t for t, _ in pairs]
        truths = [p for _, p in pairs]

    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(
        json.dumps({"config_hash": chash, "config": config.as_dict()}, indent=2, sort_keys=True)
        + "\n"
    )
    if not config.input_tables:
        write_schema(tables[0].schema, out_dir / "schema.json")
        for month, table, truth in zip(config.months, tables, truths):
            month_dir = out_dir / month
            month_dir.mkdir(parents=True, exist_ok=True)
            stamp = [f"config_hash={chash}", f"month={month}"]
            write_table(table, month_dir / "table.csv", header_comments=stamp)
            write_partition(truth, month_dir / "truth.labels", header_comments=stamp)

    workers = config.workers or (os.cpu_count() or 1)
    results = Parallel(n_jobs=min(workers, len(config.months)), prefer="threads")(
        delayed(_run_month)(config, chash, month, table)
        for month, table in zip(config.months, tables)
    )

    failed: dict[str, str] = {}
    with (out_dir / "manifest.jsonl").open("w") as handle:
        handle.write(
            json.dumps(
                {
                    "record": "run",
                    "config_hash": chash,
                    "months": list(config.months),
                    "config": config.as_dict(),
                },
                sort_keys=True,
            )
            + "\n"
        )
        for month, (records, failed_stage) in zip(config.months, results):
            for record in records:
                handle.write(json.dumps(record, sort_keys=True) + "\n")
            if failed_stage is not None:
                failed[month] = failed_stage
        handle.write(
            json.dumps(
                {
                    "record": "end",
                    "status": "failed" if failed else "ok",
                    "failed": failed,
                },
                sort_keys=True,
            )
            + "\n"
        )
    return PipelineResult(config, chash, out_dir, failed)


def run_synth(
    spec: SyntheticSpec,
    months: Sequence[str],
    out_dir: str | Path,
    stable_clusters: int = 0,
    subject_pool: int | None = None,
) -> list[Path]:
    """Write one table CSV and one truth label file per month, plus the schema."""
    pairs = generate_synthetic_months(spec, months, stable_clusters, subject_pool)
    stamp = config_hash(
        {
            "n": spec.n,
            "k": spec.k_true,
            "numeric_dims": spec.numeric_dims,
            "categorical_dims": list(spec.categorical_dims),
            "separation": spec.separation,
            "noise": spec.noise_fraction,
            "seed": spec.seed,
            "months": list(months),
            "stable_clusters": stable_clusters,
            "subject_pool": subject_pool,
        }
    )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_schema(pairs[0][0].schema, out_dir / "schema.json")
    written = [out_dir / "schema.json"]
    for month, (table, truth) in zip(months, pairs):
        comments = [f"config_hash={stamp}", f"month={month}"]
        table_path = out_dir / f"{month}.csv"
        truth_path = out_dir / f"{month}.labels"
        write_table(table, table_path, header_comments=comments)
        write_partition(truth, truth_path, header_comments=comments)
        written.extend([table_path, truth_path])
    return written


def _top_ranked_strategy(report_path: Path) -> str:
    with report_path.open() as handle:
        rows = [r for r in csv.reader(line for line in handle if not line.startswith("#"))]
    header = rows[0]
    strategy_col = header.index("strategy")
    rank_col = header.index("rank")
    for row in rows[1:]:
        if row[rank_col] == "1":
            return row[strategy_col]
    raise ValueError(f"no rank-1 row in {report_path}")


def _sampled_month_table(config: RunConfig, month: str) -> DataTable:
    out_dir = Path(config.output_dir)
    if config.input_tables:
        schema = load_schema(config.input_schema)
        table = load_table(Path(config.input_tables.format(month=month)), schema, period=month)
    else:
        schema = load_schema(out_dir / "schema.json")
        table = load_table(out_dir / month / "table.csv", schema, period=month)
    lines = (out_dir / month / "rows.csv").read_text(encoding="utf-8").splitlines()
    body = [ln.strip() for ln in lines if ln.strip() and not ln.startswith("#")]
    try:
        rows = np.asarray([int(v) for v in body[1:]], dtype=np.int64)
    except ValueError as exc:
        raise ValueError(f"malformed rows file for {month}") from exc
    return table.take(rows)


@dataclass(frozen=True)
class StabilityResult:
    matches: tuple
    recurrence: tuple
    strategy_per_month: dict[str, str]
    compared_features: tuple[str, ...]
    output_dir: Path


def run_stability(config: RunConfig) -> StabilityResult:
    """Match cluster signatures across all month pairs of a finished run."""
    if len(config.months) < 2:
        raise ConfigError("stability needs at least two months")
    chash = config_hash(config)
    out_dir = Path(config.output_dir)
    missing = [
        m
        for m in config.months
        if not (out_dir / m / "partitions").is_dir() or not (out_dir / m / "rows.csv").exists()
    ]
    if missing:
        raise ConfigError(f"missing pipeline outputs for months: {', '.join(missing)}")

    profiles: dict[str, list] = {}
    chosen: dict[str, str] = {}
    feature_tables: dict[str, DataTable] = {}
    for month in config.months:
        table = _sampled_month_table(config, month)
        names = _feature_names(config, table)
        feature_tables[month] = _feature_table(table, names)
        strategy = config.stability_strategy or _top_ranked_strategy(
            out_dir / month / "report.csv"
        )
        chosen[month] = strategy
        label_path = out_dir / month / "partitions" / f"{strategy}.labels"
        if not label_path.exists():
            raise ConfigError(f"partition file missing: {label_path}")
    features = _feature_names(config, feature_tables[config.months[0]])
    plan = make_bin_plan(list(feature_tables.values()), features)
    for month in config.months:
        partition = load_partition(out_dir / month / "partitions" / f"{chosen[month]}.labels")
        profiles[month] = cluster_profile(
            partition, feature_tables[month], plan=plan, features=features
        )

    pairs = [
        (a, b)
        for i, a in enumerate(config.months)
        for b in config.months[i + 1 :]
    ]
    workers = config.workers or (os.cpu_count() or 1)
    per_pair = Parallel(n_jobs=min(workers, len(pairs)), prefer="threads")(
        delayed(stability_match)(
            profiles[a],
            profiles[b],
            threshold=config.stability_threshold,
            exclude=config.stability_exclude,
        )
        for a, b in pairs
    )
    matches = [m for block in per_pair for m in block]
    recurrence = recurrence_report(matches)

    stab_dir = out_dir / "stability"
    stab_dir.mkdir(parents=True, exist_ok=True)
    comments = [f"config_hash={chash}", f"threshold={config.stability_threshold:.6f}"]
    write_stability_csv(matches, stab_dir / "matches.csv", comments=comments)
    with (stab_dir / "recurrence.csv").open("w", newline="") as handle:
        for comment in comments:
            handle.write(f"# {comment}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["month", "cluster", "matches", "partner_months"])
        for row in recurrence:
            writer.writerow([row.month, row.cluster_id, row.matches, row.partner_months])
    months_order, grid = match_count_matrix(matches)
    if not months_order:
        months_order, grid = list(config.months), np.zeros(
            (len(config.months), len(config.months)), dtype=np.int64
        )
    save_match_heatmap(months_order, grid, stab_dir / "heatmap.svg", config_hash=chash)
    compared = tuple(f for f in features if f not in set(config.stability_exclude))
    (stab_dir / "stability.json").write_text(
        json.dumps(
            {
                "config_hash": chash,
                "months": list(config.months),
                "strategy_per_month": chosen,
                "threshold": config.stability_threshold,
                "features": features,
                "excluded": list(config.stability_exclude),
                "compared_features": list(compared),
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    return StabilityResult(tuple(matches), tuple(recurrence), chosen, compared, stab_dir)


@dataclass(frozen=True)
class DriftResult:
    reports: dict[str, object]
    output_dir: Path


def run_drift(config: RunConfig) -> DriftResult:
    """Cohort drift reports for the overall population and each breakdown."""
    if len(config.months) < 2:
        raise ConfigError("drift needs at least two months")
    chash = config_hash(config)
    if config.input_tables:
        tables = _load_tables(config)
    else:
        tables = [t for t, _ in _synthetic_tables(config)]
    for column in (config.drift_subject, config.drift_category):
        if column not in tables[0].column_names:
            raise ConfigError(f"drift column {column!r} not in the tables")
    for column in config.drift_breakdowns:
        if column not in tables[0].column_names:
            raise ConfigError(f"breakdown column {column!r} not in the tables")

    drift_dir = Path(config.output_dir) / "drift"
    drift_dir.mkdir(parents=True, exist_ok=True)
    runs = [("overall", None)] + [(f"by-{col}", col) for col in config.drift_breakdowns]
    reports: dict[str, object] = {}
    for name, column in runs:
        report = cohort_drift(
            tables,
            breakdown=column,
            subject_column=config.drift_subject,
            category_column=config.drift_category,
        )
        comments = [f"config_hash={chash}", f"breakdown={column or 'Overall'}"]
        report.write_csv(drift_dir / f"{name}.csv", comments=comments)
        save_drift_chart(
            report,
            drift_dir / f"{name}.svg",
            config_hash=chash,
            title=f"Cohort drift ({column or 'Overall'})",
        )
        reports[name] = report
    return DriftResult(reports, drift_dir)
