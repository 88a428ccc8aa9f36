"""Command-line front end for synthesis, pipeline runs, and reports."""

from __future__ import annotations

import csv
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .data import SyntheticSpec, load_partition
from .pipeline import run_drift, run_pipeline, run_stability, run_synth
from .validity import METRIC_IDS, compute_metric

OUTPUT_ENV = "ENSCLUST_OUT"


def _fail(code: int, err: object) -> None:
    click.echo(f"error: {err}", err=True)
    sys.exit(code)


def _guarded(fn):
    """Run a command body; config problems exit 2, computation failures 1."""
    try:
        return fn()
    except ConfigError as err:
        _fail(2, err)
    except Exception as err:  # noqa: BLE001 - CLI boundary
        _fail(1, f"{type(err).__name__}: {err}")


def _split_csv(text: str | None) -> tuple[str, ...] | None:
    if text is None:
        return None
    parts = tuple(p.strip() for p in text.split(",") if p.strip())
    if not parts:
        raise ConfigError(f"empty list value: {text!r}")
    return parts


def _build_config(
    config_path: str | None,
    out: str | None,
    months: str | None,
    seed: int | None,
    workers: int | None,
    **extra,
) -> RunConfig:
    overrides: dict = {}
    env_out = os.environ.get(OUTPUT_ENV)
    if env_out:
        overrides["output_dir"] = env_out
    if out:
        overrides["output_dir"] = out
    if months is not None:
        overrides["months"] = _split_csv(months)
    if seed is not None:
        overrides["seed"] = seed
    if workers is not None:
        overrides["workers"] = workers
    for key, value in extra.items():
        if value is not None:
            overrides[key] = value
    return load_config(config_path, overrides)


def _common_options(fn):
    fn = click.option("--workers", type=int, default=None, help="worker pool size")(fn)
    fn = click.option("--seed", type=int, default=None, help="root seed")(fn)
    fn = click.option(
        "--months", default=None, help="comma list of YYYY-MM periods (overrides the file)"
    )(fn)
    fn = click.option("--out", default=None, help="output directory")(fn)
    fn = click.option(
        "--config",
        "config_path",
        type=click.Path(),
        default=None,
        help="TOML configuration file",
    )(fn)
    return fn


def _consecutive_months(start: str, count: int) -> tuple[str, ...]:
    try:
        year, month = (int(p) for p in start.split("-"))
    except ValueError:
        raise ConfigError(f"start month {start!r} must look like YYYY-MM") from None
    if not 1 <= month <= 12:
        raise ConfigError(f"start month {start!r} must look like YYYY-MM")
    if count < 1:
        raise ConfigError("need at least one month")
    out = []
    for i in range(count):
        total = (year * 12 + month - 1) + i
        out.append(f"{total // 12:04d}-{total % 12 + 1:02d}")
    return tuple(out)


@click.group()
@click.version_option(__version__, prog_name="ensclust")
def main() -> None:
    """Ensemble clustering pipeline with month-over-month reports."""


@main.command()
@click.option("--months", default=2, show_default=True, type=int, help="number of months")
@click.option("--start", default="2025-01", show_default=True, help="first period")
@click.option("--n", default=1000, show_default=True, type=int, help="rows per month")
@click.option("--k", default=3, show_default=True, type=int, help="planted clusters")
@click.option("--dims", default=4, show_default=True, type=int, help="numeric columns")
@click.option("--cats", default="6,6,6", show_default=True, help="levels per categorical column")
@click.option("--separation", default=12.0, show_default=True, type=float)
@click.option("--noise", default=0.0, show_default=True, type=float, help="noise row fraction")
@click.option("--stable", default=1, show_default=True, type=int, help="signature-stable clusters")
@click.option("--subject-pool", default=0, type=int, help="distinct subject ids (0: automatic)")
@click.option("--seed", default=7, show_default=True, type=int)
@click.option("--out", default="synth", show_default=True, help="output directory")
def synth(months, start, n, k, dims, cats, separation, noise, stable, subject_pool, seed, out):
    """Write synthetic monthly tables plus ground-truth label files."""

    def body():
        periods = _consecutive_months(start, months)
        try:
            spec = SyntheticSpec(
                n=n,
                k_true=k,
                numeric_dims=dims,
                categorical_dims=tuple(int(c) for c in _split_csv(cats) or ()),
                separation=separation,
                noise_fraction=noise,
                seed=seed,
            )
            return run_synth(spec, periods, out, stable, subject_pool or None)
        except ValueError as err:
            raise ConfigError(str(err)) from None

    written = _guarded(body)
    for path in written:
        click.echo(str(path))


@main.command()
@_common_options
@click.option("--keep", type=int, default=None, help="library size after pruning")
@click.option("--profile", default=None, help="library grid profile")
def pipeline(config_path, out, months, seed, workers, keep, profile):
    """Run prep, sampling, embedding, library, strategies, and ranking."""

    def body():
        cfg = _build_config(
            config_path, out, months, seed, workers,
            strategy_keep=keep, library_profile=profile,
        )
        return cfg, run_pipeline(cfg)

    cfg, result = _guarded(body)
    click.echo(f"config hash {result.hash}")
    for month in cfg.months:
        stage = result.failed.get(month)
        click.echo(f"{month}: " + ("ok" if stage is None else f"failed at {stage}"))
    if not result.ok:
        sys.exit(1)


@main.command()
@_common_options
@click.option("--threshold", type=float, default=None, help="mean-AMI match threshold")
@click.option("--exclude-features", default=None, help="comma list of features to leave out")
@click.option("--strategy", default=None, help="strategy id supplying the partitions")
def stability(config_path, out, months, seed, workers, threshold, exclude_features, strategy):
    """Match cluster signatures across months of a finished pipeline run."""

    def body():
        cfg = _build_config(
            config_path, out, months, seed, workers,
            stability_threshold=threshold,
            stability_exclude=_split_csv(exclude_features),
            stability_strategy=strategy,
        )
        return run_stability(cfg)

    result = _guarded(body)
    matched = sum(1 for m in result.matches if m.matched)
    click.echo(f"{matched} matched pairs across {len(result.matches)} comparisons")
    click.echo(f"compared features: {', '.join(result.compared_features)}")
    for row in result.recurrence[:5]:
        click.echo(
            f"{row.month} cluster {row.cluster_id}: {row.matches} matches over "
            f"{row.partner_months} months"
        )
    click.echo(f"reports in {result.output_dir}")


@main.command()
@_common_options
@click.option(
    "--breakdown", "breakdowns", multiple=True, help="breakdown column (repeatable)"
)
def drift(config_path, out, months, seed, workers, breakdowns):
    """Cohort drift of interest distributions, overall and per breakdown."""

    def body():
        cfg = _build_config(
            config_path, out, months, seed, workers,
            drift_breakdowns=tuple(breakdowns) if breakdowns else None,
        )
        return run_drift(cfg)

    result = _guarded(body)
    for name, report in result.reports.items():
        click.echo(f"{name}: {len(report.rows)} cohort rows, {len(report.notes)} notes")
    click.echo(f"reports in {result.output_dir}")


def _load_matrix(path: str) -> np.ndarray:
    rows: list[list[float]] = []
    with open(path, newline="") as handle:
        reader = csv.reader(line for line in handle if not line.startswith("#"))
        for i, row in enumerate(reader):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                if i == 0:
                    continue  # header line
                raise ConfigError(f"non-numeric cell in {path} at data row {i}") from None
    if not rows:
        raise ConfigError(f"no numeric rows in {path}")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ConfigError(f"ragged rows in {path}")
    return np.asarray(rows, dtype=np.float64)


@main.command()
@click.argument("data", type=click.Path(exists=True))
@click.argument("labels", type=click.Path(exists=True))
@click.option("--metrics", "metric_ids", default=None, help="comma list (default: all)")
@click.option("--out", "out_path", default=None, help="also write the values to this CSV")
def metrics(data, labels, metric_ids, out_path):
    """Score a labeling of a numeric dataset with the validity metrics."""

    def body():
        wanted = _split_csv(metric_ids) or METRIC_IDS
        unknown = set(wanted) - set(METRIC_IDS)
        if unknown:
            raise ConfigError(f"unknown metric ids: {sorted(unknown)}")
        matrix = _load_matrix(data)
        partition = load_partition(labels)
        if partition.n != matrix.shape[0]:
            raise ConfigError(
                f"labels cover {partition.n} rows but the data has {matrix.shape[0]}"
            )
        values: list[tuple[str, float | None, str]] = []
        for metric in wanted:
            try:
                values.append((metric, compute_metric(metric, matrix, partition), ""))
            except ValueError as err:
                values.append((metric, None, str(err)))
        return values

    values = _guarded(body)
    for metric, value, note in values:
        if value is None:
            click.echo(f"{metric} unavailable: {note}", err=True)
        else:
            click.echo(f"{metric} {value:.6f}")
    if out_path:
        with open(out_path, "w", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["metric", "value", "note"])
            for metric, value, note in values:
                writer.writerow([metric, "" if value is None else f"{value:.6f}", note])


if __name__ == "__main__":
    main()
