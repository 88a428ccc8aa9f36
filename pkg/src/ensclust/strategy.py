"""Selection strategies over a clustering ensemble.

The ensemble library offers many candidate partitions; this module picks
one. Three selection methods (consensus-direct, hyperparameter match,
ANMI maximization) run on the full library and again on an AAMI-pruned
copy, giving six strategy outcomes per dataset. Around them sit the
sample-size search, variance-based metric selection, and the ranking
that scores each outcome against the library's best members.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .clusterers import ClustererConfig, EnsembleLibrary, fit_clusterer
from .consensus import ConsensusOutcome, consensus_suite, select_consensus
from .data import Partition
from .infotheory import aami, ami, anmi
from .prep import sample_random, sample_stratified
from .validity import (
    MAX_BETTER,
    METRIC_IDS,
    METRIC_ORIENTATION,
    compute_metric,
    fd_bin,
    scale_unit,
)

METHODS = ("CC", "HM", "ANMI")
STAGES = ("Stg1", "Stg2")
STRATEGY_IDS = tuple(f"{method}-{stage}" for stage in STAGES for method in METHODS)

DEFAULT_KEEP = 100  # pruned library size on plain feature matrices
DEFAULT_KEEP_EMBEDDED = 200  # pruned size when clustering a graph embedding

DEFAULT_SAMPLE_SIZES = tuple(range(5000, 30001, 1000))
DEFAULT_SAMPLE_KS = tuple(range(2, 31))


@dataclass(frozen=True)
class StrategyOutcome:
    """One selected partition, tagged by method and stage.

    HM and ANMI outcomes point at the library member they chose; CC
    outcomes carry no config and instead reference the consensus
    outcome they came from.
    """

    strategy_id: str
    partition: Partition
    config: ClustererConfig | None = None
    consensus: ConsensusOutcome | None = None

    def __post_init__(self) -> None:
        if self.strategy_id not in STRATEGY_IDS:
            raise ValueError(f"unknown strategy id {self.strategy_id!r}")
        if self.method == "CC":
            if self.config is not None:
                raise ValueError("consensus outcomes carry no clusterer config")
            if self.consensus is None:
                raise ValueError("CC outcomes must reference a consensus outcome")
        elif self.config is None:
            raise ValueError(f"{self.method} outcomes must reference a library member")

    @property
    def method(self) -> str:
        return self.strategy_id.split("-", 1)[0]

    @property
    def stage(self) -> str:
        return self.strategy_id.split("-", 1)[1]


@dataclass(frozen=True)
class RankingRow:
    """Evaluation of one strategy outcome against the optimal candidates."""

    strategy_id: str
    closeness: float
    exact_match: bool
    rank_weighted: int
    weight: float
    rank: int

    def __post_init__(self) -> None:
        if self.strategy_id not in STRATEGY_IDS:
            raise ValueError(f"unknown strategy id {self.strategy_id!r}")
        if not 0.0 <= self.closeness <= 1.0:
            raise ValueError(f"closeness must lie in [0, 1], got {self.closeness}")
        if not 1 <= self.rank_weighted <= 6:
            raise ValueError(f"rank_weighted must lie in [1, 6], got {self.rank_weighted}")
        if self.exact_match and self.rank_weighted > 5:
            raise ValueError("an exact match cannot carry the no-match coefficient 6")
        if not 1 <= self.rank <= 6:
            raise ValueError(f"rank must lie in [1, 6], got {self.rank}")
        if not math.isclose(self.weight, self.rank_weighted * self.closeness, abs_tol=1e-9):
            raise ValueError("weight must equal rank_weighted * closeness")


# ----------------------------------------------------------- selection


def hyperparameter_match(
    ensemble: EnsembleLibrary, consensus: Partition
) -> tuple[ClustererConfig, Partition]:
    """Library member closest to a consensus partition by AMI.

    Ties keep the earliest member, so the result is reproducible for
    libraries holding duplicate partitions.
    """
    best = None
    best_score = -np.inf
    for config, partition in ensemble:
        score = ami(partition, consensus)
        if score > best_score:
            best, best_score = (config, partition), score
    if best is None:
        raise ValueError("ensemble has no members")
    return best


def anmi_select(ensemble: EnsembleLibrary) -> tuple[ClustererConfig, Partition]:
    """Member with the highest average NMI against the whole library."""
    parts = ensemble.partitions()
    best = None
    best_score = -np.inf
    for config, partition in ensemble:
        score = anmi(partition, parts)
        if score > best_score:
            best, best_score = (config, partition), score
    if best is None:
        raise ValueError("ensemble has no members")
    return best


def member_aami(ensemble: EnsembleLibrary) -> np.ndarray:
    """Average AMI of each member against the full library, self included."""
    parts = ensemble.partitions()
    return np.array([aami(partition, parts) for partition in parts])


def decrease_ensemble(
    ensemble: EnsembleLibrary,
    keep: int | None = None,
    *,
    max_aami: float | None = None,
) -> EnsembleLibrary:
    """Prune the library to its most diverse members.

    ``keep`` retains a fixed count: members are ordered by average AMI
    against the full library (ties by library index) and the lowest
    ``keep`` survive. ``max_aami`` instead drops every member whose
    average AMI exceeds the threshold. Exactly one mode must be chosen.
    Survivors keep their original library order.
    """
    if (keep is None) == (max_aami is None):
        raise ValueError("give exactly one of keep or max_aami")
    scores = member_aami(ensemble)
    if keep is not None:
        if keep < 2:
            raise ValueError(f"keep must be at least 2, got {keep}")
        if keep >= len(ensemble):
            return ensemble
        order = np.argsort(scores, kind="stable")
        kept = np.sort(order[:keep])
    else:
        kept = np.flatnonzero(scores <= max_aami)
        if kept.size < 2:
            raise ValueError(
                f"max_aami={max_aami} keeps {kept.size} members; need at least 2"
            )
        if kept.size == len(ensemble):
            return ensemble
    return ensemble.subset(kept)


def _check_rows(matrix, n: int) -> None:
    X = np.asarray(matrix)
    if X.ndim == 0 or X.shape[0] != n:
        raise ValueError(f"matrix rows must match the {n} clustered points")


def run_strategies(
    matrix,
    ensemble: EnsembleLibrary,
    keep: int | None = None,
    k: int | None = None,
    seed: int = 0,
    reference: str = "outcome-set",
    n_jobs: int | None = None,
) -> list[StrategyOutcome]:
    """Run the three selection methods on the full and pruned libraries.

    Stage 1 uses the library as given; stage 2 first prunes it with
    ``decrease_ensemble`` (``keep`` defaults to DEFAULT_KEEP). Outcomes
    come back in STRATEGY_IDS order. The matrix is only checked for row
    agreement here: selection is purely label-based, and metric scores
    enter later at ranking time.
    """
    _check_rows(matrix, ensemble.n)
    if keep is None:
        keep = DEFAULT_KEEP
    outcomes: list[StrategyOutcome] = []
    for stage, library in (("Stg1", ensemble), ("Stg2", decrease_ensemble(ensemble, keep))):
        suite = consensus_suite(library, k=k, seed=seed, n_jobs=n_jobs)
        chosen = select_consensus(library, suite, reference=reference)
        hm_config, hm_part = hyperparameter_match(library, chosen.partition)
        anmi_config, anmi_part = anmi_select(library)
        outcomes.append(StrategyOutcome(f"CC-{stage}", chosen.partition, None, chosen))
        outcomes.append(StrategyOutcome(f"HM-{stage}", hm_part, hm_config, chosen))
        outcomes.append(StrategyOutcome(f"ANMI-{stage}", anmi_part, anmi_config, chosen))
    return outcomes


# ----------------------------------------------------- sample size search


@dataclass(frozen=True)
class SampleSizeReport:
    """AAMI stability of metric score profiles across sample sizes."""

    aami: dict[tuple[str, str, int], float]  # (metric, strategy, size)
    sizes: tuple[int, ...]
    skipped: tuple[tuple[int, str], ...]

    def curve(self, metric: str, strategy: str) -> list[tuple[int, float]]:
        return [(size, self.aami[(metric, strategy, size)]) for size in self.sizes]

    def best_size(self, metric: str, strategy: str) -> int:
        # highest AAMI; on a tie the smaller (cheaper) size wins
        return max(self.curve(metric, strategy), key=lambda p: (p[1], -p[0]))[0]


def profile_aami(profiles: Mapping[int, np.ndarray]) -> dict[int, float]:
    """Mean AMI of each binned profile against all the others."""
    keys = list(profiles)
    if len(keys) < 2:
        raise ValueError("need at least two profiles to compare")
    out: dict[int, float] = {}
    for a in keys:
        out[a] = float(np.mean([ami(profiles[a], profiles[b]) for b in keys if b != a]))
    return out


def _score_block(X: np.ndarray, idx: np.ndarray, ks, metrics, seed: int) -> dict:
    sample = X[idx]
    scores: dict[str, list[float]] = {metric: [] for metric in metrics}
    for k in ks:
        labels = fit_clusterer(ClustererConfig("kmeans", k=k, seed=seed), sample)
        for metric in metrics:
            scores[metric].append(compute_metric(metric, sample, labels))
    return scores


def sample_size_search(
    matrix,
    sizes: Sequence[int] | None = None,
    ks: Sequence[int] | None = None,
    metrics: Sequence[str] | None = None,
    strategies: Sequence[str] | None = None,
    seeds: Sequence[int] = (0, 1, 2),
    strata: Sequence[str] | None = None,
    n_jobs: int | None = None,
) -> SampleSizeReport:
    """Score K-means sweeps on nested sample sizes and compare via AAMI.

    Per strategy, size, and seed the matrix is sampled, K-means runs for
    every k, and each metric scores the sweep. Scores are unit-scaled
    within one (strategy, metric) group across all sizes, binned on the
    shared [0, 1] range, and each size is scored by the mean AMI between
    its binned profile and the other sizes'. A high AAMI marks a sample
    size whose metric profile resembles the rest: a representative
    sample. Sizes larger than the data (or smaller than the largest k)
    are skipped with a report entry.
    """
    X = np.asarray(matrix, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    rows = X.shape[0]
    sizes = DEFAULT_SAMPLE_SIZES if sizes is None else tuple(int(s) for s in sizes)
    ks = DEFAULT_SAMPLE_KS if ks is None else tuple(int(k) for k in ks)
    metrics = METRIC_IDS if metrics is None else tuple(metrics)
    if strategies is None:
        strategies = ("random",) if strata is None else ("random", "stratified")
    else:
        strategies = tuple(strategies)
    seeds = tuple(int(s) for s in seeds)

    if not ks:
        raise ValueError("ks must be non-empty")
    if not seeds:
        raise ValueError("seeds must be non-empty")
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("sizes must be strictly ascending")
    for metric in metrics:
        if metric not in METRIC_ORIENTATION:
            raise ValueError(f"unknown metric id {metric!r}")
    for strategy in strategies:
        if strategy not in ("random", "stratified"):
            raise ValueError(f"unknown sampling strategy {strategy!r}")
    if "stratified" in strategies:
        if strata is None:
            raise ValueError("stratified sampling needs strata labels")
        strata = np.asarray(strata)
        if strata.shape[0] != rows:
            raise ValueError("strata must label every row")

    floor = max(ks)
    usable: list[int] = []
    skipped: list[tuple[int, str]] = []
    for size in sizes:
        if size > rows:
            skipped.append((size, f"size {size} exceeds the {rows} available rows"))
        elif size < floor:
            skipped.append((size, f"size {size} is below the largest k ({floor})"))
        else:
            usable.append(size)
    if len(usable) < 2:
        raise ValueError("need at least two usable sizes to compare")

    def job(strategy: str, size: int, seed: int) -> dict:
        if strategy == "random":
            idx = sample_random(rows, size, seed)
        else:
            idx = sample_stratified(strata, size, seed)
        return _score_block(X, idx, ks, metrics, seed)

    tasks = [(s, size, seed) for s in strategies for size in usable for seed in seeds]
    if n_jobs is None or n_jobs == 1:
        blocks = [job(*task) for task in tasks]
    else:
        from joblib import Parallel, delayed

        blocks = Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(job)(*task) for task in tasks
        )
    scores = dict(zip(tasks, blocks))

    aami_table: dict[tuple[str, str, int], float] = {}
    width = len(seeds) * len(ks)
    for strategy in strategies:
        for metric in metrics:
            pooled: list[float] = []
            for size in usable:
                for seed in seeds:
                    pooled.extend(scores[(strategy, size, seed)][metric])
            scaled = scale_unit(pooled, METRIC_ORIENTATION[metric])
            binned: dict[int, np.ndarray] = {}
            for position, size in enumerate(usable):
                vec = scaled[position * width : (position + 1) * width]
                binned[size] = fd_bin(vec, lo=0.0, hi=1.0).labels
            for size, value in profile_aami(binned).items():
                aami_table[(metric, strategy, size)] = value
    return SampleSizeReport(aami_table, tuple(usable), tuple(skipped))


def select_metric_by_variance(scores) -> str:
    """Metric whose scaled score list spreads the most.

    A metric that separates candidate clusterings widely is the one
    worth optimizing; near-constant metrics carry no signal. Ties fall
    back to METRIC_IDS order, then to input order for foreign ids.
    """
    items = list(scores.items()) if hasattr(scores, "items") else list(scores)
    if not items:
        raise ValueError("no metric scores given")
    ranked = []
    for position, (metric, values) in enumerate(items):
        v = np.asarray(values, dtype=np.float64)
        if v.size < 2:
            raise ValueError(f"{metric}: need at least 2 scores, got {v.size}")
        if metric in METRIC_IDS:
            order = METRIC_IDS.index(metric)
        else:
            order = len(METRIC_IDS) + position
        ranked.append((-float(np.var(v, ddof=1)), order, metric))
    return min(ranked)[2]


# ------------------------------------------------------------- ranking


def optimal_candidates(
    ensemble: EnsembleLibrary, matrix, metric: str, top: int = 5
) -> list[tuple[ClustererConfig, float]]:
    """Best library members by one metric, ranked best first.

    Members the metric cannot score (single cluster, all noise) are
    passed over; ties keep library order.
    """
    if metric not in METRIC_ORIENTATION:
        raise ValueError(f"unknown metric id {metric!r}")
    scored = []
    for index, (config, partition) in enumerate(ensemble):
        try:
            value = compute_metric(metric, matrix, partition)
        except ValueError:
            continue
        if not np.isfinite(value):
            continue
        scored.append((value, index, config))
    if not scored:
        raise ValueError(f"{metric} could score no library member")
    sign = -1.0 if METRIC_ORIENTATION[metric] == MAX_BETTER else 1.0
    scored.sort(key=lambda item: (sign * item[0], item[1]))
    return [(config, float(value)) for value, _, config in scored[:top]]


def rank_strategies(
    optimal: Sequence[tuple[ClustererConfig, float]],
    outcomes: Sequence[tuple[StrategyOutcome, float]],
) -> list[RankingRow]:
    """Score the six strategy outcomes against the optimal candidates.

    Four steps: absolute distance of each outcome's metric value to the
    best optimal value, min-max scaled over the six (closeness, 0 =
    closest); a coefficient from exact config matches (the matched
    candidate's rank 1..5, else 6); their product (weight); and a final
    1..6 ranking of the weights, ties resolved by strategy-id order.

    Consensus outcomes have no config to match, so their coefficient is
    the one found for the same-stage hyperparameter match, which stands
    in for how near the consensus sits to an optimal algorithm; their
    exact_match flag stays false. Rows come back in input order.
    """
    optimal = list(optimal)
    if not optimal:
        raise ValueError("optimal list is empty")
    if len(optimal) > 5:
        raise ValueError(f"optimal list holds at most 5 candidates, got {len(optimal)}")
    pairs = [(outcome, float(value)) for outcome, value in outcomes]
    ids = [outcome.strategy_id for outcome, _ in pairs]
    if sorted(ids) != sorted(STRATEGY_IDS):
        raise ValueError("outcomes must cover each of the six strategy ids exactly once")

    best_value = float(optimal[0][1])
    diffs = np.array([abs(best_value - value) for _, value in pairs])
    span = float(diffs.max() - diffs.min())
    if span == 0.0:
        closeness = np.zeros(len(pairs))  # all equally close
    else:
        closeness = (diffs - diffs.min()) / span

    coefficients: dict[str, tuple[bool, int]] = {}
    for outcome, _ in pairs:
        if outcome.config is None:
            continue
        exact, rank_weighted = False, 6
        for position, (config, _) in enumerate(optimal, start=1):
            if config == outcome.config:
                exact, rank_weighted = True, position
                break
        coefficients[outcome.strategy_id] = (exact, rank_weighted)

    staged = []
    for i, (outcome, _) in enumerate(pairs):
        if outcome.method == "CC":
            exact = False
            _, rank_weighted = coefficients[f"HM-{outcome.stage}"]
        else:
            exact, rank_weighted = coefficients[outcome.strategy_id]
        weight = rank_weighted * float(closeness[i])
        staged.append((outcome.strategy_id, float(closeness[i]), exact, rank_weighted, weight))

    order = sorted(
        range(len(staged)),
        key=lambda i: (staged[i][4], STRATEGY_IDS.index(staged[i][0])),
    )
    rank_of = {staged[i][0]: position for position, i in enumerate(order, start=1)}
    return [
        RankingRow(sid, close, exact, rank_weighted, weight, rank_of[sid])
        for sid, close, exact, rank_weighted, weight in staged
    ]


# ------------------------------------------------------------- reporting


_REPORT_COLUMNS = (
    "strategy",
    "optimal_class",
    "optimal_hyperparameters",
    "optimal_metric",
    "selected_class",
    "selected_hyperparameters",
    "exact_match",
    "closeness",
    "rank_weighted",
    "weights",
    "rank",
)


def _split_text(config: ClustererConfig) -> tuple[str, str]:
    kind, _, rest = config.text.partition("(")
    return kind, rest[:-1]


@dataclass(frozen=True)
class EvaluationReport:
    """Ranking rows plus the optimal candidates they were scored against."""

    metric: str
    optimal: tuple[tuple[ClustererConfig, float], ...]
    outcomes: tuple[tuple[StrategyOutcome, float], ...]
    rows: tuple[RankingRow, ...]
    notes: tuple[str, ...] = ()

    def write_csv(self, path: str | Path, header_comments: Iterable[str] = ()) -> None:
        """One CSV row per strategy, best optimal candidate alongside."""
        best_config, best_value = self.optimal[0]
        optimal_class, optimal_params = _split_text(best_config)
        path = Path(path)
        with path.open("w", encoding="utf-8", newline="") as handle:
            for comment in header_comments:
                handle.write(f"# {comment}\n")
            for note in self.notes:
                handle.write(f"# {note}\n")
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(_REPORT_COLUMNS)
            for (outcome, _), row in zip(self.outcomes, self.rows):
                if outcome.config is not None:
                    selected_class, selected_params = _split_text(outcome.config)
                else:
                    selected_class = outcome.consensus.function_id
                    selected_params = ""
                writer.writerow(
                    [
                        outcome.strategy_id,
                        optimal_class,
                        optimal_params,
                        f"{self.metric}-{best_value:.6f}",
                        selected_class,
                        selected_params,
                        "1" if row.exact_match else "0",
                        f"{row.closeness:.6f}",
                        str(row.rank_weighted),
                        f"{row.weight:.6f}",
                        str(row.rank),
                    ]
                )


def evaluation_report(
    optimal: Sequence[tuple[ClustererConfig, float]],
    outcomes: Sequence[tuple[StrategyOutcome, float]],
    metric: str,
) -> EvaluationReport:
    """Rank outcomes and bundle everything the report CSV needs."""
    optimal = tuple((config, float(value)) for config, value in optimal)
    outcomes = tuple((outcome, float(value)) for outcome, value in outcomes)
    rows = tuple(rank_strategies(optimal, outcomes))
    notes: tuple[str, ...] = ()
    if len(optimal) < 5:
        notes = (
            f"only {len(optimal)} optimal candidates were available; "
            "match coefficients use the shorter list",
        )
    return EvaluationReport(metric, optimal, outcomes, rows, notes)
