"""Month-over-month behaviour analyses.

Two complementary views of change. Interest distributions describe what
category mix a subject clicked within one month and :func:`cohort_drift`
measures how far individuals stray from their comparison group, split by
how many months a subject has been around. Cluster profiles capture a
cluster's per-feature value distributions so :func:`stability_match` can
recognize the same behavioural signature in another month's clustering.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .data import NOISE, DataTable, Partition
from .infotheory import ami, jsd
from .validity import fd_bin

__all__ = [
    "RANK_BANDS",
    "InterestDistribution",
    "CohortDrift",
    "DriftReport",
    "ClusterProfile",
    "StabilityMatch",
    "RecurrenceRow",
    "interest_distribution",
    "cohort_drift",
    "make_bin_plan",
    "cluster_profile",
    "stability_match",
    "recurrence_report",
    "match_count_matrix",
    "rank_band",
    "write_stability_csv",
]

# Success-rank bands for grouping content by its 1..100 popularity rank.
RANK_BANDS = (("Low", 1, 33), ("Mid", 34, 66), ("High", 67, 100))


def rank_band(rank: int) -> str:
    """Band name for a 1..100 rank: Low covers 1-33, Mid 34-66, High 67-100."""
    value = int(rank)
    if value != rank:
        raise ValueError(f"rank must be an integer, got {rank!r}")
    for name, lo, hi in RANK_BANDS:
        if lo <= value <= hi:
            return name
    raise ValueError(f"rank must lie in [1, 100], got {rank}")


@dataclass(frozen=True)
class InterestDistribution:
    """Probability vector over a fixed category list for one subject-month.

    ``subject`` is an individual id, ``"Overall"`` for a whole month, or a
    breakdown value when the population was split first.
    """

    subject: str
    month: str
    categories: tuple[str, ...]
    probabilities: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "categories", tuple(str(c) for c in self.categories))
        probs = np.asarray(self.probabilities, dtype=np.float64)
        if probs.shape != (len(self.categories),):
            raise ValueError("need exactly one probability per category")
        if probs.size == 0:
            raise ValueError("category list must be non-empty")
        if np.any(probs < 0):
            raise ValueError("probabilities must be non-negative")
        if abs(float(probs.sum()) - 1.0) > 1e-9:
            raise ValueError("probabilities must sum to 1")
        probs = probs.copy()
        probs.setflags(write=False)
        object.__setattr__(self, "probabilities", probs)

    def probability(self, category: str) -> float:
        try:
            return float(self.probabilities[self.categories.index(category)])
        except ValueError:
            raise KeyError(category) from None


def interest_distribution(
    counts: Mapping[str, float],
    categories: Sequence[str] | None = None,
    subject: str = "Overall",
    month: str = "",
) -> InterestDistribution:
    """Share of clicks per category: count over the total, zero for unseen.

    ``categories`` fixes the vector layout; when omitted the observed
    categories are used in sorted order. Counts naming a category outside
    the list are rejected rather than silently dropped.
    """
    counts = dict(counts)
    if categories is None:
        category_list = tuple(sorted(str(c) for c in counts))
    else:
        category_list = tuple(str(c) for c in categories)
        if len(set(category_list)) != len(category_list):
            raise ValueError("category list contains duplicates")
        unknown = set(str(c) for c in counts) - set(category_list)
        if unknown:
            raise ValueError(f"counts name categories outside the list: {sorted(unknown)}")
    values = np.array([float(counts.get(c, 0.0)) for c in category_list], dtype=np.float64)
    if values.size == 0:
        raise ValueError("no categories to distribute over")
    if np.any(values < 0):
        raise ValueError("click counts must be non-negative")
    total = float(values.sum())
    if total <= 0:
        raise ValueError("total click count must be positive")
    return InterestDistribution(subject, month, category_list, values / total)


@dataclass(frozen=True)
class CohortDrift:
    """Mean divergence of one cohort's members from their comparison group.

    ``cohort`` is the number of distinct months the subjects have appeared
    in; ``entrance_share`` is the fraction of the group's rows contributed
    by that cohort; ``observations`` counts the (subject, month) pairs the
    mean was taken over.
    """

    group: str
    cohort: int
    mean_jsd: float
    entrance_share: float
    observations: int

    def __post_init__(self) -> None:
        if self.cohort < 1:
            raise ValueError("cohort must be at least 1")
        if not 0.0 <= self.entrance_share <= 1.0 + 1e-9:
            raise ValueError("entrance share must lie in [0, 1]")
        if self.observations < 1:
            raise ValueError("a cohort row needs at least one observation")


@dataclass(frozen=True)
class DriftReport:
    rows: tuple[CohortDrift, ...]
    notes: tuple[str, ...] = ()

    def value(self, group: str, cohort: int) -> float:
        for row in self.rows:
            if row.group == group and row.cohort == cohort:
                return row.mean_jsd
        raise KeyError((group, cohort))

    def write_csv(self, path: str | Path, comments: Sequence[str] = ()) -> None:
        path = Path(path)
        with path.open("w", newline="") as handle:
            for comment in comments:
                handle.write(f"# {comment}\n")
            for note in self.notes:
                handle.write(f"# {note}\n")
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["group", "cohort", "mean_jsd", "entrance_share", "observations"])
            for row in self.rows:
                writer.writerow(
                    [
                        row.group,
                        row.cohort,
                        f"{row.mean_jsd:.6f}",
                        f"{row.entrance_share:.6f}",
                        row.observations,
                    ]
                )


def _category_counts(values: np.ndarray, categories: Sequence[str]) -> np.ndarray:
    lookup = {c: i for i, c in enumerate(categories)}
    counts = np.zeros(len(categories), dtype=np.float64)
    for v in values:
        counts[lookup[v]] += 1.0
    return counts


def cohort_drift(
    tables: Sequence[DataTable],
    breakdown: str | None = None,
    subject_column: str = "subject",
    category_column: str = "category",
) -> DriftReport:
    """Interest drift from the group mean, split by months of presence.

    Subjects are grouped into cohorts by how many distinct months they
    appear in anywhere in ``tables``. For every appearance the subject's
    category distribution is compared by Jensen-Shannon distance against
    the distribution of its comparison group in that month: the whole
    month, or the rows sharing the subject's ``breakdown`` value. A
    cohort's value is the mean distance over its appearances. Entrance
    shares report which fraction of a group's rows each cohort supplied;
    cohorts with no appearances in a group are omitted with a note.
    """
    tables = list(tables)
    if len(tables) < 2:
        raise ValueError("need at least two monthly tables")
    months = [t.period for t in tables]
    if any(m is None for m in months):
        raise ValueError("every table needs a period")
    if len(set(months)) != len(months):
        raise ValueError("tables must cover distinct months")

    categories = sorted({str(v) for t in tables for v in t.column(category_column)})

    months_seen: dict[str, set[str]] = {}
    for table in tables:
        period = str(table.period)
        for value in table.column(subject_column):
            months_seen.setdefault(str(value), set()).add(period)
    cohort_of = {subject: len(seen) for subject, seen in months_seen.items()}

    distances: dict[tuple[str, int], list[float]] = {}
    cohort_rows: dict[tuple[str, int], int] = {}
    group_rows: dict[str, int] = {}
    for table in tables:
        cats = np.array([str(v) for v in table.column(category_column)], dtype=object)
        subjects = np.array([str(v) for v in table.column(subject_column)], dtype=object)
        if breakdown is None:
            groups = np.full(table.n_rows, "Overall", dtype=object)
        else:
            groups = np.array([str(v) for v in table.column(breakdown)], dtype=object)
        for group in sorted(set(groups.tolist())):
            group_mask = groups == group
            group_rows[group] = group_rows.get(group, 0) + int(group_mask.sum())
            group_counts = _category_counts(cats[group_mask], categories)
            reference = group_counts / group_counts.sum()
            for subject in sorted(set(subjects[group_mask].tolist())):
                subject_mask = group_mask & (subjects == subject)
                counts = _category_counts(cats[subject_mask], categories)
                key = (group, cohort_of[subject])
                distances.setdefault(key, []).append(jsd(counts / counts.sum(), reference))
                cohort_rows[key] = cohort_rows.get(key, 0) + int(subject_mask.sum())

    rows: list[CohortDrift] = []
    notes: list[str] = []
    for group in sorted(group_rows):
        for cohort in range(1, len(tables) + 1):
            key = (group, cohort)
            if key not in distances:
                notes.append(f"cohort {cohort} of group {group!r} is empty")
                continue
            rows.append(
                CohortDrift(
                    group,
                    cohort,
                    float(np.mean(distances[key])),
                    cohort_rows[key] / group_rows[group],
                    len(distances[key]),
                )
            )
    return DriftReport(tuple(rows), tuple(notes))


def make_bin_plan(
    tables: DataTable | Sequence[DataTable],
    features: Sequence[str] | None = None,
) -> dict[str, np.ndarray | tuple[str, ...]]:
    """Shared feature supports pooled over the given tables.

    Numeric features map to bin edges, categorical ones to the sorted
    union of their levels. Pass every month that will be compared so the
    profile vectors line up entry for entry; a level missing from one
    month then still occupies its slot. Defaults to the numeric columns.
    """
    if isinstance(tables, DataTable):
        tables = [tables]
    tables = list(tables)
    if not tables:
        raise ValueError("need at least one table")
    names = list(features) if features is not None else tables[0].numeric_names()
    plan: dict[str, np.ndarray | tuple[str, ...]] = {}
    for name in names:
        kinds = {t.schema_for(name).kind for t in tables}
        if len(kinds) > 1:
            raise ValueError(f"column {name!r} changes kind between tables")
        if kinds == {"numeric"}:
            pooled = np.concatenate([t.column(name) for t in tables])
            plan[name] = fd_bin(pooled).edges
        else:
            levels: set[str] = set()
            for t in tables:
                declared = t.schema_for(name).levels
                if declared is not None:
                    levels.update(str(lv) for lv in declared)
                levels.update(str(v) for v in t.column(name))
            plan[name] = tuple(sorted(levels))
    return plan


@dataclass(frozen=True)
class ClusterProfile:
    """Per-feature value distributions of one cluster in one month.

    Each feature maps to a probability vector over its support: bin
    intervals for numeric features, level names for categorical ones.
    """

    cluster_id: int
    month: str
    distributions: dict[str, np.ndarray]
    support: dict[str, tuple[str, ...]]

    def __post_init__(self) -> None:
        if not self.distributions:
            raise ValueError("profile needs at least one feature")
        if set(self.distributions) != set(self.support):
            raise ValueError("distributions and support must cover the same features")
        fixed = {}
        for feature, vector in self.distributions.items():
            v = np.asarray(vector, dtype=np.float64)
            if v.ndim != 1 or v.size != len(self.support[feature]):
                raise ValueError(f"feature {feature!r}: vector and support lengths differ")
            if np.any(v < 0) or abs(float(v.sum()) - 1.0) > 1e-9:
                raise ValueError(f"feature {feature!r}: distribution must sum to 1")
            v = v.copy()
            v.setflags(write=False)
            fixed[feature] = v
        object.__setattr__(self, "distributions", fixed)

    @property
    def features(self) -> tuple[str, ...]:
        return tuple(self.distributions)


def cluster_profile(
    partition: Partition | Sequence[int],
    table: DataTable,
    plan: Mapping[str, np.ndarray] | None = None,
    features: Sequence[str] | None = None,
) -> list[ClusterProfile]:
    """Distribution of every feature's values within each cluster.

    Numeric features are discretized by ``plan`` (defaults to edges from
    this table alone; pass a shared plan from :func:`make_bin_plan` when
    profiles of different months will be compared). Categorical features
    count level frequencies over the plan's levels, falling back to the
    schema's declared levels and then to the observed ones. Noise rows
    are ignored and empty clusters yield no profile.
    """
    labels = partition.labels if isinstance(partition, Partition) else np.asarray(partition, dtype=np.int64)
    if labels.ndim != 1 or labels.size != table.n_rows:
        raise ValueError("partition length must match the table's row count")
    names = list(features) if features is not None else list(table.column_names)
    if not names:
        raise ValueError("no features to profile")

    if plan is None:
        numeric = [n for n in names if table.schema_for(n).kind == "numeric"]
        plan = make_bin_plan(table, numeric)

    feature_labels: dict[str, np.ndarray] = {}
    feature_support: dict[str, tuple[str, ...]] = {}
    for name in names:
        column = table.column(name)
        schema = table.schema_for(name)
        if schema.kind == "numeric":
            if name not in plan:
                raise ValueError(f"bin plan is missing numeric feature {name!r}")
            edges = np.asarray(plan[name], dtype=np.float64)
            # Values outside the plan's range land in the first or last bin.
            idx = np.clip(np.searchsorted(edges, column, side="right") - 1, 0, edges.size - 2)
            support = tuple(
                f"[{edges[i]:.6g},{edges[i + 1]:.6g})" for i in range(edges.size - 1)
            )
        else:
            if name in plan:
                levels = [str(lv) for lv in plan[name]]
            elif schema.levels is not None:
                levels = [str(lv) for lv in schema.levels]
            else:
                levels = sorted({str(v) for v in column})
            lookup = {lv: i for i, lv in enumerate(levels)}
            try:
                idx = np.array([lookup[str(v)] for v in column], dtype=np.int64)
            except KeyError as err:
                raise ValueError(f"column {name!r} holds a level outside its support: {err}") from None
            support = tuple(levels)
        feature_labels[name] = idx
        feature_support[name] = support

    month = table.period or ""
    profiles: list[ClusterProfile] = []
    for cluster in np.unique(labels[labels != NOISE]):
        mask = labels == cluster
        dists = {}
        for name in names:
            counts = np.bincount(
                feature_labels[name][mask], minlength=len(feature_support[name])
            ).astype(np.float64)
            dists[name] = counts / counts.sum()
        profiles.append(
            ClusterProfile(int(cluster), month, dists, dict(feature_support))
        )
    return profiles


@dataclass(frozen=True)
class StabilityMatch:
    """Similarity verdict for one cluster pair across two months."""

    month_a: str
    cluster_a: int
    month_b: str
    cluster_b: int
    mean_ami: float
    threshold: float
    matched: bool

    def __post_init__(self) -> None:
        if self.matched != (self.mean_ami > self.threshold):
            raise ValueError("matched must mirror mean_ami > threshold")

    @property
    def pair(self) -> tuple[tuple[str, int], tuple[str, int]]:
        return ((self.month_a, self.cluster_a), (self.month_b, self.cluster_b))


def _common_labels(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # One binning over both vectors so the label alphabets coincide.
    merged = np.concatenate([a, b])
    binned = fd_bin(merged)
    labels = binned.labels
    if binned.bins == 1 and np.unique(merged).size > 1:
        # Sparse vectors are zero-heavy, which zeroes the quartile spread and
        # collapses everything into one bin; split at the median instead so
        # where the mass sits still matters.
        labels = (merged > np.median(merged)).astype(np.int64)
    return labels[: a.size], labels[a.size :]


def stability_match(
    profiles_a: Sequence[ClusterProfile],
    profiles_b: Sequence[ClusterProfile],
    threshold: float = 0.5,
    exclude: Sequence[str] = (),
    mode: str = "averaged",
) -> list[StabilityMatch]:
    """Pair up clusters whose feature signatures persist between months.

    For each cluster pair and each shared feature, the two distribution
    vectors are binned to one common labeling and compared by AMI; the
    per-feature scores are averaged and the pair matches when the mean
    exceeds ``threshold``. ``mode="concatenated"`` joins all shared
    features into one vector per cluster and computes a single AMI
    instead. ``exclude`` drops features before comparing, so the effect
    of a noisy feature family can be measured by leaving it out.
    """
    profiles_a = list(profiles_a)
    profiles_b = list(profiles_b)
    if not profiles_a or not profiles_b:
        raise ValueError("both profile sets must be non-empty")
    if mode not in ("averaged", "concatenated"):
        raise ValueError(f"unknown mode {mode!r}")
    for side in (profiles_a, profiles_b):
        first = side[0].features
        if any(p.features != first for p in side[1:]):
            raise ValueError("profiles within one month must share a feature list")
    excluded = set(exclude)
    b_features = set(profiles_b[0].features)
    shared = [f for f in profiles_a[0].features if f in b_features and f not in excluded]
    if not shared:
        raise ValueError("no shared features left to compare")
    for feature in shared:
        if profiles_a[0].distributions[feature].size != profiles_b[0].distributions[feature].size:
            raise ValueError(
                f"feature {feature!r} has incompatible supports; "
                "profile both months with one shared bin plan"
            )

    matches: list[StabilityMatch] = []
    for pa in profiles_a:
        for pb in profiles_b:
            if mode == "averaged":
                scores = []
                for feature in shared:
                    la, lb = _common_labels(pa.distributions[feature], pb.distributions[feature])
                    scores.append(ami(la, lb))
                score = float(np.mean(scores))
            else:
                va = np.concatenate([pa.distributions[f] for f in shared])
                vb = np.concatenate([pb.distributions[f] for f in shared])
                la, lb = _common_labels(va, vb)
                score = float(ami(la, lb))
            matches.append(
                StabilityMatch(
                    pa.month,
                    pa.cluster_id,
                    pb.month,
                    pb.cluster_id,
                    score,
                    float(threshold),
                    score > threshold,
                )
            )
    return matches


@dataclass(frozen=True)
class RecurrenceRow:
    month: str
    cluster_id: int
    matches: int
    partner_months: int


def recurrence_report(matches: Iterable[StabilityMatch]) -> list[RecurrenceRow]:
    """Per cluster: how many matched pairs, over how many partner months.

    Every cluster appearing in the input gets a row even with zero
    matches. Rows come sorted by match count, then partner months, both
    descending, then by (month, cluster) for a stable order.
    """
    totals: dict[tuple[str, int], int] = {}
    partners: dict[tuple[str, int], set[str]] = {}
    for match in matches:
        for (month, cluster), other_month in (
            ((match.month_a, match.cluster_a), match.month_b),
            ((match.month_b, match.cluster_b), match.month_a),
        ):
            totals.setdefault((month, cluster), 0)
            partners.setdefault((month, cluster), set())
            if match.matched:
                totals[(month, cluster)] += 1
                partners[(month, cluster)].add(other_month)
    rows = [
        RecurrenceRow(month, cluster, totals[(month, cluster)], len(partners[(month, cluster)]))
        for month, cluster in totals
    ]
    rows.sort(key=lambda r: (-r.matches, -r.partner_months, r.month, r.cluster_id))
    return rows


def match_count_matrix(matches: Iterable[StabilityMatch]) -> tuple[list[str], np.ndarray]:
    """Months in sorted order and a symmetric matched-pair count grid."""
    matches = list(matches)
    months = sorted({m for match in matches for m in (match.month_a, match.month_b)})
    index = {m: i for i, m in enumerate(months)}
    grid = np.zeros((len(months), len(months)), dtype=np.int64)
    for match in matches:
        if not match.matched:
            continue
        a, b = index[match.month_a], index[match.month_b]
        grid[a, b] += 1
        if a != b:
            grid[b, a] += 1
    return months, grid


def write_stability_csv(
    matches: Sequence[StabilityMatch],
    path: str | Path,
    comments: Sequence[str] = (),
) -> None:
    """Write one row per cluster pair with its mean AMI and verdict."""
    path = Path(path)
    with path.open("w", newline="") as handle:
        for comment in comments:
            handle.write(f"# {comment}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(
            ["month_a", "cluster_a", "month_b", "cluster_b", "mean_ami", "threshold", "matched"]
        )
        for match in matches:
            writer.writerow(
                [
                    match.month_a,
                    match.cluster_a,
                    match.month_b,
                    match.cluster_b,
                    f"{match.mean_ami:.6f}",
                    f"{match.threshold:.6f}",
                    "1" if match.matched else "0",
                ]
            )
