"""Tests for ensemble selection strategies and their ranking."""

import csv

import numpy as np
import pytest

from ensclust.clusterers import ClustererConfig, EnsembleLibrary
from ensclust.consensus import ConsensusOutcome, consensus_suite, select_consensus
from ensclust.data import Partition
from ensclust.infotheory import ami, anmi
from ensclust.strategy import (
    DEFAULT_SAMPLE_KS,
    DEFAULT_SAMPLE_SIZES,
    STRATEGY_IDS,
    EvaluationReport,
    RankingRow,
    StrategyOutcome,
    anmi_select,
    decrease_ensemble,
    evaluation_report,
    hyperparameter_match,
    member_aami,
    optimal_candidates,
    profile_aami,
    rank_strategies,
    run_strategies,
    sample_size_search,
    select_metric_by_variance,
)
from ensclust.validity import METRIC_ORIENTATION, MIN_BETTER, compute_metric, scale_unit

from .oracles import make_blobs_simple, noisy_ensemble


def library(*label_lists) -> EnsembleLibrary:
    """Ensemble from raw label lists, tagged by throwaway configs."""
    members = [
        (ClustererConfig("kmeans", k=2, seed=i), Partition(np.asarray(labels)))
        for i, labels in enumerate(label_lists)
    ]
    return EnsembleLibrary(members)


def random_library(m: int, n: int, k: int, seed: int) -> EnsembleLibrary:
    rng = np.random.default_rng(seed)
    members = [
        (
            ClustererConfig("kmeans", k=k, seed=i),
            Partition.from_labels(rng.integers(0, k, size=n)),
        )
        for i in range(m)
    ]
    return EnsembleLibrary(members)


@pytest.fixture(scope="module")
def blob_setup():
    X, truth = make_blobs_simple(240, 3, dims=2, separation=10.0, seed=0)
    members = noisy_ensemble(truth, 12, noise_fraction=0.08, seed=3)
    lib = EnsembleLibrary(
        [
            (ClustererConfig("kmeans", k=3, seed=i), Partition(member))
            for i, member in enumerate(members)
        ]
    )
    return X, truth, lib


@pytest.fixture(scope="module")
def blob_outcomes(blob_setup):
    X, _, lib = blob_setup
    return run_strategies(X, lib, keep=len(lib))


_PART = Partition(np.array([0, 0, 1, 1]))
_CONS = ConsensusOutcome("CSPA", _PART)


class TestStrategyOutcome:
    def test_unknown_id_rejected(self):
        with pytest.raises(ValueError, match="strategy id"):
            StrategyOutcome("HM-Stg3", _PART, ClustererConfig("kmeans", k=2))

    def test_cc_requires_consensus(self):
        with pytest.raises(ValueError, match="consensus outcome"):
            StrategyOutcome("CC-Stg1", _PART)

    def test_cc_rejects_config(self):
        with pytest.raises(ValueError, match="no clusterer config"):
            StrategyOutcome("CC-Stg1", _PART, ClustererConfig("kmeans", k=2), _CONS)

    def test_member_methods_require_config(self):
        with pytest.raises(ValueError, match="library member"):
            StrategyOutcome("ANMI-Stg2", _PART)

    def test_method_and_stage(self):
        outcome = StrategyOutcome("HM-Stg2", _PART, ClustererConfig("kmeans", k=2))
        assert outcome.method == "HM"
        assert outcome.stage == "Stg2"

    def test_strategy_id_universe(self):
        assert STRATEGY_IDS == (
            "CC-Stg1",
            "HM-Stg1",
            "ANMI-Stg1",
            "CC-Stg2",
            "HM-Stg2",
            "ANMI-Stg2",
        )


class TestHyperparameterMatch:
    def test_exact_member_recovered(self):
        lib = library([0, 0, 1, 1, 2, 2], [0, 1, 2, 0, 1, 2], [0, 0, 0, 1, 1, 1])
        consensus = Partition(np.array([0, 1, 2, 0, 1, 2]))
        config, partition = hyperparameter_match(lib, consensus)
        assert config.param("seed") == 1
        assert ami(partition, consensus) == pytest.approx(1.0)

    def test_identical_members_tie_to_first(self):
        lib = library([0, 0, 1, 1], [0, 0, 1, 1], [0, 0, 1, 1])
        config, _ = hyperparameter_match(lib, Partition(np.array([0, 0, 1, 1])))
        assert config.param("seed") == 0

    def test_matches_exhaustive_scan(self):
        rng = np.random.default_rng(7)
        for trial in range(10):
            lib = random_library(m=8, n=40, k=3, seed=trial)
            consensus = Partition.from_labels(rng.integers(0, 3, size=40))
            config, _ = hyperparameter_match(lib, consensus)
            scores = [ami(p, consensus) for p in lib.partitions()]
            expected = lib.configs()[int(np.argmax(scores))]
            assert config == expected


class TestAnmiSelect:
    def test_identical_library_first(self):
        lib = library([0, 1, 1, 0], [0, 1, 1, 0], [0, 1, 1, 0])
        config, partition = anmi_select(lib)
        assert config.param("seed") == 0
        assert anmi(partition, lib.partitions()) == pytest.approx(1.0)

    def test_agreeing_member_wins(self):
        truth = np.repeat([0, 1, 2], 20)
        rng = np.random.default_rng(11)
        labels = [truth]
        for seed in range(8):
            labels.append(noisy_ensemble(truth, 1, noise_fraction=0.05, seed=seed)[0])
        labels.append(Partition.from_labels(rng.integers(0, 3, size=60)).labels)
        lib = library(*labels)
        config, _ = anmi_select(lib)
        scores = [anmi(p, lib.partitions()) for p in lib.partitions()]
        assert int(np.argmax(scores)) == 0
        assert config.param("seed") == 0

    def test_two_member_tie_first(self):
        lib = library([0, 0, 1, 1], [0, 1, 0, 1])
        config, _ = anmi_select(lib)
        assert config.param("seed") == 0


class TestDecreaseEnsemble:
    def test_keep_all_is_identity(self):
        lib = library([0, 0, 1, 1], [0, 1, 0, 1])
        assert decrease_ensemble(lib, 2) is lib
        assert decrease_ensemble(lib, 10) is lib

    def test_keep_below_two_rejected(self):
        lib = library([0, 0, 1, 1], [0, 1, 0, 1], [0, 1, 1, 0])
        with pytest.raises(ValueError, match="at least 2"):
            decrease_ensemble(lib, 1)

    def test_mode_selection_errors(self):
        lib = library([0, 0, 1, 1], [0, 1, 0, 1])
        with pytest.raises(ValueError, match="exactly one"):
            decrease_ensemble(lib)
        with pytest.raises(ValueError, match="exactly one"):
            decrease_ensemble(lib, 2, max_aami=0.5)

    def test_diverse_member_survives(self):
        block = [0, 0, 0, 1, 1, 1, 2, 2, 2]
        diverse = [0, 1, 2, 0, 1, 2, 0, 1, 2]
        lib = library(block, block, block, block, diverse)
        pruned = decrease_ensemble(lib, 2)
        assert len(pruned) == 2
        seeds = [config.param("seed") for config in pruned.configs()]
        assert seeds == [0, 4]  # diverse member kept, original order preserved

    def test_kept_aami_are_smallest(self):
        lib = random_library(m=8, n=30, k=3, seed=5)
        original = member_aami(lib)
        pruned = decrease_ensemble(lib, 4)
        kept_texts = pruned.texts()
        kept_scores = [original[lib.texts().index(text)] for text in kept_texts]
        assert sorted(kept_scores) == pytest.approx(sorted(original)[:4])

    def test_ties_resolved_by_library_index(self):
        lib = library([0, 0, 1, 1], [0, 0, 1, 1], [0, 0, 1, 1], [0, 0, 1, 1])
        pruned = decrease_ensemble(lib, 3)
        assert [c.param("seed") for c in pruned.configs()] == [0, 1, 2]

    def test_threshold_mode(self):
        block = [0, 0, 0, 1, 1, 1, 2, 2, 2]
        d1 = [0, 1, 2, 0, 1, 2, 0, 1, 2]
        d2 = [2, 1, 0, 2, 1, 0, 2, 1, 0]
        lib = library(block, block, block, d1, d2)
        scores = member_aami(lib)
        cutoff = (scores[:3].min() + scores[3:].max()) / 2
        pruned = decrease_ensemble(lib, max_aami=cutoff)
        assert [c.param("seed") for c in pruned.configs()] == [3, 4]

    def test_threshold_keeping_all_is_identity(self):
        lib = library([0, 0, 1, 1], [0, 1, 0, 1])
        assert decrease_ensemble(lib, max_aami=1.0) is lib

    def test_threshold_too_strict(self):
        lib = library([0, 0, 1, 1], [0, 1, 0, 1])
        with pytest.raises(ValueError, match="at least 2"):
            decrease_ensemble(lib, max_aami=-0.5)


class TestRunStrategies:
    def test_six_ids_in_order(self, blob_outcomes):
        assert [o.strategy_id for o in blob_outcomes] == list(STRATEGY_IDS)

    def test_unanimous_library(self):
        labels = np.repeat([0, 1, 2], 8)
        lib = library(labels, labels, labels, labels)
        X = np.column_stack([labels * 5.0, np.zeros(labels.size)])
        outcomes = run_strategies(X, lib)
        for outcome in outcomes:
            assert ami(outcome.partition, Partition(labels)) == pytest.approx(1.0)

    def test_keep_equals_m_stages_coincide(self, blob_outcomes):
        by_id = {o.strategy_id: o for o in blob_outcomes}
        for method in ("CC", "HM", "ANMI"):
            first = by_id[f"{method}-Stg1"].partition.labels
            second = by_id[f"{method}-Stg2"].partition.labels
            assert np.array_equal(first, second)

    def test_noisy_recovery(self, blob_setup, blob_outcomes):
        _, truth, _ = blob_setup
        for outcome in blob_outcomes:
            assert ami(outcome.partition, truth) >= 0.8

    def test_cc_references_consensus(self, blob_outcomes):
        for outcome in blob_outcomes:
            if outcome.method == "CC":
                assert outcome.config is None
                assert np.array_equal(
                    outcome.partition.labels, outcome.consensus.partition.labels
                )

    def test_members_referenced(self, blob_setup, blob_outcomes):
        _, _, lib = blob_setup
        texts = lib.texts()
        for outcome in blob_outcomes:
            if outcome.method != "CC":
                assert outcome.config.text in texts
                index = texts.index(outcome.config.text)
                assert np.array_equal(
                    outcome.partition.labels, lib.partitions()[index].labels
                )

    def test_deterministic(self):
        X, truth = make_blobs_simple(90, 3, dims=2, separation=9.0, seed=2)
        members = noisy_ensemble(truth, 6, noise_fraction=0.1, seed=4)
        lib = EnsembleLibrary(
            [
                (ClustererConfig("kmeans", k=3, seed=i), Partition(member))
                for i, member in enumerate(members)
            ]
        )
        first = run_strategies(X, lib, seed=1)
        second = run_strategies(X, lib, seed=1)
        for a, b in zip(first, second):
            assert a.strategy_id == b.strategy_id
            assert np.array_equal(a.partition.labels, b.partition.labels)
            assert a.config == b.config

    def test_row_mismatch_rejected(self, blob_setup):
        _, _, lib = blob_setup
        with pytest.raises(ValueError, match="match"):
            run_strategies(np.zeros((10, 2)), lib)


class TestProfileAami:
    def test_identical_profiles_score_one(self):
        v = np.array([0, 0, 1, 1, 2])
        assert profile_aami({200: v, 300: v.copy()}) == {200: 1.0, 300: 1.0}

    def test_needs_two_profiles(self):
        with pytest.raises(ValueError, match="two profiles"):
            profile_aami({200: np.array([0, 1])})

    def test_mean_over_others(self):
        a = np.array([0, 0, 1, 1])
        b = np.array([0, 1, 0, 1])
        c = np.array([0, 0, 1, 1])
        result = profile_aami({1: a, 2: b, 3: c})
        assert result[1] == pytest.approx((ami(a, b) + ami(a, c)) / 2)
        assert result[3] == pytest.approx((ami(c, a) + ami(c, b)) / 2)


@pytest.fixture(scope="module")
def blob_matrix():
    X, truth = make_blobs_simple(600, 3, dims=2, separation=8.0, seed=1)
    return X, truth


class TestSampleSizeSearch:
    def test_report_structure(self, blob_matrix):
        X, _ = blob_matrix
        report = sample_size_search(
            X, sizes=(100, 200, 300), ks=(2, 3, 4), metrics=("SI", "CHI"), seeds=(0, 1)
        )
        assert report.sizes == (100, 200, 300)
        assert report.skipped == ()
        expected_keys = {
            (metric, "random", size)
            for metric in ("SI", "CHI")
            for size in (100, 200, 300)
        }
        assert set(report.aami) == expected_keys
        for value in report.aami.values():
            assert -0.5 <= value <= 1.0 + 1e-12

    def test_oversized_skipped(self, blob_matrix):
        X, _ = blob_matrix
        report = sample_size_search(
            X, sizes=(100, 200, 5000), ks=(2, 3), metrics=("SI",), seeds=(0,)
        )
        assert report.sizes == (100, 200)
        assert len(report.skipped) == 1
        size, reason = report.skipped[0]
        assert size == 5000 and "exceeds" in reason
        assert all(key[2] != 5000 for key in report.aami)

    def test_undersized_skipped(self, blob_matrix):
        X, _ = blob_matrix
        report = sample_size_search(
            X, sizes=(3, 100, 200), ks=(2, 3, 4), metrics=("SI",), seeds=(0,)
        )
        assert report.sizes == (100, 200)
        assert report.skipped[0][0] == 3
        assert "below" in report.skipped[0][1]

    def test_too_few_usable_sizes(self, blob_matrix):
        X, _ = blob_matrix
        with pytest.raises(ValueError, match="two usable"):
            sample_size_search(X, sizes=(5000, 6000), ks=(2,), metrics=("SI",), seeds=(0,))

    def test_sizes_must_ascend(self, blob_matrix):
        X, _ = blob_matrix
        with pytest.raises(ValueError, match="ascending"):
            sample_size_search(X, sizes=(200, 200, 300), ks=(2,), metrics=("SI",))

    def test_stratified_requires_strata(self, blob_matrix):
        X, _ = blob_matrix
        with pytest.raises(ValueError, match="strata"):
            sample_size_search(
                X, sizes=(100, 200), ks=(2,), metrics=("SI",), strategies=("stratified",)
            )

    def test_stratified_runs_with_strata(self, blob_matrix):
        X, truth = blob_matrix
        strata = np.array([f"c{label}" for label in truth])
        report = sample_size_search(
            X,
            sizes=(100, 200),
            ks=(2, 3),
            metrics=("SI",),
            seeds=(0,),
            strata=strata,
        )
        strategies = {key[1] for key in report.aami}
        assert strategies == {"random", "stratified"}

    def test_unknown_metric_rejected(self, blob_matrix):
        X, _ = blob_matrix
        with pytest.raises(ValueError, match="metric id"):
            sample_size_search(X, sizes=(100, 200), ks=(2,), metrics=("XX",))

    def test_unknown_strategy_rejected(self, blob_matrix):
        X, _ = blob_matrix
        with pytest.raises(ValueError, match="sampling strategy"):
            sample_size_search(
                X, sizes=(100, 200), ks=(2,), metrics=("SI",), strategies=("grid",)
            )

    def test_deterministic(self, blob_matrix):
        X, _ = blob_matrix
        kwargs = dict(sizes=(100, 200, 300), ks=(2, 3), metrics=("SI", "DB"), seeds=(0, 1))
        first = sample_size_search(X, **kwargs)
        second = sample_size_search(X, **kwargs)
        assert first.aami == second.aami

    def test_curve_and_best_size(self, blob_matrix):
        X, _ = blob_matrix
        report = sample_size_search(
            X, sizes=(100, 200, 300), ks=(2, 3), metrics=("SI",), seeds=(0, 1)
        )
        curve = report.curve("SI", "random")
        assert [size for size, _ in curve] == [100, 200, 300]
        best = report.best_size("SI", "random")
        top = max(value for _, value in curve)
        assert report.aami[("SI", "random", best)] == top

    def test_chi_profile_varies_more(self, blob_matrix):
        X, _ = blob_matrix
        report = sample_size_search(
            X,
            sizes=(120, 240, 360, 480, 600),
            ks=(2, 3, 4, 5),
            metrics=("SI", "CHI"),
            seeds=(0, 1, 2),
        )
        si = np.var([value for _, value in report.curve("SI", "random")])
        chi = np.var([value for _, value in report.curve("CHI", "random")])
        assert chi > si

    def test_paper_defaults(self):
        assert DEFAULT_SAMPLE_SIZES[0] == 5000
        assert DEFAULT_SAMPLE_SIZES[-1] == 30000
        assert DEFAULT_SAMPLE_SIZES[1] - DEFAULT_SAMPLE_SIZES[0] == 1000
        assert DEFAULT_SAMPLE_KS == tuple(range(2, 31))


class TestSelectMetricByVariance:
    def test_wider_spread_wins(self):
        assert select_metric_by_variance({"DB": [0.4, 0.6], "SI": [0.0, 1.0]}) == "SI"

    def test_constant_tie_breaks_by_id_order(self):
        picked = select_metric_by_variance({"DB": [0.5, 0.5], "SI": [0.2, 0.2]})
        assert picked == "SI"

    def test_matches_direct_scan(self):
        rng = np.random.default_rng(13)
        table = {metric: rng.random(20).tolist() for metric in ("SI", "DI", "CHI", "DB")}
        variances = {metric: np.var(values, ddof=1) for metric, values in table.items()}
        expected = max(("SI", "DI", "CHI", "DB"), key=lambda m: variances[m])
        assert select_metric_by_variance(table) == expected

    def test_short_sequence_rejected(self):
        with pytest.raises(ValueError, match="at least 2"):
            select_metric_by_variance({"SI": [0.5]})

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="no metric"):
            select_metric_by_variance({})

    def test_foreign_ids_rank_after_known(self):
        assert select_metric_by_variance({"XX": [0.0, 1.0], "SI": [0.0, 1.0]}) == "SI"
        assert select_metric_by_variance({"XX": [0.0, 1.0], "YY": [0.0, 2.0]}) == "YY"


@pytest.fixture(scope="module")
def scored_library():
    X, truth = make_blobs_simple(90, 3, dims=2, separation=10.0, seed=6)
    rng = np.random.default_rng(6)
    members = [
        (ClustererConfig("kmeans", k=3, seed=0), Partition(truth)),
        (
            ClustererConfig("kmeans", k=3, seed=1),
            Partition.from_labels(rng.integers(0, 3, size=90)),
        ),
        (
            ClustererConfig("kmeans", k=2, seed=2),
            Partition(np.where(truth == 2, 1, truth)),
        ),
    ]
    return X, EnsembleLibrary(members)


class TestOptimalCandidates:
    def test_max_better_ordering(self, scored_library):
        X, lib = scored_library
        candidates = optimal_candidates(lib, X, "SI")
        scores = [compute_metric("SI", X, p) for p in lib.partitions()]
        expected = [lib.configs()[i] for i in np.argsort(scores)[::-1]]
        assert [config for config, _ in candidates] == expected
        assert candidates[0][1] == pytest.approx(max(scores))

    def test_min_better_ordering(self, scored_library):
        X, lib = scored_library
        candidates = optimal_candidates(lib, X, "DB")
        scores = [compute_metric("DB", X, p) for p in lib.partitions()]
        assert candidates[0][1] == pytest.approx(min(scores))

    def test_top_limits_length(self, scored_library):
        X, lib = scored_library
        assert len(optimal_candidates(lib, X, "SI", top=2)) == 2

    def test_unscorable_members_skipped(self, scored_library):
        X, lib = scored_library
        members = list(lib) + [
            (ClustererConfig("kmeans", k=1, seed=9), Partition(np.zeros(90, dtype=int)))
        ]
        extended = EnsembleLibrary(members)
        candidates = optimal_candidates(extended, X, "SI")
        assert len(candidates) == 3
        assert all(config.param("seed") != 9 for config, _ in candidates)

    def test_unknown_metric_rejected(self, scored_library):
        X, lib = scored_library
        with pytest.raises(ValueError, match="metric id"):
            optimal_candidates(lib, X, "XX")

    def test_no_scorable_member(self):
        flat = Partition(np.zeros(12, dtype=int))
        members = [
            (ClustererConfig("kmeans", k=1, seed=0), flat),
            (ClustererConfig("kmeans", k=1, seed=1), flat),
        ]
        lib = EnsembleLibrary(members)
        with pytest.raises(ValueError, match="no library member"):
            optimal_candidates(lib, np.zeros((12, 2)), "SI")


def outcome_pairs(values, configs=None):
    """Six (outcome, value) pairs in id order; configs keyed by strategy id."""
    configs = configs or {}
    fallback = ClustererConfig("kmeans", k=2, seed=99)
    pairs = []
    for sid in STRATEGY_IDS:
        if sid.startswith("CC"):
            outcome = StrategyOutcome(sid, _PART, None, _CONS)
        else:
            outcome = StrategyOutcome(sid, _PART, configs.get(sid, fallback))
        pairs.append((outcome, values[sid]))
    return pairs


def rows_by_id(rows):
    return {row.strategy_id: row for row in rows}


def top5(*configs_and_values):
    return list(configs_and_values)


_OPT = [
    (ClustererConfig("agglomerative", k=30, linkage="ward", distance="L2"), 1.0),
    (ClustererConfig("kmeans", k=30, seed=0), 0.98),
    (ClustererConfig("kmeans", k=25, seed=0), 0.95),
    (ClustererConfig("birch", k=30, threshold=0.5), 0.92),
    (ClustererConfig("kmeans", k=20, seed=0), 0.90),
]


class TestRankStrategies:
    def test_exact_match_at_zero_closeness_ranks_first(self):
        values = {
            "CC-Stg1": 0.7,
            "HM-Stg1": 1.0,
            "ANMI-Stg1": 0.8,
            "CC-Stg2": 0.6,
            "HM-Stg2": 0.75,
            "ANMI-Stg2": 0.5,
        }
        rows = rows_by_id(
            rank_strategies(_OPT, outcome_pairs(values, {"HM-Stg1": _OPT[0][0]}))
        )
        row = rows["HM-Stg1"]
        assert row.exact_match
        assert row.closeness == pytest.approx(0.0)
        assert row.rank_weighted == 1
        assert row.weight == pytest.approx(0.0)
        assert row.rank == 1

    def test_no_matches_rank_by_closeness(self):
        values = {
            "CC-Stg1": 1.0,
            "HM-Stg1": 0.9,
            "ANMI-Stg1": 0.8,
            "CC-Stg2": 0.7,
            "HM-Stg2": 0.6,
            "ANMI-Stg2": 0.5,
        }
        rows = rows_by_id(rank_strategies(_OPT, outcome_pairs(values)))
        assert all(row.rank_weighted == 6 for row in rows.values())
        assert [rows[sid].rank for sid in STRATEGY_IDS] == [1, 2, 3, 4, 5, 6]
        assert rows["ANMI-Stg2"].closeness == pytest.approx(1.0)

    def test_cc_inherits_hm_coefficient(self):
        values = {
            "CC-Stg1": 0.9,
            "HM-Stg1": 0.97,
            "ANMI-Stg1": 0.8,
            "CC-Stg2": 0.7,
            "HM-Stg2": 0.6,
            "ANMI-Stg2": 0.5,
        }
        rows = rows_by_id(
            rank_strategies(_OPT, outcome_pairs(values, {"HM-Stg1": _OPT[1][0]}))
        )
        assert rows["HM-Stg1"].rank_weighted == 2
        assert rows["HM-Stg1"].exact_match
        assert rows["CC-Stg1"].rank_weighted == 2
        assert not rows["CC-Stg1"].exact_match
        assert rows["CC-Stg1"].weight == pytest.approx(2 * rows["CC-Stg1"].closeness)
        assert rows["CC-Stg2"].rank_weighted == 6

    def test_equal_values_rank_by_strategy_order(self):
        values = {sid: 0.9 for sid in STRATEGY_IDS}
        rows = rank_strategies(_OPT, outcome_pairs(values))
        assert [row.closeness for row in rows] == [0.0] * 6
        assert [row.rank for row in rows] == [1, 2, 3, 4, 5, 6]

    def test_hand_computed_case(self):
        values = {
            "CC-Stg1": 0.9,
            "HM-Stg1": 1.0,
            "ANMI-Stg1": 0.8,
            "CC-Stg2": 0.7,
            "HM-Stg2": 0.95,
            "ANMI-Stg2": 0.5,
        }
        configs = {"HM-Stg1": _OPT[2][0], "ANMI-Stg2": _OPT[0][0]}
        rows = rows_by_id(rank_strategies(_OPT, outcome_pairs(values, configs)))
        # diffs .1 0 .2 .3 .05 .5 scale to .2 0 .4 .6 .1 1
        expected_closeness = {
            "CC-Stg1": 0.2,
            "HM-Stg1": 0.0,
            "ANMI-Stg1": 0.4,
            "CC-Stg2": 0.6,
            "HM-Stg2": 0.1,
            "ANMI-Stg2": 1.0,
        }
        expected_rw = {
            "CC-Stg1": 3,
            "HM-Stg1": 3,
            "ANMI-Stg1": 6,
            "CC-Stg2": 6,
            "HM-Stg2": 6,
            "ANMI-Stg2": 1,
        }
        expected_rank = {
            "CC-Stg1": 2,
            "HM-Stg1": 1,
            "ANMI-Stg1": 5,
            "CC-Stg2": 6,
            "HM-Stg2": 3,
            "ANMI-Stg2": 4,
        }
        for sid in STRATEGY_IDS:
            assert rows[sid].closeness == pytest.approx(expected_closeness[sid])
            assert rows[sid].rank_weighted == expected_rw[sid]
            assert rows[sid].weight == pytest.approx(
                expected_rw[sid] * expected_closeness[sid]
            )
            assert rows[sid].rank == expected_rank[sid]
        assert rows["HM-Stg1"].exact_match and rows["ANMI-Stg2"].exact_match

    def test_rank_one_has_minimal_weight(self):
        rng = np.random.default_rng(17)
        for _ in range(5):
            values = {sid: float(v) for sid, v in zip(STRATEGY_IDS, rng.random(6))}
            rows = rank_strategies(_OPT, outcome_pairs(values))
            weights = {row.rank: row.weight for row in rows}
            assert weights[1] == min(row.weight for row in rows)

    def test_rows_keep_input_order(self):
        values = {sid: 0.5 + 0.05 * i for i, sid in enumerate(STRATEGY_IDS)}
        pairs = outcome_pairs(values)
        reordered = pairs[::-1]
        rows = rank_strategies(_OPT, reordered)
        assert [row.strategy_id for row in rows] == [o.strategy_id for o, _ in reordered]
        baseline = {row.strategy_id: row.rank for row in rank_strategies(_OPT, pairs)}
        assert {row.strategy_id: row.rank for row in rows} == baseline

    def test_optimal_list_validation(self):
        values = {sid: 0.5 for sid in STRATEGY_IDS}
        pairs = outcome_pairs(values)
        with pytest.raises(ValueError, match="empty"):
            rank_strategies([], pairs)
        with pytest.raises(ValueError, match="at most 5"):
            rank_strategies(_OPT + [(ClustererConfig("kmeans", k=2, seed=5), 0.1)], pairs)

    def test_outcome_coverage_validation(self):
        values = {sid: 0.5 for sid in STRATEGY_IDS}
        pairs = outcome_pairs(values)
        with pytest.raises(ValueError, match="six strategy ids"):
            rank_strategies(_OPT, pairs[:5])
        with pytest.raises(ValueError, match="six strategy ids"):
            rank_strategies(_OPT, pairs[:5] + [pairs[0]])

    def test_short_optimal_list_accepted(self):
        values = {sid: 0.5 for sid in STRATEGY_IDS}
        configs = {"HM-Stg2": _OPT[1][0]}
        rows = rows_by_id(
            rank_strategies(_OPT[:2], outcome_pairs(values, configs))
        )
        assert rows["HM-Stg2"].rank_weighted == 2


class TestEvaluationReport:
    def build(self, optimal=None):
        values = {
            "CC-Stg1": 0.9,
            "HM-Stg1": 1.0,
            "ANMI-Stg1": 0.8,
            "CC-Stg2": 0.7,
            "HM-Stg2": 0.95,
            "ANMI-Stg2": 0.5,
        }
        configs = {"HM-Stg1": _OPT[0][0]}
        return evaluation_report(
            optimal if optimal is not None else _OPT,
            outcome_pairs(values, configs),
            "SI",
        )

    def test_rows_match_rank_strategies(self):
        report = self.build()
        values = {
            "CC-Stg1": 0.9,
            "HM-Stg1": 1.0,
            "ANMI-Stg1": 0.8,
            "CC-Stg2": 0.7,
            "HM-Stg2": 0.95,
            "ANMI-Stg2": 0.5,
        }
        expected = rank_strategies(
            _OPT, outcome_pairs(values, {"HM-Stg1": _OPT[0][0]})
        )
        assert list(report.rows) == expected
        assert report.notes == ()

    def test_short_optimal_noted(self):
        report = self.build(optimal=_OPT[:3])
        assert len(report.notes) == 1
        assert "3 optimal candidates" in report.notes[0]

    def test_csv_layout(self, tmp_path):
        report = self.build()
        path = tmp_path / "ranking.csv"
        report.write_csv(path, header_comments=["config_hash=abc123"])
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "# config_hash=abc123"
        records = list(csv.reader(lines[1:]))
        header, body = records[0], records[1:]
        assert header[0] == "strategy" and header[-1] == "rank"
        assert len(body) == 6
        by_id = {cells[0]: cells for cells in body}
        cc = by_id["CC-Stg1"]
        assert cc[4] == "CSPA" and cc[5] == ""
        hm = by_id["HM-Stg1"]
        assert hm[1] == "agglomerative"
        assert hm[6] == "1"  # exact match flag
        assert hm[3] == "SI-1.000000"
        for cells in body:
            float(cells[7])  # closeness parses
            assert cells[10].isdigit()

    def test_note_written_as_comment(self, tmp_path):
        report = self.build(optimal=_OPT[:2])
        path = tmp_path / "ranking.csv"
        report.write_csv(path)
        first = path.read_text(encoding="utf-8").splitlines()[0]
        assert first.startswith("# only 2 optimal candidates")


class TestHmVersusCcScores:
    def test_hm_at_least_cc_in_most_trials(self):
        # library mixes exact recoveries with noisy members, as fitted
        # libraries do; selection should not fall below the consensus
        metrics = ("SI", "CHI", "DB")
        wins = 0
        trials = 50
        for trial in range(trials):
            X, truth = make_blobs_simple(120, 3, dims=2, separation=9.0, seed=100 + trial)
            members = [truth.copy(), truth.copy()]
            members += noisy_ensemble(truth, 6, noise_fraction=0.15, seed=200 + trial)
            lib = EnsembleLibrary(
                [
                    (ClustererConfig("kmeans", k=3, seed=i), Partition(member))
                    for i, member in enumerate(members)
                ]
            )
            suite = consensus_suite(lib, seed=trial)
            chosen = select_consensus(lib, suite)
            _, hm_part = hyperparameter_match(lib, chosen.partition)
            table = {
                metric: scale_unit(
                    [compute_metric(metric, X, p) for p in lib.partitions()],
                    METRIC_ORIENTATION[metric],
                )
                for metric in metrics
            }
            metric = select_metric_by_variance(table)
            hm_score = compute_metric(metric, X, hm_part)
            cc_score = compute_metric(metric, X, chosen.partition)
            if METRIC_ORIENTATION[metric] == MIN_BETTER:
                wins += hm_score <= cc_score + 1e-12
            else:
                wins += hm_score >= cc_score - 1e-12
        assert wins >= 0.8 * trials
