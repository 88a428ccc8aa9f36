import numpy as np
import pytest
from sklearn.metrics import adjusted_mutual_info_score

from ensclust.data import (
    NOISE,
    UNK,
    ColumnSchema,
    DataTable,
    Partition,
    SyntheticSpec,
    generate_synthetic,
    generate_synthetic_months,
    load_partition,
    load_table,
    validate_schema,
    write_partition,
    write_table,
)
from .oracles import lloyd_kmeans


def two_column_schema():
    return [
        ColumnSchema("age", "numeric", units="years"),
        ColumnSchema("color", "categorical"),
    ]


class TestLoadTable:
    def test_csv_basic(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("age,color\n1.5,red\n2,blue\n3,red\n")
        table = load_table(path, two_column_schema())
        assert table.n_rows == 3
        assert table.column("age").tolist() == [1.5, 2.0, 3.0]
        assert table.column("color").tolist() == ["red", "blue", "red"]

    def test_csv_skips_comment_rows(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("# generated by a tool\nage,color\n1,red\n")
        table = load_table(path, two_column_schema())
        assert table.n_rows == 1

    def test_empty_categorical_becomes_unk(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("age,color\n1,\n")
        table = load_table(path, two_column_schema())
        assert table.column("color")[0] == UNK

    def test_bad_numeric_cell_is_located(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("age,color\n1,red\nxyz,blue\n")
        with pytest.raises(ValueError, match=r"row 1, column 'age'"):
            load_table(path, two_column_schema())

    def test_header_must_match_schema(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("color,age\nred,1\n")
        with pytest.raises(ValueError, match="header"):
            load_table(path, two_column_schema())

    def test_jsonl_round_trip(self, tmp_path):
        schema = two_column_schema()
        table = DataTable(schema, {"age": [1.0, 2.5], "color": ["red", UNK]})
        path = tmp_path / "t.jsonl"
        write_table(table, path)
        assert load_table(path, schema) == table

    def test_csv_round_trip_with_quoting(self, tmp_path):
        schema = [ColumnSchema("name", "categorical"), ColumnSchema("x", "numeric")]
        table = DataTable(schema, {"name": ['say "hi", friend', "plain"], "x": [0.1, -3.0]})
        path = tmp_path / "t.csv"
        write_table(table, path)
        assert load_table(path, schema) == table

    def test_csv_header_comments_round_trip(self, tmp_path):
        schema = [ColumnSchema("x", "numeric")]
        table = DataTable(schema, {"x": [1.0]})
        path = tmp_path / "t.csv"
        write_table(table, path, header_comments=["config_hash=abc123"])
        assert path.read_text().startswith("# config_hash=abc123\n")
        assert load_table(path, schema) == table


class TestValidateSchema:
    def test_clean_table_has_no_findings(self):
        table = DataTable(two_column_schema(), {"age": [1.0, 2.0], "color": ["a", "b"]})
        assert validate_schema(table) == []

    def test_non_finite_is_reported_with_location(self):
        table = DataTable(two_column_schema(), {"age": [1.0, float("nan")], "color": ["a", "b"]})
        findings = validate_schema(table)
        assert len(findings) == 1
        assert "age" in findings[0] and "row 1" in findings[0]

    def test_unknown_ordinal_level_is_reported(self):
        schema = [ColumnSchema("grade", "ordinal", levels=("low", "high"))]
        table = DataTable(schema, {"grade": ["low", "medium"]})
        findings = validate_schema(table)
        assert any("medium" in f for f in findings)

    def test_duplicate_column_names_reported(self):
        schema = [ColumnSchema("x", "numeric"), ColumnSchema("x", "numeric")]
        table = DataTable(schema, [[1.0], [2.0]])
        assert any("duplicate" in f for f in validate_schema(table))


class TestPartition:
    def test_labels_must_be_compact(self):
        with pytest.raises(ValueError, match="from_labels"):
            Partition(np.array([0, 2, 2]))

    def test_from_labels_compacts(self):
        part = Partition.from_labels([5, 5, 9, -3])
        assert part.labels.tolist() == [0, 0, 1, NOISE]
        assert part.k == 2
        assert part.noise_count == 1

    def test_cluster_sizes(self):
        part = Partition.from_labels([0, 0, 1, -1])
        assert part.cluster_sizes().tolist() == [2, 1]

    def test_relabel_is_a_permutation(self):
        part = Partition.from_labels([0, 1, 1, -1])
        swapped = part.relabel([1, 0])
        assert swapped.labels.tolist() == [1, 0, 0, NOISE]
        with pytest.raises(ValueError):
            part.relabel([0, 0])

    def test_equality_and_hash(self):
        a = Partition.from_labels([0, 1, 0])
        b = Partition.from_labels([0, 1, 0])
        assert a == b and hash(a) == hash(b)

    def test_io_round_trip(self, tmp_path):
        part = Partition.from_labels([0, 1, -1, 0])
        path = tmp_path / "p.csv"
        write_partition(part, path, header_comments=["seed=3"])
        assert load_partition(path) == part


class TestGenerateSynthetic:
    def test_single_cluster(self):
        table, truth = generate_synthetic(SyntheticSpec(n=40, k_true=1, seed=1))
        assert table.n_rows == 40
        assert truth.k == 1
        assert set(truth.labels.tolist()) == {0}

    def test_deterministic(self, tmp_path):
        spec = SyntheticSpec(n=60, k_true=3, categorical_dims=(3,), seed=7)
        t1, p1 = generate_synthetic(spec)
        t2, p2 = generate_synthetic(spec)
        assert t1 == t2 and p1 == p2
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        write_table(t1, a)
        write_table(t2, b)
        assert a.read_bytes() == b.read_bytes()

    def test_cluster_sizes_balanced(self):
        _, truth = generate_synthetic(SyntheticSpec(n=100, k_true=3, seed=0))
        sizes = sorted(truth.cluster_sizes().tolist())
        assert sizes == [33, 33, 34]

    def test_noise_fraction(self):
        _, truth = generate_synthetic(SyntheticSpec(n=200, k_true=2, noise_fraction=0.1, seed=0))
        assert truth.noise_count == 20

    def test_separated_clusters_are_recoverable(self):
        spec = SyntheticSpec(n=300, k_true=3, numeric_dims=2, separation=8.0, seed=4)
        table, truth = generate_synthetic(spec)
        X = np.column_stack([table.column(c) for c in table.numeric_names()])
        found = lloyd_kmeans(X, 3, seed=0)
        assert adjusted_mutual_info_score(truth.labels, found) > 0.97

    def test_categorical_levels_track_clusters(self):
        spec = SyntheticSpec(n=300, k_true=3, categorical_dims=(3,), categorical_bias=0.9, seed=2)
        table, truth = generate_synthetic(spec)
        col = table.column(table.categorical_names()[0])
        # the preferred level should dominate within each true cluster
        for c in range(3):
            values, counts = np.unique(col[truth.labels == c], return_counts=True)
            assert counts.max() / counts.sum() > 0.7

    def test_invalid_spec_rejected(self):
        with pytest.raises(ValueError):
            SyntheticSpec(n=10, k_true=0)
        with pytest.raises(ValueError):
            SyntheticSpec(n=10, k_true=2, noise_fraction=1.5)


class TestGenerateSyntheticMonths:
    def test_shapes_and_periods(self):
        months = ["2024-01", "2024-02"]
        out = generate_synthetic_months(
            SyntheticSpec(n=50, k_true=2, seed=0), months, stable_clusters=1
        )
        assert [table.period for table, _ in out] == months
        for table, truth in out:
            assert table.n_rows == 50
            assert truth.n == 50
            assert "subject" in table.column_names
            assert "category" in table.column_names

    def test_stable_cluster_keeps_location(self):
        months = ["2024-01", "2024-02", "2024-03"]
        out = generate_synthetic_months(
            SyntheticSpec(n=120, k_true=3, separation=10.0, seed=5), months, stable_clusters=1
        )
        centroids = []
        for table, truth in out:
            X = np.column_stack([table.column(c) for c in table.numeric_names()])
            centroids.append(X[truth.labels == 0].mean(axis=0))
        drift = max(np.linalg.norm(c - centroids[0]) for c in centroids[1:])
        assert drift < 1.0

    def test_deterministic(self):
        spec = SyntheticSpec(n=40, k_true=2, categorical_dims=(3,), seed=9)
        a = generate_synthetic_months(spec, ["2024-01", "2024-02"], stable_clusters=2)
        b = generate_synthetic_months(spec, ["2024-01", "2024-02"], stable_clusters=2)
        for (ta, pa), (tb, pb) in zip(a, b):
            assert ta == tb and pa == pb
