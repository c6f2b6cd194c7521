"""Tests for loading, schema inference, splitting, and quantiles."""

import numpy as np
import pytest

from rfod.data import (
    FeatureKind,
    QuantileProfile,
    Schema,
    Table,
    infer_schema,
    load_labeled_table,
    load_table,
    load_table_strict,
    quantile,
    read_schema_json,
    split_for_eval,
    write_schema_json,
    write_table,
)
from rfod.errors import LoadError, SchemaMismatchError

NUM = FeatureKind.NUMERICAL
CAT = FeatureKind.CATEGORICAL


def write_csv(path, text):
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadTable:
    def test_basic_parse(self, tmp_path):
        p = write_csv(tmp_path / "t.csv", "a,b\n1,x\n2,y\n3,x\n")
        schema = Schema((("a", NUM), ("b", CAT)))
        table = load_table(p, schema)
        assert table.n_rows == 3
        assert table.dictionary(1) == ("x", "y")
        assert np.array_equal(table.values(0), [1.0, 2.0, 3.0])
        assert np.array_equal(table.values(1), [0, 1, 0])

    def test_missing_cell_names_row_and_column(self, tmp_path):
        p = write_csv(tmp_path / "t.csv", "a,b\n1,x\n,y\n3,x\n")
        with pytest.raises(LoadError, match="missing value at row 2, column a"):
            load_table(p, Schema((("a", NUM), ("b", CAT))))

    def test_duplicate_header_rejected(self, tmp_path):
        p = write_csv(tmp_path / "t.csv", "a,a\n1,2\n")
        with pytest.raises(LoadError, match="duplicate column"):
            load_table(p)

    def test_unparseable_numeric(self, tmp_path):
        p = write_csv(tmp_path / "t.csv", "a,b\n1,x\nzzz,y\n")
        with pytest.raises(LoadError, match="cannot parse 'zzz'"):
            load_table(p, Schema((("a", NUM), ("b", CAT))))

    def test_non_finite_numeric_rejected(self, tmp_path):
        p = write_csv(tmp_path / "t.csv", "a,b\ninf,x\n2,y\n")
        with pytest.raises(LoadError):
            load_table(p, Schema((("a", NUM), ("b", CAT))))

    def test_header_schema_mismatch(self, tmp_path):
        p = write_csv(tmp_path / "t.csv", "a,b\n1,x\n")
        with pytest.raises(LoadError, match="does not match schema"):
            load_table(p, Schema((("a", NUM), ("c", CAT))))

    def test_strict_loader_flags_schema_mismatch(self, tmp_path):
        p = write_csv(tmp_path / "t.csv", "a,c\n1,x\n")
        with pytest.raises(SchemaMismatchError):
            load_table_strict(p, Schema((("a", NUM), ("b", CAT))))

    def test_ragged_row_rejected(self, tmp_path):
        p = write_csv(tmp_path / "t.csv", "a,b\n1,x,9\n")
        with pytest.raises(LoadError, match="row 1 has 3 fields"):
            load_table(p)

    def test_quoted_fields_rfc4180(self, tmp_path):
        p = write_csv(tmp_path / "t.csv", 'a,b\n1,"x, with comma"\n2,"say ""hi"""\n')
        table = load_table(p, Schema((("a", NUM), ("b", CAT))))
        assert table.dictionary(1) == ("x, with comma", 'say "hi"')

    def test_round_trip_identical(self, tmp_path):
        p = write_csv(
            tmp_path / "t.csv",
            "a,b,c\n1.5,x,-3\n2.25,y,0.1\n99,x,7\n0.3333333333333333,z,2\n",
        )
        table = load_table(p)
        out = tmp_path / "out.csv"
        write_table(table, out)
        again = load_table(out, table.schema)
        assert table.equals(again)


class TestInferSchema:
    def test_numeric_column(self, tmp_path):
        p = write_csv(tmp_path / "t.csv", "a,b\n1.5,q\n2.0,w\n3,e\n")
        schema = infer_schema(p)
        assert schema.columns[0] == ("a", NUM)
        assert schema.columns[1] == ("b", CAT)

    def test_single_column_rejected(self, tmp_path):
        p = write_csv(tmp_path / "t.csv", "a\n1\n2\n")
        with pytest.raises(LoadError, match="at least 2 columns"):
            infer_schema(p)

    def test_empty_file_rejected(self, tmp_path):
        p = write_csv(tmp_path / "t.csv", "")
        with pytest.raises(LoadError, match="empty"):
            infer_schema(p)

    def test_integer_columns_stay_numerical_by_default(self, tmp_path):
        p = write_csv(tmp_path / "t.csv", "a,b\n1,x\n2,y\n1,x\n")
        schema = infer_schema(p, categorical_max_cardinality=4)
        assert schema.columns[0] == ("a", NUM)

    def test_integer_override_flag(self, tmp_path):
        p = write_csv(tmp_path / "t.csv", "a,b\n1,x\n2,y\n1,x\n")
        schema = infer_schema(p, categorical_max_cardinality=4, force_integer_categoricals=True)
        assert schema.columns[0] == ("a", CAT)
        # non-integer reals are never reclassified
        p2 = write_csv(tmp_path / "t2.csv", "a,b\n1.5,x\n2,y\n")
        schema2 = infer_schema(p2, categorical_max_cardinality=4, force_integer_categoricals=True)
        assert schema2.columns[0] == ("a", NUM)


class TestSchemaSidecar:
    def test_json_round_trip(self, tmp_path):
        schema = Schema((("a", NUM), ("b", CAT), ("c", NUM)))
        path = tmp_path / "schema.json"
        write_schema_json(schema, path)
        assert read_schema_json(path) == schema

    def test_duplicate_names_rejected(self):
        with pytest.raises(LoadError, match="duplicate"):
            Schema((("a", NUM), ("a", CAT)))

    def test_fewer_than_two_features_rejected(self):
        with pytest.raises(LoadError, match="at least 2"):
            Schema((("a", NUM),))


class TestLabeledLoad:
    def test_labels_extracted(self, tmp_path):
        p = write_csv(
            tmp_path / "t.csv",
            "a,b,label\n1,x,0\n2,y,1\n3,x,normal\n4,y,anomaly\n",
        )
        table, labels = load_labeled_table(p, "label")
        assert table.n_features == 2
        assert np.array_equal(labels, [0, 1, 0, 1])
        assert table.schema.label_column == "label"

    def test_bad_label_rejected(self, tmp_path):
        p = write_csv(tmp_path / "t.csv", "a,b,label\n1,x,maybe\n")
        with pytest.raises(LoadError, match="label"):
            load_labeled_table(p, "label")

    def test_missing_label_column(self, tmp_path):
        p = write_csv(tmp_path / "t.csv", "a,b\n1,x\n")
        with pytest.raises(LoadError, match="label column"):
            load_labeled_table(p, "label")


def make_table(n, seed=0):
    rng = np.random.default_rng(seed)
    schema = Schema((("a", NUM), ("b", CAT)))
    cats = rng.integers(0, 3, n)
    return Table(schema, (rng.normal(size=n), cats), (None, ("p", "q", "r")), n)


class TestSplitForEval:
    def test_counts(self):
        table = make_table(12)
        labels = np.array([0] * 10 + [1] * 2)
        split = split_for_eval(table, labels, 0.5, seed=3)
        assert split.train.n_rows == 5
        assert split.test.n_rows == 7
        assert split.test_labels.sum() == 2

    def test_deterministic(self):
        table = make_table(30)
        labels = np.array([0] * 25 + [1] * 5)
        s1 = split_for_eval(table, labels, 0.4, seed=11)
        s2 = split_for_eval(table, labels, 0.4, seed=11)
        assert np.array_equal(s1.train_row_ids, s2.train_row_ids)
        assert s1.train.equals(s2.train) and s1.test.equals(s2.test)

    def test_zero_normals_rejected(self):
        table = make_table(4)
        with pytest.raises(ValueError, match="no normal rows"):
            split_for_eval(table, np.ones(4, dtype=int), 0.5, seed=0)

    def test_empty_train_rejected(self):
        table = make_table(4)
        labels = np.array([0, 1, 1, 1])
        with pytest.raises(ValueError, match="empty training set"):
            split_for_eval(table, labels, 0.5, seed=0)

    def test_partition_properties(self):
        # |train| = floor(f * normals); every anomaly in test exactly once;
        # train and test are disjoint and cover all rows
        rng = np.random.default_rng(99)
        for _ in range(50):
            n = int(rng.integers(5, 60))
            labels = (rng.random(n) < 0.3).astype(np.int64)
            if (labels == 0).sum() == 0:
                labels[0] = 0
            frac = float(rng.uniform(0.2, 0.8))
            n_norm = int((labels == 0).sum())
            if int(np.floor(frac * n_norm)) == 0:
                continue
            table = make_table(n, seed=int(rng.integers(1 << 31)))
            split = split_for_eval(table, labels, frac, seed=int(rng.integers(1 << 31)))
            assert split.train.n_rows == int(np.floor(frac * n_norm))
            assert np.all(labels[split.train_row_ids] == 0)
            merged = np.concatenate([split.train_row_ids, split.test_row_ids])
            assert np.array_equal(np.sort(merged), np.arange(n))
            assert split.test_labels.sum() == labels.sum()


class TestQuantile:
    def profile_of(self, values):
        schema = Schema((("a", NUM), ("b", NUM)))
        arr = np.asarray(values, dtype=np.float64)
        table = Table(schema, (arr, arr.copy()), (None, None), len(values))
        return QuantileProfile.from_table(table)

    def test_interpolation_midpoint(self):
        # hand evaluation: h = (4-1)*0.5 = 1.5 -> 2 + 0.5*(3-2) = 2.5
        profile = self.profile_of([1, 2, 3, 4])
        assert quantile(profile, 0, 0.5) == pytest.approx(2.5, abs=1e-15)

    def test_endpoints(self):
        profile = self.profile_of([1, 2, 3, 4])
        assert quantile(profile, 0, 0.0) == 1.0
        assert quantile(profile, 0, 1.0) == 4.0

    def test_constant_column(self):
        profile = self.profile_of([7, 7, 7])
        for q in (0.0, 0.3, 0.99, 1.0):
            assert quantile(profile, 0, q) == 7.0

    def test_domain_errors(self):
        profile = self.profile_of([1, 2])
        with pytest.raises(ValueError):
            quantile(profile, 0, -0.1)
        with pytest.raises(ValueError):
            quantile(profile, 0, 1.1)
        with pytest.raises(ValueError):
            quantile(profile, 5, 0.5)

    def test_monotone_in_q(self):
        rng = np.random.default_rng(7)
        for _ in range(40):
            values = rng.normal(size=int(rng.integers(2, 40))) * rng.uniform(0.1, 50)
            profile = self.profile_of(values)
            qs = np.sort(rng.random(10))
            results = [quantile(profile, 0, float(q)) for q in qs]
            assert all(a <= b + 1e-12 for a, b in zip(results, results[1:]))

    def test_matches_numpy_linear_method(self):
        # independent oracle for the interpolation convention, incl. IQR endpoints
        rng = np.random.default_rng(21)
        for _ in range(30):
            values = rng.normal(size=int(rng.integers(2, 50)))
            profile = self.profile_of(values)
            for q in (0.25, 0.75, float(rng.random())):
                expected = float(np.quantile(values, q, method="linear"))
                assert quantile(profile, 0, q) == pytest.approx(expected, abs=1e-12)
