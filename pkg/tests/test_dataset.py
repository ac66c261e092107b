import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radmm.dataset import (
    CsvParseError,
    DataError,
    Dataset,
    Schema,
    SchemaError,
    load_csv,
    partition,
    preprocess,
    read_dataset,
    synthesize,
    write_dataset,
)
from radmm.objective import ErmParams, centralized_solve, logistic_loss
from radmm.topology import complete_graph, path_graph, random_connected_graph

NUMERIC_SCHEMA = Schema({"a": "numeric", "b": "numeric", "y": "label"}, positive_labels=("1",))


def write(tmp_path, text, name="t.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_three_rows(tmp_path):
    p = write(tmp_path, "a,b,y\n1,2,1\n3,4,0\n5,6,1\n")
    table = load_csv(p, NUMERIC_SCHEMA)
    assert len(table.rows) == 3
    assert table.rows[1] == {"a": 3.0, "b": 4.0, "y": "0"}
    assert table.missing == [False, False, False]


def test_empty_cell_flagged_missing(tmp_path):
    p = write(tmp_path, "a,b,y\n1,,1\n3,4,0\n")
    table = load_csv(p, NUMERIC_SCHEMA)
    assert table.missing == [True, False]
    assert table.rows[0]["b"] is None


def test_label_column_absent(tmp_path):
    p = write(tmp_path, "a,b\n1,2\n")
    with pytest.raises(SchemaError):
        load_csv(p, NUMERIC_SCHEMA)


def test_parse_error_reports_line(tmp_path):
    p = write(tmp_path, "a,b,y\n1,2,1\n1,x,0\n")
    with pytest.raises(CsvParseError) as info:
        load_csv(p, NUMERIC_SCHEMA)
    assert info.value.lineno == 3


def test_schema_needs_one_label():
    with pytest.raises(SchemaError):
        Schema({"a": "numeric"}, positive_labels=("1",))
    with pytest.raises(SchemaError):
        Schema({"a": "weird", "y": "label"})


def test_schema_from_mapping():
    s = Schema.from_mapping({"column.a": "numeric", "column.y": "label", "label.positive": ">50K, >50K."})
    assert s.positive_labels == (">50K", ">50K.")
    assert s.label_column == "y"


def test_single_column_scaling(tmp_path):
    schema = Schema({"a": "numeric", "y": "label"}, positive_labels=("1",))
    p = write(tmp_path, "a,y\n2,1\n4,0\n")
    ds = preprocess(load_csv(p, schema), schema)
    assert np.allclose(ds.features[:, 0], [0.5, 1.0])
    assert ds.labels.tolist() == [1.0, -1.0]


def test_preprocess_one_hot_and_drop(tmp_path):
    schema = Schema({"a": "numeric", "c": "categorical", "y": "label"}, positive_labels=("yes",))
    p = write(tmp_path, "a,c,y\n3,red,yes\n1,?,no\n0,blue,no\n")
    ds = preprocess(load_csv(p, schema), schema)
    # a, then blue/red indicators in sorted order
    assert ds.features.shape == (2, 3)
    expected_first = np.array([1.0, 0.0, 1.0]) / np.sqrt(2)
    assert np.allclose(ds.features[0], expected_first)
    assert np.allclose(ds.features[1], [0.0, 1.0, 0.0])


def test_preprocess_errors(tmp_path):
    schema = Schema({"a": "numeric", "y": "label"}, positive_labels=("1",))
    with pytest.raises(DataError):
        preprocess(load_csv(write(tmp_path, "a,y\n1,1\n2,1\n"), schema), schema)
    with pytest.raises(DataError):
        preprocess(load_csv(write(tmp_path, "a,y\n,1\n2,\n", "m.csv"), schema), schema)


@settings(max_examples=40, deadline=None)
@given(
    st.lists(
        st.tuples(st.floats(-1e6, 1e6), st.floats(-1e3, 1e3), st.sampled_from(["p", "q", "r"]), st.booleans()),
        min_size=2,
        max_size=30,
    ).filter(lambda rows: len({r[3] for r in rows}) == 2)
)
def test_preprocess_invariants(rows):
    from radmm.dataset import RawTable

    schema = Schema({"a": "numeric", "b": "numeric", "c": "categorical", "y": "label"}, positive_labels=("T",))
    table = RawTable(
        columns=["a", "b", "c", "y"],
        rows=[{"a": a, "b": b, "c": c, "y": "T" if lab else "F"} for a, b, c, lab in rows],
        missing=[False] * len(rows),
    )
    ds = preprocess(table, schema)
    assert np.linalg.norm(ds.features, axis=1).max() <= 1 + 1e-12
    assert set(np.unique(ds.labels)) <= {-1.0, 1.0}
    assert ds.features.shape == (len(rows), 2 + len({r[2] for r in rows}))


def test_dataset_rejects_bad_inputs():
    with pytest.raises(DataError):
        Dataset(np.array([[2.0, 0.0]]), np.array([1.0]))
    with pytest.raises(DataError):
        Dataset(np.array([[0.1, 0.0]]), np.array([0.0]))


def test_even_shuffle_sizes():
    ds = synthesize(10, 2, seed=0)
    shards = partition(ds, complete_graph(3), "even_shuffle", seed=0)
    assert sorted(len(s) for s in shards) == [3, 3, 4]


def test_partition_deterministic():
    ds = synthesize(40, 3, seed=2)
    g = random_connected_graph(4, 0.6, seed=1)
    a = partition(ds, g, "even_shuffle", seed=5)
    b = partition(ds, g, "even_shuffle", seed=5)
    for x, y in zip(a, b):
        assert np.array_equal(x.features, y.features) and np.array_equal(x.labels, y.labels)


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 60), st.integers(2, 3), st.integers(0, 10_000), st.booleans())
def test_partition_is_disjoint_cover(n, nodes, seed, fractions):
    ds = synthesize(max(n, 2 * nodes), 2, seed=seed)
    g = path_graph(nodes)
    strategy = [1.0 / nodes] * nodes if fractions else "even_shuffle"
    shards = partition(ds, g, strategy, seed)
    assert sum(len(s) for s in shards) == len(ds)
    stacked = np.vstack([np.column_stack([s.features, s.labels]) for s in shards])
    original = np.column_stack([ds.features, ds.labels])
    assert np.array_equal(np.unique(stacked, axis=0), np.unique(original, axis=0))
    assert sorted(map(tuple, stacked)) == sorted(map(tuple, original))
    if not fractions:
        sizes = [len(s) for s in shards]
        assert max(sizes) - min(sizes) <= 1
    assert [s.node_id for s in shards] == list(range(nodes))


def test_partition_errors():
    ds = synthesize(10, 2, seed=0)
    with pytest.raises(DataError):
        partition(ds, path_graph(2), [0.5, 0.4])
    with pytest.raises(DataError):
        partition(ds, path_graph(2), [1.0, 0.0])


def test_synthesize_shape_and_norms():
    ds = synthesize(20, 2, seed=1)
    assert len(ds) == 20 and ds.dim == 2
    assert np.linalg.norm(ds.features, axis=1).max() <= 1.0
    again = synthesize(20, 2, seed=1)
    assert np.array_equal(ds.features, again.features) and np.array_equal(ds.labels, again.labels)


def test_synthesize_without_separation_is_uninformative():
    ds = synthesize(2000, 3, separation=0.0, seed=4)
    f = centralized_solve(ds, ErmParams(C=1.0, rho=1e-3, n_nodes=1))
    loss = float(logistic_loss(ds.labels * (ds.features @ f)).mean())
    assert abs(loss - np.log(2)) <= 0.05 * np.log(2)


def test_dataset_file_round_trip(tmp_path):
    ds = synthesize(15, 4, seed=3)
    p = tmp_path / "d.txt"
    write_dataset(ds, p, comments=["hello"])
    assert p.read_text().splitlines()[:2] == ["# hello", "15 4"]
    back = read_dataset(p)
    assert np.array_equal(back.features, ds.features) and np.array_equal(back.labels, ds.labels)


@pytest.mark.skipif("RADMM_ADULT_CSV" not in os.environ, reason="set RADMM_ADULT_CSV to a local copy of the UCI Adult data (with header)")
def test_adult_shape():
    from radmm.dataset import ADULT_SCHEMA

    ds = preprocess(load_csv(os.environ["RADMM_ADULT_CSV"], ADULT_SCHEMA), ADULT_SCHEMA)
    assert (len(ds), ds.dim) == (45_223, 105)
