import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mdpfactor.dataset import (
    DatasetError,
    TransitionDataset,
    load_dataset,
    make_schema,
    manifest_path,
    minmax_normalize,
    save_dataset,
    shuffle_column,
)
from mdpfactor.synthetic import gen_synthetic_dataset

from conftest import mixed_dataset


def test_round_trip(tmp_path, small_dataset):
    path = tmp_path / "d.csv"
    save_dataset(small_dataset, path)
    loaded = load_dataset(path)
    assert loaded == small_dataset
    assert loaded.T == 3
    assert loaded.values.tobytes() == small_dataset.values.tobytes()


def test_manifest_layout(tmp_path, small_dataset):
    path = tmp_path / "d.csv"
    save_dataset(small_dataset, path)
    manifest = json.loads(manifest_path(path).read_text())
    assert [v["name"] for v in manifest["state"]] == ["p", "q"]
    assert [v["name"] for v in manifest["next_state"]] == ["next_p", "next_q"]
    assert manifest["action"] == [{"name": "u", "kind": "discrete"}]
    header = path.read_text().splitlines()[0]
    assert header == "p,q,u,next_p,next_q"


def test_discrete_fraction_rejected(tmp_path, small_dataset):
    path = tmp_path / "d.csv"
    save_dataset(small_dataset, path)
    lines = path.read_text().splitlines()
    cells = lines[2].split(",")
    cells[1] = "1.5"
    lines[2] = ",".join(cells)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetError, match=r"line 3, column 'q'"):
        load_dataset(path)


def test_state_count_mismatch(tmp_path):
    data = gen_synthetic_dataset(3, seed=0)
    path = tmp_path / "d.csv"
    save_dataset(data, path)
    lines = path.read_text().splitlines()
    # drop the s5 column from the CSV, manifest still lists 5 state variables
    keep = [i for i, name in enumerate(lines[0].split(",")) if name != "s5"]
    path.write_text("\n".join(",".join(l.split(",")[i] for i in keep) for l in lines) + "\n")
    with pytest.raises(DatasetError, match="manifest lists 5 state variables, CSV header has 4"):
        load_dataset(path)


@pytest.mark.parametrize("body, match", [
    ("", "empty file"),
    ("p,q,u,next_p,next_q\n", "no transitions"),
    ("p,q,u,next_p,next_q\n0.1,0,1,0.2\n", "expected 5 fields"),
    ("p,q,u,next_p,next_q\n0.1,,1,0.2,1\n", "cannot parse ''"),
    ("p,q,u,next_p,next_q\nabc,0,1,0.2,1\n", "cannot parse 'abc'"),
    ("p,q,u,next_p,next_q\n0.1,-1,1,0.2,1\n", "not a non-negative integer"),
])
def test_malformed_csv(tmp_path, small_dataset, body, match):
    path = tmp_path / "d.csv"
    save_dataset(small_dataset, path)
    path.write_text(body)
    with pytest.raises(DatasetError, match=match):
        load_dataset(path)


def test_missing_manifest(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("a\n1\n")
    with pytest.raises(DatasetError, match="missing manifest"):
        load_dataset(path)


def test_empty_dataset_rejected(small_dataset):
    with pytest.raises(DatasetError, match="T >= 1"):
        TransitionDataset(small_dataset.schema, np.empty((0, 5)))


def test_schema_rules():
    with pytest.raises(DatasetError, match="duplicate"):
        make_schema([("x", "continuous"), ("x", "continuous")], [])
    with pytest.raises(DatasetError, match="unknown kind"):
        make_schema([("x", "ordinal")], [])


def test_unwritable_path(small_dataset, tmp_path):
    with pytest.raises(DatasetError, match="cannot write"):
        save_dataset(small_dataset, tmp_path / "missing" / "d.csv")


def test_values_are_read_only(small_dataset):
    with pytest.raises(ValueError):
        small_dataset.values[0, 0] = 5.0


def test_synthetic_save_is_byte_stable(tmp_path):
    for name in ("a", "b"):
        save_dataset(gen_synthetic_dataset(50, seed=7), tmp_path / f"{name}.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.manifest.json").read_bytes() == (tmp_path / "b.manifest.json").read_bytes()


def test_shuffle_single_row(small_dataset):
    one = small_dataset.with_values(small_dataset.values[:1])
    assert shuffle_column(one, "p", seed=3) == one


def test_shuffle_is_deterministic(small_dataset):
    assert shuffle_column(small_dataset, "u", 11) == shuffle_column(small_dataset, "u", 11)


def test_shuffle_permutes_values():
    schema = make_schema([("x", "continuous")], [])
    data = TransitionDataset(schema, np.array([[1.0, 0.0], [2.0, 0.0], [3.0, 0.0], [4.0, 0.0]]))
    out = shuffle_column(data, "x", seed=5)
    assert sorted(out.column("x")) == [1.0, 2.0, 3.0, 4.0]
    assert np.array_equal(out.column("next_x"), data.column("next_x"))


def test_shuffle_unknown_column(small_dataset):
    with pytest.raises(KeyError):
        shuffle_column(small_dataset, "nope", 0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), T=st.integers(1, 60), col=st.sampled_from(["x", "c", "a", "b"]))
def test_shuffle_properties(seed, T, col):
    data = mixed_dataset(np.random.default_rng(seed), T)
    out = shuffle_column(data, col, seed)
    c = data.column_index(col)
    assert np.array_equal(np.sort(out.values[:, c]), np.sort(data.values[:, c]))
    others = [i for i in range(len(data.schema)) if i != c]
    assert out.values[:, others].tobytes() == data.values[:, others].tobytes()


@settings(max_examples=30, deadline=None)
@given(values=arrays(np.float64, st.tuples(st.integers(1, 8), st.just(3)),
                     elements=st.floats(-1e300, 1e300, allow_nan=False, allow_subnormal=True)))
def test_round_trip_any_doubles(tmp_path_factory, values):
    schema = make_schema([("x", "continuous")], [("a", "continuous")])
    data = TransitionDataset(schema, values)
    path = tmp_path_factory.mktemp("rt") / "d.csv"
    save_dataset(data, path)
    assert load_dataset(path).values.tobytes() == data.values.tobytes()


def test_minmax_normalize(small_dataset):
    out, scaling = minmax_normalize(small_dataset)
    assert set(scaling) == {"p", "next_p"}
    assert out.column("p").min() == 0.0 and out.column("p").max() == 1.0
    assert np.array_equal(out.column("q"), small_dataset.column("q"))
