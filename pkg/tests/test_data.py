# tests/test_data.py
import json

import numpy as np
import pandas as pd
import pytest

from sisfactor.data import (
    INTERCEPT, dataset_from_config, design_matrix, load_dataset, read_matrix_csv, write_json, write_matrix_csv,
)
from sisfactor.errors import DataValidationError
from sisfactor.models import DataPaths, RunConfig


def write_toy_files(tmp_path, y_rows=None):
    y = pd.DataFrame(y_rows if y_rows is not None else {
        "a": [0.1, 1.2, -0.4, 2.0], "b": [1.0, 0.0, 0.5, -1.5], "c": [3.0, 2.0, 1.0, 0.0],
    })
    x = pd.DataFrame({"size": [1.0, 2.0, 6.0], "kind": ["oak", "pine", "elm"]})
    y.to_csv(tmp_path / "y.csv", index=False)
    x.to_csv(tmp_path / "x.csv", index=False)
    return DataPaths(y=str(tmp_path / "y.csv"), x=str(tmp_path / "x.csv"))

# ---------- Unit ----------

def test_design_matrix_dummies_and_intercept():
    frame = pd.DataFrame({"size": [1.0, 2.0, 6.0], "kind": ["oak", "pine", "elm"]})
    x, names = design_matrix(frame, ["kind"], True, True, "x")
    assert x.shape == (3, 4)
    assert names[0] == INTERCEPT and names[1] == "size"
    assert names[2:] == ["kind_oak", "kind_pine"]     # elm is the reference level
    assert np.all(x[:, 0] == 1.0)
    assert x[:, 1].mean() == pytest.approx(0.0)
    assert x[:, 1].std() == pytest.approx(1.0)
    assert x[:, 2:].tolist() == [[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]


def test_design_matrix_leaves_constant_columns(caplog):
    frame = pd.DataFrame({"flat": [2.0, 2.0, 2.0], "z": [1.0, 2.0, 3.0]})
    x, _ = design_matrix(frame, [], True, False, "x")
    assert np.all(x[:, 0] == 2.0)
    assert "constant column" in caplog.text


def test_design_matrix_without_standardizing():
    frame = pd.DataFrame({"z": [1.0, 2.0, 3.0]})
    x, names = design_matrix(frame, [], False, False, "w")
    assert names == ["z"] and x[:, 0].tolist() == [1.0, 2.0, 3.0]


def test_declared_categorical_must_exist():
    with pytest.raises(DataValidationError):
        design_matrix(pd.DataFrame({"z": [1.0]}), ["kind"], True, True, "x")


def test_undeclared_text_column_is_rejected():
    with pytest.raises(DataValidationError) as exc:
        design_matrix(pd.DataFrame({"kind": ["a", "b"]}), [], True, True, "x")
    assert exc.value.details == {"column": "kind"}

# ---------- Loading ----------

def test_load_gaussian_dataset(tmp_path):
    paths = write_toy_files(tmp_path)
    data = load_dataset(paths, x_categorical=["kind"])
    assert (data.n, data.p, data.q, data.c) == (4, 3, 4, 0)
    assert data.y_names == ["a", "b", "c"]
    assert data.x_names[0] == INTERCEPT


def test_load_without_meta_covariates(tmp_path):
    paths = write_toy_files(tmp_path)
    data = load_dataset(DataPaths(y=paths.y))
    assert data.x.tolist() == [[1.0], [1.0], [1.0]]
    assert data.x_names == [INTERCEPT]


def test_probit_responses_must_be_binary(tmp_path):
    paths = write_toy_files(tmp_path, {"a": [0, 1, 2], "b": [1, 0, 1], "c": [0, 0, 1]})
    with pytest.raises(DataValidationError) as exc:
        load_dataset(paths, mode="probit", x_categorical=["kind"])
    assert exc.value.details["column"] == "a"
    assert exc.value.details["row"] == 2


def test_probit_with_environmental_covariates(tmp_path):
    paths = write_toy_files(tmp_path, {"a": [0, 1, 1], "b": [1, 0, 1], "c": [0, 0, 1]})
    pd.DataFrame({"temp": [10.0, 12.0, 15.0], "site": ["n", "s", "n"]}).to_csv(tmp_path / "w.csv", index=False)
    paths = paths.model_copy(update={"w": str(tmp_path / "w.csv")})
    data = load_dataset(paths, mode="probit", x_categorical=["kind"], w_categorical=["site"])
    assert data.c == 3
    assert data.w_names == [INTERCEPT, "temp", "site_s"]


def test_row_counts_are_checked(tmp_path):
    paths = write_toy_files(tmp_path)
    pd.DataFrame({"size": [1.0, 2.0]}).to_csv(tmp_path / "x.csv", index=False)
    with pytest.raises(DataValidationError):
        load_dataset(paths)


def test_missing_and_empty_files(tmp_path):
    with pytest.raises(DataValidationError):
        load_dataset(DataPaths(y=str(tmp_path / "nope.csv")))
    (tmp_path / "empty.csv").write_text("a,b\n", encoding="utf-8")
    with pytest.raises(DataValidationError):
        load_dataset(DataPaths(y=str(tmp_path / "empty.csv")))
    with pytest.raises(DataValidationError):
        load_dataset(DataPaths())


def test_missing_value_is_located(tmp_path):
    (tmp_path / "y.csv").write_text("a,b\n1.0,2.0\n3.0,\n", encoding="utf-8")
    with pytest.raises(DataValidationError) as exc:
        load_dataset(DataPaths(y=str(tmp_path / "y.csv")))
    assert exc.value.details == {"row": 1, "column": "b"}


def test_dataset_from_config(tmp_path):
    paths = write_toy_files(tmp_path)
    config = RunConfig(command="fit", paths=paths, x_categorical=["kind"], add_intercept=False)
    data = dataset_from_config(config)
    assert data.q == 3

# ---------- Writing ----------

def test_write_json_is_sorted_and_terminated(tmp_path):
    path = write_json(tmp_path / "out" / "doc.json", {"b": np.float64(1.5), "a": np.arange(2)})
    text = path.read_text(encoding="utf-8")
    assert text.endswith("\n")
    assert list(json.loads(text)) == ["a", "b"]
    assert json.loads(text)["a"] == [0, 1]


def test_matrix_csv(tmp_path):
    path = write_matrix_csv(tmp_path / "m.csv", np.array([[1.0, 2.0], [3.0, 4.0]]), ["h0", "h1"])
    assert path.read_text(encoding="utf-8").splitlines()[0] == "h0,h1"
    assert read_matrix_csv(path).tolist() == [[1.0, 2.0], [3.0, 4.0]]
