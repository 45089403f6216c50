import json

import numpy as np
import pytest

from linmarg.data_manager.dataset import (
    Dataset,
    fixture_path,
    format_float,
    load_dataset,
    resolve_data_path,
    write_dataset,
    write_table,
)
from linmarg.data_manager.report import RunReport, file_sha256, to_jsonable
from linmarg.errors import ParseError, ValidationError


def write_csv(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_exercise1_fixture_rows(exercise1):
    assert len(exercise1) == 4
    assert (exercise1.x[0], exercise1.y[0], exercise1.sigma_y[0]) == (-0.6, 12.2, 0.8)
    assert exercise1.x[-1] == 3.6


def test_exercise2_fixture_rows(exercise2):
    assert len(exercise2) == 4
    assert (exercise2.x[0], exercise2.y[0], exercise2.sigma_y[0]) == (-1.2, 11.2, 0.2)


def test_fixture_prefix_resolves_to_package_data():
    assert resolve_data_path("fixture:exercise2") == fixture_path("exercise2")
    assert fixture_path("exercise1").is_file()
    with pytest.raises(ValidationError):
        fixture_path("exercise3")


def test_noise_is_diagonal_variances(exercise1):
    np.testing.assert_allclose(exercise1.noise().dense_covariance(), np.diag(exercise1.sigma_y**2))


def test_crlf_bom_and_blank_lines(tmp_path):
    path = tmp_path / "data.csv"
    path.write_bytes("\ufeffx,y,sigma_y\r\n1,2,0.5\r\n\r\n3, 4 ,1\r\n".encode("utf-8"))
    data = load_dataset(path)
    np.testing.assert_array_equal(data.x, [1.0, 3.0])
    np.testing.assert_array_equal(data.y, [2.0, 4.0])


def test_parse_error_reports_line_and_column(tmp_path):
    path = write_csv(tmp_path, "x,y,sigma_y\n1,2,0.5\n3,abc,1\n")
    with pytest.raises(ParseError) as excinfo:
        load_dataset(path)
    assert excinfo.value.line == 3
    assert excinfo.value.column == 2


def test_wrong_field_count(tmp_path):
    path = write_csv(tmp_path, "x,y,sigma_y\n1,2\n")
    with pytest.raises(ParseError) as excinfo:
        load_dataset(path)
    assert excinfo.value.line == 2


def test_wrong_header(tmp_path):
    with pytest.raises(ParseError):
        load_dataset(write_csv(tmp_path, "a,b,c\n1,2,3\n"))


@pytest.mark.parametrize("row", ["1,2,0", "1,2,-0.5", "1,nan,1", "inf,2,1"])
def test_invalid_values_name_the_line(tmp_path, row):
    path = write_csv(tmp_path, f"x,y,sigma_y\n1,1,1\n{row}\n")
    with pytest.raises(ValidationError, match="строка 3"):
        load_dataset(path)


def test_empty_inputs(tmp_path):
    with pytest.raises(ParseError):
        load_dataset(write_csv(tmp_path, ""))
    with pytest.raises(ValidationError):
        load_dataset(write_csv(tmp_path, "x,y,sigma_y\n", name="header_only.csv"))


def test_missing_file(tmp_path):
    with pytest.raises(ValidationError):
        load_dataset(tmp_path / "missing.csv")


def test_dataset_validation():
    with pytest.raises(ValidationError):
        Dataset([1.0, 2.0], [1.0], [1.0, 1.0])
    with pytest.raises(ValidationError):
        Dataset([1.0], [1.0], [0.0])


def test_format_float_is_exact():
    for value in (0.1, 1 / 3, -2.700130047, 1e-300, 12345678.9):
        assert float(format_float(value)) == value


def test_write_and_reload_dataset(tmp_path, exercise1):
    path = write_dataset(tmp_path / "out" / "copy.csv", exercise1)
    again = load_dataset(path)
    np.testing.assert_array_equal(again.y, exercise1.y)
    assert path.read_text(encoding="utf-8").splitlines()[0] == "x,y,sigma_y"


def test_write_table_keeps_ints_and_strings(tmp_path):
    path = write_table(tmp_path / "t.csv", {"curve_id": [0, 1], "label": ["a", "b"], "y": [0.5, 1 / 3]})
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "curve_id,label,y"
    assert lines[1] == "0,a,0.5"
    assert lines[2].startswith("1,b,0.33333333333333331")


def test_write_table_rejects_ragged_columns(tmp_path):
    with pytest.raises(ValidationError):
        write_table(tmp_path / "t.csv", {"a": [1.0, 2.0], "b": [1.0]})


def test_to_jsonable_converts_numpy():
    value = to_jsonable({"a": np.arange(3), "b": np.float64(0.5), "c": float("inf"), "d": (1, 2)})
    assert value == {"a": [0, 1, 2], "b": 0.5, "c": "inf", "d": [1, 2]}


def test_report_hash_ignores_creation_time(tmp_path, exercise1):
    first = RunReport(command="fit-linear", outputs={"map": [1.0, 2.0]}, seed=7, created_at="2024-01-01T00:00:00+00:00")
    second = RunReport(command="fit-linear", outputs={"map": [1.0, 2.0]}, seed=7, created_at="2025-06-01T12:00:00+00:00")
    assert first.stable_hash() == second.stable_hash()
    second.outputs["map"] = [1.0, 2.5]
    assert first.stable_hash() != second.stable_hash()


def test_report_written_with_input_hash(tmp_path):
    data = write_csv(tmp_path, "x,y,sigma_y\n1,2,0.5\n")
    report = RunReport(command="scan-frequency", seed=1)
    report.add_input_file("data", data, label="data.csv")
    path = report.write(tmp_path / "run" / "scan.json")
    document = json.loads(path.read_text(encoding="utf-8"))
    assert document["inputs"]["data"] == {"path": "data.csv", "sha256": file_sha256(data)}
    assert document["report_hash"] == report.stable_hash()
    assert document["command"] == "scan-frequency"
    assert "numpy" in document["versions"]
