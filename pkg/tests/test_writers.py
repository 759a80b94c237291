import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from mrpdesign.writers import (
    build_metadata,
    config_hash,
    jsonable,
    read_json,
    read_parquet_metadata,
    write_csv_frame,
    write_json,
    write_parquet,
)


def test_jsonable_converts_numpy_and_paths():
    doc = jsonable(
        {
            "array": np.array([[1.0, 2.0]]),
            "scalar": np.float64(0.5),
            "integer": np.int64(3),
            "path": Path("a") / "b",
            "tuple": (1, np.nan),
        }
    )
    assert doc == {
        "array": [[1.0, 2.0]],
        "scalar": 0.5,
        "integer": 3,
        "path": str(Path("a") / "b"),
        "tuple": [1, None],
    }
    json.dumps(doc, allow_nan=False)


class TestConfigHash:
    def test_independent_of_key_order(self):
        assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})

    def test_sensitive_to_values(self):
        assert config_hash({"a": 1}) != config_hash({"a": 2})

    def test_metadata_fields(self):
        metadata = build_metadata(7, {"a": 1})
        assert set(metadata) == {"version", "seed", "config_hash"}
        assert metadata["seed"] == 7
        assert len(metadata["config_hash"]) == 64


def test_json_is_byte_identical(tmp_path):
    doc = {"b": np.array([0.1, 1 / 3]), "a": {"z": 1, "y": None}}
    metadata = {"seed": 1, "version": "0", "config_hash": "abc"}
    first = write_json(doc, tmp_path / "one" / "doc.json", metadata)
    second = write_json(doc, tmp_path / "two" / "doc.json", metadata)
    assert first.read_bytes() == second.read_bytes()
    loaded = read_json(first)
    assert loaded["metadata"] == metadata
    assert loaded["b"] == [0.1, 1 / 3]


def test_csv_frame_header_and_precision(tmp_path):
    df = pd.DataFrame({"x": [1 / 3, 2.0], "y": [1, 2]})
    path = write_csv_frame(df, tmp_path / "frame.csv", {"seed": 1, "config_hash": "h"})
    lines = path.read_text().splitlines()
    assert lines[:3] == ["# config_hash: h", "# seed: 1", "x,y"]
    reloaded = pd.read_csv(path, comment="#")
    assert reloaded["x"].iloc[0] == 1 / 3


def test_parquet_schema_metadata(tmp_path):
    pytest.importorskip("pyarrow")
    df = pd.DataFrame({"t": [0, 1], "value": [0.5, 1.5]})
    metadata = build_metadata(5, {"p": 3})
    path = write_parquet(df, tmp_path / "series.parquet", metadata)
    assert read_parquet_metadata(path) == metadata
    pd.testing.assert_frame_equal(pd.read_parquet(path), df)
