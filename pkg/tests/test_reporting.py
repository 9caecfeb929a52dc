# -------------------------------------------
# Author: Nils Gies
# -------------------------------------------
"""Pytest tests for report files and the binary path dump."""
# -------------------------------------------
import numpy as np
import orjson
import pandas as pd
import pytest

from app.engine.benchmarks import lqg_po
from app.engine.forward import simulate_randomized_batch
from app.engine.model import make_uniform_grid
from app.utils.reporting import (
    PATHS_HEADER,
    dump_json,
    read_paths,
    write_metadata,
    write_paths,
    write_report,
    write_table,
)
from app.utils.validation import ValidationError


@pytest.fixture
def batch():
    bench = lqg_po()
    tgrid = make_uniform_grid(bench.spec.horizon, 4)
    return simulate_randomized_batch(bench.spec, bench.grid, tgrid, 10, seed=0)


def test_report_is_sorted_and_stable(tmp_path):
    payload = {"y0": 0.5, "problem": "bangbang1d", "values": np.array([1.0, 2.0])}
    first = write_report(tmp_path / "a", payload).read_bytes()
    second = write_report(tmp_path / "b", payload).read_bytes()
    assert first == second
    assert list(orjson.loads(first)) == ["problem", "values", "y0"]


def test_metadata_carries_hash_and_extras(tmp_path):
    path = write_metadata(tmp_path, "deadbeef", {"elapsed_seconds": 1.5})
    data = orjson.loads(path.read_bytes())
    assert data["config_hash"] == "deadbeef"
    assert data["elapsed_seconds"] == 1.5
    assert {"timestamp", "host", "python", "numpy"} <= set(data)


def test_table_round_trip(tmp_path):
    frame = pd.DataFrame({"knot": [0, 1], "mean_value": [0.1, 0.25]})
    path = write_table(tmp_path, "table.csv", frame)
    assert pd.read_csv(path).equals(frame)


def test_path_dump_header(tmp_path, batch):
    path = write_paths(tmp_path, batch)
    raw = path.read_bytes()
    magic, version, steps, n, d, m, size = PATHS_HEADER.unpack_from(raw)
    assert PATHS_HEADER.size == 32
    assert (magic, version, steps, n, d, m, size) == (b"RBSD", 1, 4, 3, 1, 1, 10)
    assert len(raw) == 32 + 8 * (10 * 5 * 3 + 10 * 4 * 1 + 10 * 4 * 1)


def test_path_dump_read_back(tmp_path, batch):
    arrays = read_paths(write_paths(tmp_path, batch))
    assert np.array_equal(arrays["x"], batch.x)
    assert np.array_equal(arrays["w_inc"], batch.w_inc)
    assert np.array_equal(arrays["v_inc"], batch.v_inc)


def test_foreign_file_is_rejected(tmp_path):
    path = tmp_path / "paths.bin"
    path.write_bytes(b"NOPE" + bytes(28))
    with pytest.raises(ValidationError):
        read_paths(path)
    path.write_bytes(b"RB")
    with pytest.raises(ValidationError):
        read_paths(path)


def test_dump_json_handles_numpy():
    assert orjson.loads(dump_json({"a": np.float64(1.5), "b": np.arange(2)})) == {"a": 1.5, "b": [0, 1]}
