# -------------------------------------------
# Author: Nils Gies
# -------------------------------------------
"""Report writers: report.json, metadata.json, CSV tables and the binary path dump."""
# -------------------------------------------
import datetime
import logging
import platform
import struct
from pathlib import Path
from typing import Any, Optional

import numpy as np
import orjson
import pandas as pd

from app.dataclasses.paths import PathBatch
from app.utils.validation import ValidationError

logger = logging.getLogger(__name__)

JSON_OPTIONS = orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY

PATHS_MAGIC = b"RBSD"
PATHS_VERSION = 1
# magic, version, N, n, d, m, P
PATHS_HEADER = struct.Struct("<4s5IQ")


def _directory(out: str | Path) -> Path:
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def dump_json(payload: Any) -> bytes:
    return orjson.dumps(payload, option=JSON_OPTIONS)


def write_report(out: str | Path, report: dict[str, Any]) -> Path:
    """Deterministic report.json: sorted keys, no timestamps."""
    path = _directory(out) / "report.json"
    path.write_bytes(dump_json(report))
    logger.info(f"Report written to {path}")
    return path


def write_metadata(out: str | Path, config_hash: str, extra: Optional[dict[str, Any]] = None) -> Path:
    path = _directory(out) / "metadata.json"
    payload = {
        "config_hash": config_hash,
        "timestamp": datetime.datetime.now().isoformat(),
        "host": platform.node(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        **(extra or {}),
    }
    path.write_bytes(dump_json(payload))
    return path


def write_table(out: str | Path, name: str, frame: pd.DataFrame) -> Path:
    path = _directory(out) / name
    frame.to_csv(path, index=False, float_format="%.10g")
    logger.info(f"Table {name} written ({len(frame)} rows)")
    return path


def write_paths(out: str | Path, batch: PathBatch) -> Path:
    """32-byte header then row-major float64 arrays x, w_inc, v_inc."""
    size, knots, n = batch.x.shape
    d = batch.w_inc.shape[2]
    m = batch.v_inc.shape[2]
    header = PATHS_HEADER.pack(PATHS_MAGIC, PATHS_VERSION, knots - 1, n, d, m, size)
    path = _directory(out) / "paths.bin"
    with open(path, "wb") as handle:
        handle.write(header)
        for arr in (batch.x, batch.w_inc, batch.v_inc):
            handle.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    logger.info(f"Path dump written to {path} ({size} paths)")
    return path


def read_paths(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < PATHS_HEADER.size:
        raise ValidationError(f"{path} is too short for a path dump")
    magic, version, steps, n, d, m, size = PATHS_HEADER.unpack_from(raw)
    if magic != PATHS_MAGIC or version != PATHS_VERSION:
        raise ValidationError(f"{path} is not a version {PATHS_VERSION} path dump")
    shapes = {"x": (size, steps + 1, n), "w_inc": (size, steps, d), "v_inc": (size, steps, m)}
    out, offset = {}, PATHS_HEADER.size
    for name, shape in shapes.items():
        count = int(np.prod(shape))
        out[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape)
        offset += 8 * count
    return out
