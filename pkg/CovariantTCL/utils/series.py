"""
Result containers and deterministic emitters.
CSV for time series, JSON for matrices and reports; every file is written
to a temporary sibling and renamed into place.
"""

import csv
import io
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, List, Sequence

import numpy as np

from .config import float_format

FLOAT_FORMAT = float_format()


@dataclass(frozen=True)
class TimeSeries:
    """Tabulated (time, value) records; values are scalars or matrices"""
    times: np.ndarray
    values: np.ndarray
    name: str = "value"

    def __post_init__(self):
        if len(self.times) != len(self.values):
            raise ValueError(
                f"TimeSeries '{self.name}': {len(self.times)} times but {len(self.values)} values"
            )

    def __len__(self):
        return len(self.times)

    def at(self, k: int):
        return self.values[k]


def format_float(x: float) -> str:
    """17 significant digits, lowercase scientific"""
    return format(float(x), FLOAT_FORMAT)


def matrix_columns(prefix: str, dim: int) -> List[str]:
    """Row-major re/im column names for a dim x dim matrix"""
    names = []
    for i in range(dim):
        for j in range(dim):
            names.append(f"{prefix}{i}{j}_re")
            names.append(f"{prefix}{i}{j}_im")
    return names


def matrix_cells(m: np.ndarray) -> List[str]:
    """Row-major re/im formatted entries matching matrix_columns"""
    cells = []
    for value in np.asarray(m).reshape(-1):
        cells.append(format_float(value.real))
        cells.append(format_float(value.imag))
    return cells


def matrix_payload(m: np.ndarray) -> dict:
    """JSON-ready form of a complex matrix"""
    m = np.asarray(m)
    return {
        "shape": list(m.shape),
        "re": [[format_float(v) for v in row] for row in m.real],
        "im": [[format_float(v) for v in row] for row in m.imag],
    }


def vector_payload(v: Iterable[float]) -> List[str]:
    return [format_float(x) for x in v]


def _atomic_write(path: Path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=str(path.parent))
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='') as handle:
            handle.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def write_csv_atomic(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]):
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    _atomic_write(path, buffer.getvalue())


def write_json_atomic(path: Path, payload: Any):
    _atomic_write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
