"""CSV ingestion and JSON report writing."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from .errors import EmptyAfterFiltering, MissingColumn, NoNumericData

log = logging.getLogger(__name__)

Column = Union[str, int]


@dataclass
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    column_names: Optional[List[str]] = None
    response_name: Optional[str] = None
    source: str = "synthetic"
    dropped: int = 0

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


def _resolve(header: List[str], col: Column, path) -> int:
    if isinstance(col, (int, np.integer)) or (isinstance(col, str) and col.isdigit() and col not in header):
        idx = int(col)
        if not 0 <= idx < len(header):
            raise MissingColumn(f"column index {idx} out of range in {path} ({len(header)} columns)")
        return idx
    if col not in header:
        raise MissingColumn(f"column {col!r} not found in {path}")
    return header.index(col)


def _to_float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return math.nan


def load_dataset_csv(path, response_column: Column, feature_columns: Optional[Sequence[Column]] = None) -> Dataset:
    """Read a headed CSV file into a :class:`Dataset`.

    The response is picked by name or zero-based index.  Features are the
    listed columns or, by default, every other column.  Cells that do not
    parse as numbers count as missing, and any row with a missing or
    non-finite value is dropped; the number dropped is logged and kept on the
    dataset.

    Raises
    ------
    FileNotFoundError
        ``path`` does not exist.
    MissingColumn
        the response or a listed feature is absent.
    NoNumericData
        no selected column holds any number.
    EmptyAfterFiltering
        every row was dropped.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8-sig") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise NoNumericData(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    yi = _resolve(header, response_column, path)
    if feature_columns is None:
        xi = [j for j in range(len(header)) if j != yi]
    else:
        xi = [_resolve(header, c, path) for c in feature_columns]
    if not xi:
        raise MissingColumn(f"{path} has no feature columns besides the response")
    cols = [yi] + xi
    data = np.full((len(body), len(cols)), np.nan)
    for i, row in enumerate(body):
        for k, j in enumerate(cols):
            if j < len(row):
                data[i, k] = _to_float(row[j].strip())
    if data.size == 0 or not np.isfinite(data).any():
        raise NoNumericData(f"no numeric data in the selected columns of {path}")
    keep = np.isfinite(data).all(axis=1)
    dropped = int((~keep).sum())
    if dropped:
        log.warning("dropped %d of %d rows with missing or non-finite values from %s",
                    dropped, len(body), path)
    data = data[keep]
    if data.shape[0] == 0:
        raise EmptyAfterFiltering(f"every row of {path} was dropped")
    return Dataset(
        X=data[:, 1:], Y=data[:, 0], column_names=[header[j] for j in xi],
        response_name=header[yi], source=str(path), dropped=dropped,
    )


def write_dataset_csv(ds: Dataset, path) -> None:
    """Write ``ds`` with the response first, using round-trip float formatting."""
    names = ds.column_names or [f"x{j + 1}" for j in range(ds.p)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([ds.response_name or "y"] + list(names))
        for y, x in zip(ds.Y, ds.X):
            w.writerow([repr(float(y))] + [repr(float(v)) for v in x])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if not math.isfinite(v):
            return None if math.isnan(v) else ("Infinity" if v > 0 else "-Infinity")
        return v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def dumps_report(report: dict) -> str:
    """JSON text with every float written to 17 significant digits.

    NaN becomes ``null`` and infinities the strings ``"Infinity"`` and
    ``"-Infinity"`` so the output stays strict JSON.
    """
    return _rewrite_floats(_jsonable(report))


def _rewrite_floats(obj, indent: int = 0) -> str:
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {_rewrite_floats(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(_rewrite_floats(v) for v in obj) + "]"
        items = [pad + _rewrite_floats(v, indent + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(obj, float):
        return f"{obj:.17g}" if not obj.is_integer() or abs(obj) >= 1e16 else f"{obj:.1f}"
    return json.dumps(obj)


def write_report(report: dict, path=None) -> str:
    text = dumps_report(report) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
