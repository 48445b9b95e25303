#!filepath: src/weakfbsde_app/records.py
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from weakfbsde_app.errors import ConfigurationError
from weakfbsde_app.utils.logger import get_logger

logger = get_logger(__name__)

HEADER_PREFIX = "# "
FLOAT_FORMAT = "%.17g"


@dataclass(frozen=True, slots=True)
class ColumnarFile:
    """A columnar text file: one JSON header line, then whitespace-separated rows.

    Args:
        header: Metadata stored in the header line.
        columns: Column names, in row order.
        data: Row array of shape (rows, len(columns)).
    """

    header: Mapping[str, Any]
    columns: tuple[str, ...]
    data: np.ndarray

    def column(self, name: str) -> np.ndarray:
        try:
            return self.data[:, self.columns.index(name)]
        except ValueError:
            raise KeyError(name) from None


def _to_jsonable(value: Any) -> Any:
    if isinstance(value, Mapping):
        return {str(k): _to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    return str(value)


def write_columnar(path: Path, header: Mapping[str, Any], columns: Sequence[str], data: np.ndarray) -> Path:
    """Write rows with full float precision; identical inputs give identical bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.asarray(data, dtype=float).reshape(-1, len(columns))
    meta = {**_to_jsonable(header), "columns": list(columns)}
    head = json.dumps(meta, sort_keys=True, separators=(",", ":"))
    with path.open("w", encoding="utf-8") as fh:
        fh.write(HEADER_PREFIX + head + "\n")
        np.savetxt(fh, data, fmt=FLOAT_FORMAT)
    logger.info(f"Wrote {data.shape[0]} rows to {path}")
    return path


def read_columnar(path: Path) -> ColumnarFile:
    """Read a file written by write_columnar.

    Raises:
        ConfigurationError: Missing file or malformed header.
    """
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as fh:
            first = fh.readline()
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc}", path=str(path)) from exc
    if not first.startswith(HEADER_PREFIX):
        raise ConfigurationError(f"{path} has no header line", path=str(path))
    try:
        header = json.loads(first[len(HEADER_PREFIX) :])
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"malformed header in {path}: {exc}", path=str(path)) from exc
    columns = tuple(header.pop("columns", ()))
    data = np.loadtxt(path, comments="#", ndmin=2)
    if data.size == 0:
        data = np.zeros((0, len(columns)))
    return ColumnarFile(header=header, columns=columns, data=data)


def append_jsonl(path: Path, records: Iterable[Mapping[str, Any]]) -> Path:
    """Append one sorted-key JSON object per record."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(_to_jsonable(rec), sort_keys=True) + "\n")
    return path


def write_jsonl(path: Path, records: Iterable[Mapping[str, Any]]) -> Path:
    path = Path(path)
    if path.exists():
        path.unlink()
    return append_jsonl(path, records)


def read_jsonl(path: Path) -> list[dict[str, Any]]:
    path = Path(path)
    out: list[dict[str, Any]] = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line:
            out.append(json.loads(line))
    return out
