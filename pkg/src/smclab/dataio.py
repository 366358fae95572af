"""Table and JSON serialization with byte-stable formatting.

Every float is written with repr-round-trip precision and JSON keys are
sorted, so re-running an experiment with the same configuration and seed
produces byte-identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import ConfigError

FORMAT_VERSION = 1


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return np.format_float_positional(float(value), unique=True, trim="0")


def write_csv(path, header: list[str], rows) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def read_observations(path) -> np.ndarray:
    """Observation series CSV: header y1..yd, one time step per row."""
    path = Path(path)
    with path.open("r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"observation file {path} is empty") from None
        rows = [[float(v) for v in row] for row in reader if row]
    expected = [f"y{i + 1}" for i in range(len(header))]
    if [h.strip() for h in header] != expected:
        raise ConfigError(
            f"observation file {path} must have header {','.join(expected)}"
        )
    if not rows:
        return np.empty((0, len(header)))
    return np.asarray(rows, dtype=float)


def write_observations(path, ys: np.ndarray) -> None:
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    header = [f"y{i + 1}" for i in range(ys.shape[1])]
    write_csv(path, header, ys)


def write_json(path, payload: dict) -> None:
    path = Path(path)
    with path.open("w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def canonical_json(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))
