"""CSV and JSON emission with exact round-trips.

Floats are written with repr (shortest round-trip form), so re-parsing an
emitted file reproduces the in-memory values bit for bit. No timestamps or
environment data are written: identical runs emit identical bytes.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

__all__ = ["write_csv", "read_csv", "parse_cell", "write_json", "read_json", "scalar"]


def scalar(value):
    """Coerce numpy scalars to plain Python so repr/JSON stay canonical."""
    if hasattr(value, "item"):
        return value.item()
    return value


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([scalar(cell) for cell in row])


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        return header, [row for row in reader]


def parse_cell(text: str):
    """Invert write_csv's formatting: int, then float, then string."""
    for kind in (int, float):
        try:
            return kind(text)
        except ValueError:
            continue
    return text


def write_json(path, payload) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True, default=scalar)
        handle.write("\n")


def read_json(path):
    with open(path) as handle:
        return json.load(handle)
