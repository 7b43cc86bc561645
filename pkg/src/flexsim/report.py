"""Deterministic report artifacts.

Reports are reproducible byte for byte: keys are sorted, floats go through
repr, exact rationals serialize as ``"num/den"`` strings, there are no
timestamps, and every input file is identified by its SHA-256 digest so a
report can be traced back to the exact configs that produced it.
"""

from __future__ import annotations

import csv
import hashlib
import json
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from . import __version__

STAGE_CSV_COLUMNS = (
    "stage",
    "freq_hz",
    "cycles",
    "seconds",
    "bandwidth_bytes_per_s",
    "bandwidth_utilization",
    "binding_terms",
)


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def to_jsonable(value: Any) -> Any:
    """Recursively convert report values into JSON-stable primitives."""
    if isinstance(value, Fraction):
        return f"{value.numerator}/{value.denominator}"
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, Mapping):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if value is None or isinstance(value, (bool, int, float, str)):
        return value
    if hasattr(value, "to_json_dict"):
        return to_jsonable(value.to_json_dict())
    raise TypeError(f"cannot serialize {type(value).__name__} into a report")


def make_report(
    kind: str,
    payload: Any,
    inputs: Mapping[str, str | Path] | None = None,
) -> dict[str, Any]:
    """Wrap a payload with tool provenance and input digests."""
    report: dict[str, Any] = {
        "tool": {"name": "flexsim", "version": __version__},
        "kind": kind,
        "inputs": {
            name: {"path": str(path), "sha256": sha256_file(path)}
            for name, path in sorted((inputs or {}).items())
        },
        "payload": to_jsonable(payload),
    }
    return report


def dumps_json(data: Any) -> str:
    return json.dumps(to_jsonable(data), sort_keys=True, indent=2) + "\n"


def write_json(path: str | Path, data: Any) -> None:
    Path(path).write_text(dumps_json(data))


def write_csv(
    path: str | Path,
    rows: Iterable[Mapping[str, Any]],
    columns: Sequence[str] = STAGE_CSV_COLUMNS,
) -> None:
    """Write rows under a frozen column order; missing cells are empty."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            flat = {}
            for col in columns:
                v = to_jsonable(row.get(col, ""))
                if isinstance(v, (list, dict)):
                    v = json.dumps(v, sort_keys=True)
                flat[col] = v
            writer.writerow(flat)
