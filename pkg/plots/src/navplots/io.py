"""Parsers for the documented artifact formats, with named-column
schema validation."""

from __future__ import annotations

import csv
import json

import numpy as np


class SchemaError(ValueError):
    """Input file does not match its documented schema; the message
    names the offending columns."""


SWEEP_COLUMNS = ["p", "difficulty", "episodes", "sr", "spl", "pr", "ppl"]
DISTANCE_COLUMNS = ["episode", "goal_index", "step", "node_id", "status",
                    "m_a", "m_b", "m_c", "m_d", "m_e"]
LTM_COLUMNS = ["episode", "goal_index", "step", "ltm_delta_l2"]


def _check_columns(path, header: list[str], required: list[str]) -> None:
    missing = [c for c in required if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing columns {', '.join(missing)}")


def read_csv(path, required: list[str]) -> list[dict]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: empty file, expected columns {', '.join(required)}")
        _check_columns(path, list(reader.fieldnames), required)
        return list(reader)


def read_sweep_csv(path) -> list[dict]:
    return read_csv(path, SWEEP_COLUMNS)


def read_distance_csv(path) -> list[dict]:
    return read_csv(path, DISTANCE_COLUMNS)


def read_ltm_csv(path) -> list[dict]:
    return read_csv(path, LTM_COLUMNS)


def read_jsonl(path) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}: bad JSONL at line {lineno}: {exc}") from exc
    return rows


def read_trajectory_jsonl(path) -> list[dict]:
    rows = read_jsonl(path)
    required = {"episode", "goal_index", "step", "pose", "action"}
    for row in rows:
        missing = sorted(required - set(row))
        if missing:
            raise SchemaError(f"{path}: trajectory rows missing keys {', '.join(missing)}")
    return rows


def read_world(path):
    """MGWORLD1 ASCII grid -> (occupancy bool array, cell_size)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip() != ""]
    header = lines[0].split()
    if len(header) != 4 or header[0] != "MGWORLD1":
        raise SchemaError(f"{path}: bad world header {lines[0]!r}")
    width, height, cell_size = int(header[1]), int(header[2]), float(header[3])
    rows = lines[1:]
    if len(rows) != height or any(len(r) != width for r in rows):
        raise SchemaError(f"{path}: grid does not match header dimensions")
    occ = np.array([[ch == "#" for ch in row] for row in rows], dtype=bool)
    return occ, cell_size


def read_dataset(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != "MGEP1":
        raise SchemaError(f"{path}: not an MGEP1 dataset")
    return doc
